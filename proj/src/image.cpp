#include "sketchfill/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sketchfill {

size_t Bitmap::count() const {
  return static_cast<size_t>(std::count(data_.begin(), data_.end(), uint8_t{1}));
}

Bitmap Bitmap::operator&(const Bitmap& o) const {
  if (!same_shape(o)) throw ContractError("Bitmap &: shape mismatch");
  Bitmap r(width_, height_);
  for (size_t i = 0; i < data_.size(); ++i) r.data_[i] = data_[i] & o.data_[i];
  return r;
}

Bitmap Bitmap::operator|(const Bitmap& o) const {
  if (!same_shape(o)) throw ContractError("Bitmap |: shape mismatch");
  Bitmap r(width_, height_);
  for (size_t i = 0; i < data_.size(); ++i) r.data_[i] = data_[i] | o.data_[i];
  return r;
}

Bitmap Bitmap::operator~() const {
  Bitmap r(width_, height_);
  for (size_t i = 0; i < data_.size(); ++i) r.data_[i] = data_[i] ? 0 : 1;
  return r;
}

Box::Span Box::pixels() const {
  // Pixel p is covered when x0 <= p + 0.5 < x1.
  auto lo = [](double a) { return static_cast<int>(std::ceil(a - 0.5)); };
  return Span{lo(x0), lo(y0), lo(x1), lo(y1)};
}

Image luma01(const Image& rgb) {
  if (rgb.channels() != 3) throw ContractError("luma01: expected RGB image");
  Image out(rgb.width(), rgb.height(), 1);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      float l = 0.299f * rgb.at(y, x, 0) + 0.587f * rgb.at(y, x, 1) + 0.114f * rgb.at(y, x, 2);
      out.at(y, x) = 0.5f * (l + 1.0f);
    }
  }
  return out;
}

Image resize_bilinear(const Image& src, int width, int height) {
  if (src.empty() || src.width() == 0 || src.height() == 0) {
    throw ContractError("resize: zero-area input");
  }
  if (width <= 0 || height <= 0) throw ContractError("resize: invalid target size");
  if (src.width() == width && src.height() == height) return src;

  Image out(width, height, src.channels());
  const double sx = double(src.width()) / width;
  const double sy = double(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height() - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, src.height() - 1);
    double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width() - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, src.width() - 1);
      double wx = fx - x0;
      for (int c = 0; c < src.channels(); ++c) {
        double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image crop(const Image& src, const Box& box) {
  auto s = box.pixels();
  s.x0 = std::max(s.x0, 0);
  s.y0 = std::max(s.y0, 0);
  s.x1 = std::min(s.x1, src.width());
  s.y1 = std::min(s.y1, src.height());
  if (s.width() <= 0 || s.height() <= 0) throw ContractError("crop: degenerate box");
  Image out(s.width(), s.height(), src.channels());
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x)
      for (int c = 0; c < src.channels(); ++c) out.at(y, x, c) = src.at(s.y0 + y, s.x0 + x, c);
  return out;
}

Bitmap rectangle_bitmap(int width, int height, const Box& box) {
  Bitmap b(width, height);
  auto s = box.pixels();
  for (int y = std::max(s.y0, 0); y < std::min(s.y1, height); ++y)
    for (int x = std::max(s.x0, 0); x < std::min(s.x1, width); ++x) b.set(y, x, true);
  return b;
}

namespace {

template <bool Dilate>
Bitmap morph3x3(const Bitmap& b) {
  Bitmap r(b.width(), b.height());
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < b.width(); ++x) {
      bool acc = !Dilate;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = y + dy, xx = x + dx;
          bool v = (yy >= 0 && yy < b.height() && xx >= 0 && xx < b.width()) ? b.at(yy, xx) : false;
          if constexpr (Dilate) acc = acc || v;
          else acc = acc && v;
        }
      }
      r.set(y, x, acc);
    }
  }
  return r;
}

}  // namespace

Bitmap dilate3x3(const Bitmap& b) { return morph3x3<true>(b); }
Bitmap erode3x3(const Bitmap& b) { return morph3x3<false>(b); }

void clamp_inplace(Image& img, float lo, float hi) {
  for (float& v : img.data()) v = std::clamp(v, lo, hi);
}

}  // namespace sketchfill
