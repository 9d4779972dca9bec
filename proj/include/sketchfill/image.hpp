#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sketchfill {

/// Raised when a caller violates a shape or value contract.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for invalid configuration values (schedules, RoI ranges, presets).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Interleaved float image, row-major HWC. RGB images use the [-1, 1] range.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f)
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) {
      throw ContractError("Image: invalid dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  float& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  size_t index(int y, int x, int c) const {
    return (static_cast<size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Binary H x W map (mask or sketch). Values are exactly 0 or 1.
class Bitmap {
 public:
  Bitmap() = default;
  Bitmap(int width, int height, uint8_t fill = 0)
      : width_(width), height_(height),
        data_(static_cast<size_t>(width) * height, fill ? 1 : 0) {
    if (width < 0 || height < 0) throw ContractError("Bitmap: invalid dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  size_t size() const { return data_.size(); }

  uint8_t at(int y, int x) const { return data_[static_cast<size_t>(y) * width_ + x]; }
  void set(int y, int x, bool v) { data_[static_cast<size_t>(y) * width_ + x] = v ? 1 : 0; }

  std::span<const uint8_t> data() const { return data_; }

  size_t count() const;
  bool any() const { return count() > 0; }
  double fraction() const { return data_.empty() ? 0.0 : double(count()) / double(data_.size()); }

  bool same_shape(const Bitmap& o) const { return width_ == o.width_ && height_ == o.height_; }
  bool same_shape(const Image& o) const { return width_ == o.width() && height_ == o.height(); }

  Bitmap operator&(const Bitmap& o) const;
  Bitmap operator|(const Bitmap& o) const;
  Bitmap operator~() const;

  friend bool operator==(const Bitmap&, const Bitmap&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<uint8_t> data_;
};

/// Axis-aligned box in continuous pixel coordinates, [x0, x1) x [y0, y1).
/// A pixel belongs to the box when its center lies inside.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool degenerate() const { return !(x1 > x0) || !(y1 > y0); }

  /// Integer pixel span [px0, px1) x [py0, py1) of the covered pixel centers.
  struct Span {
    int x0, y0, x1, y1;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
  };
  Span pixels() const;
  bool inside(int width, int height) const {
    return x0 >= 0 && y0 >= 0 && x1 <= width && y1 <= height;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Luma of an RGB [-1, 1] image mapped to [0, 1].
Image luma01(const Image& rgb);

/// Bilinear resize with half-pixel centers; identity when the size already matches.
Image resize_bilinear(const Image& src, int width, int height);

/// Copies the pixel span of `box` into a new image.
Image crop(const Image& src, const Box& box);

Bitmap rectangle_bitmap(int width, int height, const Box& box);
Bitmap dilate3x3(const Bitmap& b);
Bitmap erode3x3(const Bitmap& b);

void clamp_inplace(Image& img, float lo = -1.0f, float hi = 1.0f);

}  // namespace sketchfill
