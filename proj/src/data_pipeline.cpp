#include "sketchfill/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "sketchfill/png_io.hpp"

namespace sketchfill {

namespace fs = std::filesystem;

Box sample_roi(int height, int width, Rng& rng, double min_frac, double max_frac) {
  if (height < 16 || width < 16) throw ConfigError("sample_roi: image must be at least 16x16");
  if (!(min_frac > 0.0) || !(min_frac <= max_frac) || !(max_frac <= 1.0)) {
    throw ConfigError("sample_roi: need 0 < min_frac <= max_frac <= 1");
  }
  double fw = uniform(rng, min_frac, max_frac);
  double fh = uniform(rng, min_frac, max_frac);
  double bw = fw * width, bh = fh * height;
  int x0 = uniform_int(rng, 0, static_cast<int>(std::floor(width - bw)));
  int y0 = uniform_int(rng, 0, static_cast<int>(std::floor(height - bh)));
  return Box{double(x0), double(y0), x0 + bw, y0 + bh};
}

namespace {

struct Pt {
  double x, y;
};

// Even-odd point in polygon.
bool inside_polygon(const std::vector<Pt>& poly, double x, double y) {
  bool in = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Pt& a = poly[i];
    const Pt& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      double xc = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x < xc) in = !in;
    }
  }
  return in;
}

Bitmap largest_component(const Bitmap& b) {
  const int w = b.width(), h = b.height();
  std::vector<int> label(b.size(), -1);
  int best = -1;
  size_t best_size = 0;
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < w * h; ++start) {
    if (!b.data()[start] || label[start] >= 0) continue;
    size_t sz = 0;
    label[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      int p = queue.front();
      queue.pop_front();
      ++sz;
      int px = p % w, py = p / w;
      const int nx[4] = {px - 1, px + 1, px, px};
      const int ny[4] = {py, py, py - 1, py + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
        int q = ny[k] * w + nx[k];
        if (b.data()[q] && label[q] < 0) {
          label[q] = next;
          queue.push_back(q);
        }
      }
    }
    if (sz > best_size) {
      best_size = sz;
      best = next;
    }
    ++next;
  }
  Bitmap out(w, h);
  for (int p = 0; p < w * h; ++p) out.set(p / w, p % w, label[p] == best && best >= 0);
  return out;
}

}  // namespace

Bitmap augment_mask(const Box& bbox, int height, int width, Rng& rng, double jitter_frac) {
  if (bbox.degenerate()) throw ContractError("augment_mask: degenerate bbox");
  if (jitter_frac < 0) throw ContractError("augment_mask: negative jitter");
  if (jitter_frac == 0.0) return rectangle_bitmap(width, height, bbox);

  const double bw = bbox.width(), bh = bbox.height();
  // Clockwise edges; each edge runs from corner[e] to corner[e+1] with an outward normal.
  const std::array<Pt, 5> corner = {Pt{bbox.x0, bbox.y0}, Pt{bbox.x1, bbox.y0}, Pt{bbox.x1, bbox.y1},
                                    Pt{bbox.x0, bbox.y1}, Pt{bbox.x0, bbox.y0}};
  const std::array<Pt, 4> normal = {Pt{0, -1}, Pt{1, 0}, Pt{0, 1}, Pt{-1, 0}};
  const std::array<double, 4> side = {bh, bw, bh, bw};

  auto offset = [&](int edge) {
    double amp = jitter_frac * side[edge];
    return uniform(rng, -0.5 * amp, amp);
  };

  std::vector<Pt> outline;
  for (int e = 0; e < 4; ++e) {
    const Pt a = corner[e], b = corner[e + 1];
    const int n = uniform_int(rng, 4, 8);
    std::vector<Pt> verts{a};
    for (int i = 1; i <= n; ++i) {
      double t = double(i) / (n + 1);
      double d = offset(e);
      verts.push_back({a.x + (b.x - a.x) * t + normal[e].x * d, a.y + (b.y - a.y) * t + normal[e].y * d});
    }
    verts.push_back(b);
    for (size_t i = 0; i + 1 < verts.size(); ++i) {
      const Pt p0 = verts[i], p2 = verts[i + 1];
      // Control point offset is absolute from the edge line, so the curve stays in the band.
      const Pt mid{0.5 * (p0.x + p2.x), 0.5 * (p0.y + p2.y)};
      const double shift = offset(e) - ((mid.x - a.x) * normal[e].x + (mid.y - a.y) * normal[e].y);
      const Pt c{mid.x + normal[e].x * shift, mid.y + normal[e].y * shift};
      constexpr int kSub = 8;
      for (int s = 0; s < kSub; ++s) {
        double t = double(s) / kSub, u = 1 - t;
        outline.push_back({u * u * p0.x + 2 * u * t * c.x + t * t * p2.x,
                           u * u * p0.y + 2 * u * t * c.y + t * t * p2.y});
      }
    }
  }

  Bitmap mask(width, height);
  const int ylo = std::max(0, int(std::floor(bbox.y0 - jitter_frac * bh)) - 1);
  const int yhi = std::min(height, int(std::ceil(bbox.y1 + jitter_frac * bh)) + 1);
  const int xlo = std::max(0, int(std::floor(bbox.x0 - jitter_frac * bw)) - 1);
  const int xhi = std::min(width, int(std::ceil(bbox.x1 + jitter_frac * bw)) + 1);
  for (int y = ylo; y < yhi; ++y)
    for (int x = xlo; x < xhi; ++x) mask.set(y, x, inside_polygon(outline, x + 0.5, y + 0.5));
  return largest_component(mask);
}

Image sobel_magnitude(const Image& gray) {
  if (gray.channels() != 1) throw ContractError("sobel_magnitude: expected one channel");
  const int w = gray.width(), h = gray.height();
  Image out(w, h, 1);
  auto px = [&](int y, int x) {
    return gray.at(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                 (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      float gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                 (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      out.at(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

Bitmap extract_sketch(const Image& image, double low_threshold) {
  const Image mag = sobel_magnitude(image.channels() == 3 ? luma01(image) : image);
  Bitmap out(image.width(), image.height());
  const auto d = mag.data();
  const float peak = d.empty() ? 0.0f : *std::max_element(d.begin(), d.end());
  // Float noise on flat images must not promote to edges.
  if (peak <= 1e-6f) return out;
  for (int y = 0; y < mag.height(); ++y)
    for (int x = 0; x < mag.width(); ++x) out.set(y, x, mag.at(y, x) / peak > low_threshold);
  return out;
}

ReferenceImage make_reference(const Image& x_p, const Box& bbox, Rng& rng,
                              const ReferenceAugment& augment, int size) {
  if (bbox.degenerate() || !bbox.inside(x_p.width(), x_p.height())) {
    throw ContractError("make_reference: bbox must be non-degenerate and inside the image");
  }
  Image patch = crop(x_p, bbox);
  const bool flip = coin(rng);
  const double contrast = uniform(rng, 1.0 - augment.jitter, 1.0 + augment.jitter);
  const double brightness = uniform(rng, -augment.jitter, augment.jitter);
  if (augment.flip && flip) {
    for (int y = 0; y < patch.height(); ++y)
      for (int x = 0; x < patch.width() / 2; ++x)
        for (int c = 0; c < patch.channels(); ++c)
          std::swap(patch.at(y, x, c), patch.at(y, patch.width() - 1 - x, c));
  }
  if (augment.jitter > 0) {
    for (float& v : patch.data()) {
      v = std::clamp(static_cast<float>(contrast * v + 2.0 * brightness), -1.0f, 1.0f);
    }
  }
  return resize_reference(patch, size, ReferenceSource::external);
}

EditSample make_training_example(const Image& x_p, Rng& rng, const SampleOptions& opts) {
  const int h = x_p.height(), w = x_p.width();
  EditSample s;
  s.x_p = x_p;
  bool ok = false;
  for (int attempt = 0; attempt < 16 && !ok; ++attempt) {
    s.bbox = sample_roi(h, w, rng, opts.min_frac, opts.max_frac);
    s.mask = augment_mask(s.bbox, h, w, rng, opts.jitter_frac);
    const double f = s.mask.fraction();
    ok = f >= opts.min_mask_area && f <= opts.max_mask_area;
  }
  if (!ok) {
    // Quarter-size boxes always satisfy the default area band.
    s.bbox = sample_roi(h, w, rng, 0.25, 0.25);
    s.mask = augment_mask(s.bbox, h, w, rng, 0.0);
  }
  const Bitmap edges =
      opts.detector ? opts.detector(x_p) : extract_sketch(x_p, opts.sketch_threshold);
  s.sketch = edges & s.mask;
  s.reference = make_reference(x_p, s.bbox, rng, opts.augment, opts.reference_size);
  return s;
}

// --- procedural corpus -------------------------------------------------------

bool Shape::contains(double x, double y) const {
  switch (kind) {
    case ShapeKind::circle:
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius;
    case ShapeKind::crescent: {
      bool in = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius;
      double bx = cx + cut_dx, by = cy + cut_dy;
      return in && (x - bx) * (x - bx) + (y - by) * (y - by) > cut_radius * cut_radius;
    }
    case ShapeKind::rectangle: {
      double c = std::cos(angle), s = std::sin(angle);
      double u = (x - cx) * c + (y - cy) * s;
      double v = -(x - cx) * s + (y - cy) * c;
      return std::abs(u) <= half_w && std::abs(v) <= half_h;
    }
    case ShapeKind::triangle: {
      Pt p[3];
      for (int i = 0; i < 3; ++i) {
        p[i] = {cx + radius * std::cos(vertex_angles[i]), cy + radius * std::sin(vertex_angles[i])};
      }
      auto cross = [](Pt a, Pt b, double qx, double qy) {
        return (b.x - a.x) * (qy - a.y) - (b.y - a.y) * (qx - a.x);
      };
      double d0 = cross(p[0], p[1], x, y), d1 = cross(p[1], p[2], x, y), d2 = cross(p[2], p[0], x, y);
      bool neg = d0 < 0 || d1 < 0 || d2 < 0;
      bool pos = d0 > 0 || d1 > 0 || d2 > 0;
      return !(neg && pos);
    }
  }
  return false;
}

namespace {

double luma_of(const float c[3]) { return 0.5 * (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2] + 1.0); }

void random_color(Rng& rng, float out[3]) {
  for (int i = 0; i < 3; ++i) out[i] = static_cast<float>(uniform(rng, -1.0, 1.0));
}

Shape random_shape(int size, Rng& rng, bool fully_inside) {
  Shape s;
  s.kind = static_cast<ShapeKind>(uniform_int(rng, 0, 3));
  const double r = uniform(rng, 0.1, 0.25) * size;
  const double margin = fully_inside ? r + 1.0 : 0.0;
  s.cx = uniform(rng, margin, size - margin);
  s.cy = uniform(rng, margin, size - margin);
  s.radius = r;
  switch (s.kind) {
    case ShapeKind::circle:
      break;
    case ShapeKind::crescent: {
      double a = uniform(rng, 0, 2 * std::numbers::pi);
      double d = uniform(rng, 0.4, 0.6) * r;
      s.cut_dx = d * std::cos(a);
      s.cut_dy = d * std::sin(a);
      s.cut_radius = 0.8 * r;
      break;
    }
    case ShapeKind::rectangle:
      // Corners stay on the circle of radius r.
      {
        s.angle = uniform(rng, 0, std::numbers::pi);
        double a = uniform(rng, 0.15, 0.35) * std::numbers::pi;
        s.half_w = r * std::cos(a);
        s.half_h = r * std::sin(a);
      }
      break;
    case ShapeKind::triangle: {
      double base = uniform(rng, 0, 2 * std::numbers::pi);
      for (int i = 0; i < 3; ++i) {
        s.vertex_angles[i] = base + i * 2 * std::numbers::pi / 3 + uniform(rng, -0.35, 0.35);
      }
      break;
    }
  }
  s.bounds = Box{s.cx - r, s.cy - r, s.cx + r, s.cy + r};
  return s;
}

}  // namespace

Scene random_scene(int size, Rng& rng) {
  Scene sc;
  sc.size = size;
  random_color(rng, sc.bg_from);
  random_color(rng, sc.bg_to);
  sc.gradient_angle = uniform(rng, 0, 2 * std::numbers::pi);
  float mid[3];
  for (int i = 0; i < 3; ++i) mid[i] = 0.5f * (sc.bg_from[i] + sc.bg_to[i]);
  const int n = uniform_int(rng, 2, 5);
  for (int i = 0; i < n; ++i) {
    Shape s = random_shape(size, rng, i == 0);
    // Keep shapes distinguishable from the background so edges survive thresholding.
    for (int tries = 0; tries < 32; ++tries) {
      random_color(rng, s.color);
      if (std::abs(luma_of(s.color) - luma_of(mid)) >= 0.25) break;
    }
    sc.shapes.push_back(s);
  }
  return sc;
}

namespace {

Image render(int size, const std::vector<Shape>& shapes,
             const std::function<void(int, int, float*)>& background) {
  Image img(size, size, 3);
  constexpr int kSS = 4;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float px[3];
      background(y, x, px);
      for (const Shape& s : shapes) {
        if (x + 1 < s.bounds.x0 || x > s.bounds.x1 || y + 1 < s.bounds.y0 || y > s.bounds.y1) continue;
        int hits = 0;
        for (int sy = 0; sy < kSS; ++sy)
          for (int sx = 0; sx < kSS; ++sx)
            hits += s.contains(x + (sx + 0.5) / kSS, y + (sy + 0.5) / kSS);
        const float a = float(hits) / (kSS * kSS);
        for (int c = 0; c < 3; ++c) px[c] = (1 - a) * px[c] + a * s.color[c];
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = px[c];
    }
  }
  return img;
}

}  // namespace

Image render_scene(const Scene& sc) {
  const double dx = std::cos(sc.gradient_angle), dy = std::sin(sc.gradient_angle);
  const double half = 0.5 * sc.size;
  const double reach = half * (std::abs(dx) + std::abs(dy));
  return render(sc.size, sc.shapes, [&](int y, int x, float* px) {
    double t = ((x + 0.5 - half) * dx + (y + 0.5 - half) * dy) / (2 * reach) + 0.5;
    for (int c = 0; c < 3; ++c) px[c] = static_cast<float>((1 - t) * sc.bg_from[c] + t * sc.bg_to[c]);
  });
}

Image render_shapes(int size, const std::vector<Shape>& shapes, const float background[3]) {
  return render(size, shapes, [&](int, int, float* px) {
    for (int c = 0; c < 3; ++c) px[c] = background[c];
  });
}

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

size_t CorpusManifest::count(Split s) const {
  return static_cast<size_t>(
      std::count_if(entries.begin(), entries.end(), [s](const ManifestEntry& e) { return e.split == s; }));
}

void CorpusManifest::save(const fs::path& file) const {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + file.string());
  for (const auto& e : entries) {
    nlohmann::json j = {{"path", e.path}, {"split", to_string(e.split)}, {"seed", e.seed}};
    out << j.dump() << '\n';
  }
}

CorpusManifest CorpusManifest::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read manifest " + file.string());
  CorpusManifest m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.path = j.at("path").get<std::string>();
    const auto split = j.at("split").get<std::string>();
    if (split != "train" && split != "test") throw IoError("manifest: bad split '" + split + "'");
    e.split = split == "train" ? Split::train : Split::test;
    e.seed = j.at("seed").get<uint64_t>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

CorpusManifest synth_corpus(int n, int size, uint64_t seed, const fs::path& out,
                            const CorpusOptions& opts) {
  if (n < 1) throw ConfigError("synth_corpus: n must be >= 1");
  if (size < 16) throw ConfigError("synth_corpus: size must be >= 16");
  if (opts.test_every < 2) throw ConfigError("synth_corpus: test_every must be >= 2");
  if (fs::exists(out) && !fs::is_empty(out) && !opts.overwrite) {
    throw IoError("refusing to overwrite non-empty " + out.string() + " (use --force)");
  }
  if (opts.overwrite && fs::exists(out / "images")) fs::remove_all(out / "images");
  fs::create_directories(out / "images");

  CorpusManifest m;
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.seed = derive_seed(seed, static_cast<uint64_t>(i));
    e.split = (i % opts.test_every == opts.test_every - 1) ? Split::test : Split::train;
    char name[32];
    std::snprintf(name, sizeof name, "images/%06d.png", i);
    e.path = name;
    Rng rng(e.seed);
    write_png(out / e.path, render_scene(random_scene(size, rng)));
    m.entries.push_back(std::move(e));
  }
  m.save(out / "manifest.jsonl");
  return m;
}

Corpus Corpus::load(const fs::path& root) {
  Corpus c;
  c.root = root;
  c.manifest = CorpusManifest::load(root / "manifest.jsonl");
  for (const auto& e : c.manifest.entries) {
    Image img = read_png_rgb(root / e.path);
    if (e.split == Split::train) {
      c.train.push_back(std::move(img));
    } else {
      c.test.push_back(std::move(img));
      c.test_seeds.push_back(e.seed);
    }
  }
  return c;
}

}  // namespace sketchfill
