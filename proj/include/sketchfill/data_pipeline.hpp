#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sketchfill/image.hpp"
#include "sketchfill/reference_image.hpp"
#include "sketchfill/rng.hpp"

namespace sketchfill {

/// One self-supervised instance {x_p, m, s, x_r}.
/// Invariants: sketch is zero outside the mask; 0.02 <= mask fraction <= 0.5.
struct EditSample {
  Image x_p;
  Bitmap mask;
  Bitmap sketch;
  ReferenceImage reference;
  Box bbox;
};

using EdgeDetector = std::function<Bitmap(const Image&)>;

struct ReferenceAugment {
  bool flip = true;     // horizontal flip with p = 0.5
  double jitter = 0.1;  // brightness/contrast amplitude
};

struct SampleOptions {
  double min_frac = 0.1;
  double max_frac = 0.5;
  double jitter_frac = 0.1;
  double sketch_threshold = 0.2;
  double min_mask_area = 0.02;
  double max_mask_area = 0.5;
  int reference_size = 32;
  ReferenceAugment augment;
  EdgeDetector detector;  // empty -> extract_sketch(image, sketch_threshold)
};

/// Random RoI with side fractions in [min_frac, max_frac], fully inside the image.
/// Sides are continuous; the top-left corner is on the integer grid.
Box sample_roi(int height, int width, Rng& rng, double min_frac = 0.1, double max_frac = 0.5);

/// Drawn-like mask around `bbox`: 4-8 jittered points per edge joined by quadratic
/// Bezier segments, rasterized, filled and reduced to one 4-connected component.
/// Outward displacement is at most jitter_frac of the bbox side, inward half of that,
/// so the interior keeps more than 80% of the box. jitter_frac = 0 gives the rectangle.
Bitmap augment_mask(const Box& bbox, int height, int width, Rng& rng, double jitter_frac = 0.1);

/// Sobel gradient magnitude on luma, divided by the image maximum, thresholded.
Bitmap extract_sketch(const Image& image, double low_threshold = 0.2);

Image sobel_magnitude(const Image& gray);

ReferenceImage make_reference(const Image& x_p, const Box& bbox, Rng& rng,
                              const ReferenceAugment& augment = {}, int size = 32);

EditSample make_training_example(const Image& x_p, Rng& rng, const SampleOptions& opts = {});

// --- procedural corpus -------------------------------------------------------

enum class ShapeKind { circle, triangle, rectangle, crescent };

struct Shape {
  ShapeKind kind = ShapeKind::circle;
  float color[3] = {0, 0, 0};
  double cx = 0, cy = 0;
  double radius = 0;        // circle / crescent / triangle circumradius
  double half_w = 0, half_h = 0, angle = 0;  // rectangle
  double vertex_angles[3] = {0, 0, 0};       // triangle
  double cut_dx = 0, cut_dy = 0, cut_radius = 0;  // crescent bite
  Box bounds;

  bool contains(double x, double y) const;
};

struct Scene {
  int size = 64;
  float bg_from[3] = {0, 0, 0};
  float bg_to[3] = {0, 0, 0};
  double gradient_angle = 0;
  std::vector<Shape> shapes;
};

Scene random_scene(int size, Rng& rng);
Image render_scene(const Scene& scene);
Image render_shapes(int size, const std::vector<Shape>& shapes, const float background[3]);

enum class Split { train, test };
const char* to_string(Split s);

struct ManifestEntry {
  std::string path;  // relative to the corpus root
  Split split = Split::train;
  uint64_t seed = 0;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;

  size_t count(Split s) const;
  void save(const std::filesystem::path& file) const;
  static CorpusManifest load(const std::filesystem::path& file);
};

struct CorpusOptions {
  int test_every = 11;  // index % test_every == test_every - 1 goes to test (10:1 split)
  bool overwrite = false;
};

/// Writes images/NNNNNN.png plus manifest.jsonl under `out`.
CorpusManifest synth_corpus(int n, int size, uint64_t seed, const std::filesystem::path& out,
                            const CorpusOptions& opts = {});

struct Corpus {
  std::filesystem::path root;
  CorpusManifest manifest;
  std::vector<Image> train;
  std::vector<Image> test;
  std::vector<uint64_t> test_seeds;

  static Corpus load(const std::filesystem::path& root);
};

}  // namespace sketchfill
