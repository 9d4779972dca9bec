#include <gtest/gtest.h>

#include <array>
#include <fstream>
#include <queue>
#include <set>

#include "sketchfill/data_pipeline.hpp"
#include "sketchfill/png_io.hpp"
#include "test_support.hpp"

using namespace sketchfill;

namespace {

// Components of `on` pixels; 8-connectivity when `eight`, else 4.
int count_components(const Bitmap& b, bool value, bool eight, bool skip_border_touching) {
  const int w = b.width(), h = b.height();
  std::vector<uint8_t> seen(static_cast<size_t>(w) * h, 0);
  int count = 0;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      if (bool(b.at(y0, x0)) != value || seen[y0 * w + x0]) continue;
      bool border = false;
      std::queue<std::pair<int, int>> q;
      q.push({y0, x0});
      seen[y0 * w + x0] = 1;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        if (y == 0 || x == 0 || y == h - 1 || x == w - 1) border = true;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0)) continue;
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            if (bool(b.at(yy, xx)) != value || seen[yy * w + xx]) continue;
            seen[yy * w + xx] = 1;
            q.push({yy, xx});
          }
        }
      }
      if (!(skip_border_touching && border)) ++count;
    }
  }
  return count;
}

Image step_image(int size, int k) {
  Image img(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = x < k ? -1.0f : 1.0f;
  return img;
}

}  // namespace

// ---------------------------------------------------------------- sample_roi

TEST(SampleRoi, DegenerateRangeGivesFixedSize) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    Box b = sample_roi(64, 64, rng, 0.5, 0.5);
    EXPECT_DOUBLE_EQ(b.width(), 32.0);
    EXPECT_DOUBLE_EQ(b.height(), 32.0);
    EXPECT_TRUE(b.inside(64, 64));
    auto span = b.pixels();
    EXPECT_EQ(span.width(), 32);
    EXPECT_EQ(span.height(), 32);
  }
}

TEST(SampleRoi, SideFractionsUniformPerDecile) {
  Rng rng(2);
  const int n = 10000;
  std::array<int, 10> w_hist{}, h_hist{};
  for (int i = 0; i < n; ++i) {
    Box b = sample_roi(64, 64, rng);
    ASSERT_TRUE(b.inside(64, 64));
    const double fw = b.width() / 64, fh = b.height() / 64;
    ASSERT_GE(fw, 0.1);
    ASSERT_LE(fw, 0.5);
    ASSERT_GE(fh, 0.1);
    ASSERT_LE(fh, 0.5);
    ++w_hist[std::min(9, int((fw - 0.1) / 0.04))];
    ++h_hist[std::min(9, int((fh - 0.1) / 0.04))];
  }
  for (int d = 0; d < 10; ++d) {
    EXPECT_NEAR(double(w_hist[d]) / n, 0.1, 0.05) << "width decile " << d;
    EXPECT_NEAR(double(h_hist[d]) / n, 0.1, 0.05) << "height decile " << d;
  }
}

TEST(SampleRoi, SeedReproducible) {
  Rng a(3), b(3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_roi(64, 48, a), sample_roi(64, 48, b));
}

TEST(SampleRoi, RejectsInvalidInput) {
  Rng rng(0);
  EXPECT_THROW(sample_roi(8, 64, rng), ConfigError);
  EXPECT_THROW(sample_roi(64, 64, rng, 0.5, 0.1), ConfigError);
  EXPECT_THROW(sample_roi(64, 64, rng, 0.0, 0.5), ConfigError);
  EXPECT_THROW(sample_roi(64, 64, rng, 0.2, 1.5), ConfigError);
}

// ---------------------------------------------------------------- augment_mask

TEST(AugmentMask, ZeroJitterIsRectangle) {
  Rng rng(4);
  Box b{10.0, 12.0, 30.5, 40.25};
  EXPECT_EQ(augment_mask(b, 64, 64, rng, 0.0), rectangle_bitmap(64, 64, b));
}

TEST(AugmentMask, PropertiesOverThousandDraws) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    Box b = sample_roi(64, 64, rng);
    Bitmap m = augment_mask(b, 64, 64, rng, 0.1);
    // Single 4-connected component.
    ASSERT_EQ(count_components(m, true, false, false), 1) << "draw " << i;
    // Inside the bbox grown by the jitter amplitude.
    Box grown{b.x0 - 0.1 * b.width(), b.y0 - 0.1 * b.height(), b.x1 + 0.1 * b.width(), b.y1 + 0.1 * b.height()};
    Bitmap allowed = rectangle_bitmap(64, 64, grown);
    ASSERT_EQ((m & ~allowed).count(), 0u) << "draw " << i;
    // Covers at least 80% of the box.
    Bitmap box = rectangle_bitmap(64, 64, b);
    ASSERT_GE(double((m & box).count()) / double(box.count()), 0.8) << "draw " << i;
  }
}

// ---------------------------------------------------------------- extract_sketch

TEST(ExtractSketch, ConstantImageIsEmpty) {
  Image flat(32, 32, 3, 0.3f);
  EXPECT_EQ(extract_sketch(flat).count(), 0u);
}

TEST(ExtractSketch, StepEdgeColumns) {
  for (int k : {5, 16, 27}) {
    Bitmap s = extract_sketch(step_image(32, k));
    EXPECT_GT(s.count(), 0u);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (s.at(y, x)) EXPECT_TRUE(x >= k - 1 && x <= k + 1) << "k=" << k << " x=" << x;
  }
}

TEST(ExtractSketch, Idempotent) {
  Image img = fixtures::scene_image(64, 6);
  EXPECT_EQ(extract_sketch(img), extract_sketch(img));
}

// ---------------------------------------------------------------- make_reference

TEST(MakeReference, NoAugmentationIsResizedCrop) {
  Image img = fixtures::scene_image(64, 7);
  Box b{8, 8, 40, 28};
  Rng rng(1);
  auto r = make_reference(img, b, rng, ReferenceAugment{false, 0.0}, 32);
  EXPECT_EQ(r.pixels, resize_reference(crop(img, b), 32).pixels);
}

TEST(MakeReference, JitteredValuesStayInRange) {
  Image img = fixtures::random_image(64, 8);
  for (uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Box b = sample_roi(64, 64, rng);
    auto r = make_reference(img, b, rng, ReferenceAugment{true, 0.1});
    for (float v : r.pixels.data()) {
      ASSERT_GE(v, -1.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(MakeReference, SeedReproducible) {
  Image img = fixtures::scene_image(64, 9);
  Rng a(10), b(10);
  Box box{4, 4, 30, 30};
  EXPECT_EQ(make_reference(img, box, a).pixels, make_reference(img, box, b).pixels);
}

TEST(MakeReference, ReadsOnlyBboxPixels) {
  Image img = fixtures::scene_image(64, 11);
  Image other = img;
  Box box{10, 10, 30, 30};
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (y < 10 || x < 10 || y >= 30 || x >= 30)
        for (int c = 0; c < 3; ++c) other.at(y, x, c) = -other.at(y, x, c);
  Rng a(12), b(12);
  EXPECT_EQ(make_reference(img, box, a).pixels, make_reference(other, box, b).pixels);
}

// ---------------------------------------------------------------- make_training_example

TEST(MakeTrainingExample, InvariantsOverThousandSamples) {
  std::vector<Image> images;
  for (int i = 0; i < 20; ++i) images.push_back(fixtures::scene_image(64, 100 + i));
  Rng rng(13);
  for (int i = 0; i < 1000; ++i) {
    EditSample s = make_training_example(images[i % images.size()], rng);
    ASSERT_EQ((s.sketch & ~s.mask).count(), 0u);
    ASSERT_GE(s.mask.fraction(), 0.02);
    ASSERT_LE(s.mask.fraction(), 0.5);
    ASSERT_EQ(s.reference.pixels.width(), 32);
    ASSERT_TRUE(s.bbox.inside(64, 64));
  }
}

TEST(MakeTrainingExample, DeterministicFromImageAndSeed) {
  Image img = fixtures::scene_image(64, 14);
  Rng a(15), b(15);
  EditSample x = make_training_example(img, a), y = make_training_example(img, b);
  EXPECT_EQ(x.mask, y.mask);
  EXPECT_EQ(x.sketch, y.sketch);
  EXPECT_EQ(x.reference.pixels, y.reference.pixels);
  EXPECT_EQ(x.bbox, y.bbox);
}

TEST(MakeTrainingExample, PluggableDetector) {
  Image img = fixtures::scene_image(64, 16);
  SampleOptions opts;
  opts.detector = [](const Image& im) { return Bitmap(im.width(), im.height(), 1); };
  Rng rng(17);
  EditSample s = make_training_example(img, rng, opts);
  EXPECT_EQ(s.sketch, s.mask);
}

// ---------------------------------------------------------------- corpus

TEST(Corpus, SameSeedByteIdentical) {
  auto a = fixtures::scratch_dir("corpus_a");
  auto b = fixtures::scratch_dir("corpus_b");
  synth_corpus(24, 64, 99, a, {11, true});
  synth_corpus(24, 64, 99, b, {11, true});
  for (const auto& e : CorpusManifest::load(a / "manifest.jsonl").entries) {
    EXPECT_EQ(read_file(a / e.path), read_file(b / e.path)) << e.path;
  }
  EXPECT_EQ(read_file(a / "manifest.jsonl"), read_file(b / "manifest.jsonl"));
}

TEST(Corpus, SplitsDisjointAndTenToOne) {
  auto dir = fixtures::scratch_dir("corpus_split");
  auto m = synth_corpus(44, 32, 5, dir, {11, true});
  EXPECT_EQ(m.count(Split::train), 40u);
  EXPECT_EQ(m.count(Split::test), 4u);
  std::set<std::string> train, test;
  for (const auto& e : m.entries) (e.split == Split::train ? train : test).insert(e.path);
  for (const auto& p : test) EXPECT_EQ(train.count(p), 0u);
  Corpus c = Corpus::load(dir);
  EXPECT_EQ(c.train.size(), 40u);
  EXPECT_EQ(c.test.size(), 4u);
  EXPECT_EQ(c.test_seeds.size(), 4u);
}

TEST(Corpus, RefusesToOverwrite) {
  auto dir = fixtures::scratch_dir("corpus_over");
  synth_corpus(3, 32, 1, dir);
  EXPECT_THROW(synth_corpus(3, 32, 1, dir), IoError);
  EXPECT_NO_THROW(synth_corpus(3, 32, 1, dir, {11, true}));
}

TEST(Corpus, SceneHasShapeFullyInside) {
  for (uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    Scene sc = random_scene(64, rng);
    ASSERT_GE(sc.shapes.size(), 2u);
    ASSERT_LE(sc.shapes.size(), 5u);
    bool any_inside = false;
    for (const auto& s : sc.shapes) any_inside |= s.bounds.inside(64, 64);
    EXPECT_TRUE(any_inside) << seed;
  }
}

TEST(Corpus, CircleSketchIsClosedRing) {
  Shape c;
  c.kind = ShapeKind::circle;
  c.cx = 32;
  c.cy = 32;
  c.radius = 14;
  c.color[0] = c.color[1] = c.color[2] = 0.8f;
  c.bounds = Box{18, 18, 46, 46};
  const float bg[3] = {-0.6f, -0.6f, -0.6f};
  Bitmap ring = extract_sketch(render_shapes(64, {c}, bg));
  const int components = count_components(ring, true, true, false);
  const int holes = count_components(ring, false, false, true);
  EXPECT_EQ(components, 1);
  EXPECT_EQ(holes, 1);
  EXPECT_EQ(components - holes, 0);  // Euler characteristic of an annulus
}

TEST(Corpus, ManifestRoundTrip) {
  auto dir = fixtures::scratch_dir("manifest");
  CorpusManifest m;
  m.entries = {{"images/a.png", Split::train, 18446744073709551615ull}, {"images/b.png", Split::test, 3}};
  m.save(dir / "m.jsonl");
  auto r = CorpusManifest::load(dir / "m.jsonl");
  ASSERT_EQ(r.entries.size(), 2u);
  EXPECT_EQ(r.entries[0].seed, 18446744073709551615ull);
  EXPECT_EQ(r.entries[1].split, Split::test);
}

// ---------------------------------------------------------------- images / png

TEST(Png, RgbRoundTripOnGrid) {
  Image img(5, 4, 3);
  int k = 0;
  for (auto& v : img.data()) v = float((k++ * 37) % 256) / 127.5f - 1.0f;
  EXPECT_EQ(decode_png_rgb(encode_png(img)), img);
}

TEST(Png, BinaryThresholdAt128) {
  Bitmap b = fixtures::random_bitmap(16, 3);
  EXPECT_EQ(decode_png_binary(encode_png(b)), b);
  EXPECT_THROW(decode_png_rgb(std::vector<uint8_t>{1, 2, 3}), IoError);
}

TEST(ImageOps, ResizeAndCrop) {
  Image img = fixtures::random_image(16, 1);
  EXPECT_EQ(resize_bilinear(img, 16, 16), img);
  EXPECT_THROW(resize_bilinear(img, 0, 4), ContractError);
  Image c = crop(img, Box{2, 3, 10, 7});
  EXPECT_EQ(c.width(), 8);
  EXPECT_EQ(c.height(), 4);
  EXPECT_EQ(c.at(0, 0, 1), img.at(3, 2, 1));
}
