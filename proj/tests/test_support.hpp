#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sketchfill/config.hpp"
#include "sketchfill/data_pipeline.hpp"
#include "sketchfill/image.hpp"
#include "sketchfill/model.hpp"
#include "sketchfill/rng.hpp"

namespace sketchfill::fixtures {

/// Small architecture for fast random-weight tests (16x16 images, T = 40).
inline RunConfig tiny_config() {
  RunConfig c;
  c.image_size = 16;
  c.reference_size = 16;
  c.timesteps = 40;
  c.beta_start = 2.5e-3;
  c.beta_end = 0.5;
  c.sample_steps = 8;
  c.unet_widths = {8, 16};
  c.time_embed_dim = 16;
  c.norm_groups = 4;
  c.attn_heads = 2;
  c.d_cond = 16;
  c.encoder_widths = {8, 8, 16, 16};
  c.encoder_hidden = 32;
  c.batch_size = 4;
  c.precision = "fp32";
  return c;
}

/// Random RGB image in [-1, 1].
inline Image random_image(int size, uint64_t seed, int channels = 3) {
  Rng rng(seed);
  Image img(size, size, channels);
  for (auto& v : img.data()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return img;
}

inline Bitmap random_bitmap(int size, uint64_t seed, double p = 0.3) {
  Rng rng(seed);
  Bitmap b(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) b.set(y, x, uniform(rng, 0.0, 1.0) < p);
  return b;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sketchfill_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Procedural test scenes at the requested size.
inline Image scene_image(int size, uint64_t seed) {
  Rng rng(seed);
  return render_scene(random_scene(size, rng));
}

}  // namespace sketchfill::fixtures
