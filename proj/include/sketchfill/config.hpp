#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sketchfill {

/// Ordered key/value text. Serialized as `key = value` lines; `#` starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);
KeyValues read_key_values(const std::filesystem::path& file);

std::vector<int> parse_int_list(const std::string& s);
std::string format_int_list(const std::vector<int>& v);

/// Every knob of a run. Serialized verbatim into checkpoints and run records.
struct RunConfig {
  std::string preset = "desk";

  // data / geometry
  int image_size = 64;
  int reference_size = 32;
  double sketch_threshold = 0.2;
  std::string corpus;

  // diffusion
  std::string schedule = "linear";
  int timesteps = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;
  std::string sampler = "ddim";
  int sample_steps = 50;
  std::string precision = "bf16";  // fp32 | bf16 (CPU autocast for denoiser and encoder)

  // latent codec
  std::string codec = "identity";  // identity | conv
  int codec_latent_channels = 4;   // conv codec only
  int codec_train_steps = 1000;    // conv codec only, run before phase 1

  // denoiser
  std::vector<int> unet_widths{32, 64, 128};
  int unet_res_blocks = 1;
  int time_embed_dim = 128;
  int norm_groups = 8;
  int attn_heads = 4;
  bool mask_channel = true;

  // reference encoder
  int d_cond = 128;
  std::vector<int> encoder_widths{32, 64, 128, 128};
  int encoder_hidden = 256;

  // optimization
  std::string optimizer = "adamw";
  double learning_rate = 2e-4;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double grad_clip = 1.0;
  int batch_size = 16;
  int phase1_steps = 3000;
  int phase2_steps = 3000;
  int epochs = 0;  // > 0 overrides step counts with whole passes over the train split
  int phase = 1;
  int log_every = 50;
  int checkpoint_every = 500;
  uint64_t seed = 1234;

  /// Applies one override; throws ConfigError on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& kv);
  KeyValues to_key_values() const;
  static RunConfig from_key_values(const KeyValues& kv);

  /// Checks cross-field constraints.
  void validate() const;

  int latent_channels() const { return codec == "conv" ? codec_latent_channels : 3; }
  int spatial_factor() const { return codec == "conv" ? 2 : 1; }
  int latent_size() const { return image_size / spatial_factor(); }

  /// Steps for the given phase, resolving `epochs` against the train split size.
  int steps_for_phase(int which, size_t train_count) const;

  static std::vector<std::string> keys();
};

/// Named presets: "desk" (defaults) and "paper" (the reference large-scale configuration).
RunConfig preset_config(const std::string& name);

/// defaults/preset < config file < SKETCHFILL_* environment < explicit overrides.
/// Config-file keys under "service." belong to the HTTP service and are skipped here.
RunConfig resolve_config(const std::string& preset, const std::filesystem::path& config_file,
                         const KeyValues& overrides);

}  // namespace sketchfill
