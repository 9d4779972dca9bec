#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "sketchfill/codec.hpp"
#include "sketchfill/config.hpp"
#include "sketchfill/denoiser.hpp"
#include "sketchfill/diffusion.hpp"
#include "sketchfill/reference_encoder.hpp"

namespace sketchfill {

/// Everything a checkpoint holds: run config, schedule, codec, denoiser, reference encoder.
struct Model {
  RunConfig config;
  NoiseSchedule schedule;
  std::shared_ptr<Codec> codec;
  UNet unet{nullptr};
  ReferenceEncoder encoder{nullptr};

  /// Fresh weights drawn from `init_seed`.
  static Model create(const RunConfig& config, bool sketch_channel, uint64_t init_seed);

  bool has_sketch_channel() const { return unet->spec().sketch_channel; }
  void set_training(bool on);
  void to(torch::ScalarType dtype);
};

NoiseSchedule schedule_from_config(const RunConfig& config);

/// Checkpoint layout: a plain-text header (format line, then [config], [schedule], [unet],
/// [encoder], [codec] sections of `key = value` lines, an `END` line) followed by a binary
/// blob of named float32 tensors under "denoiser/", "encoder/" and "codec/".
void save_checkpoint(const std::filesystem::path& path, const Model& model);

/// Throws ContractError when the stored descriptor and tensors disagree.
Model load_checkpoint(const std::filesystem::path& path);

/// Loads and additionally requires the stored architecture to equal `expected`.
Model load_checkpoint(const std::filesystem::path& path, const UNetSpec& expected);

std::string sha256_hex(std::span<const uint8_t> bytes);

/// Short content hash of a checkpoint file.
std::string checkpoint_id(const std::filesystem::path& path);

}  // namespace sketchfill
