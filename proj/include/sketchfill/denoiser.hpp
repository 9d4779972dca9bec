#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "sketchfill/config.hpp"

namespace sketchfill {

/// Architecture descriptor. Fully determines every parameter shape.
struct UNetSpec {
  static constexpr int kVersion = 1;

  int latent_channels = 3;
  std::vector<int> widths{32, 64, 128};
  int res_blocks = 1;
  int time_embed_dim = 128;
  int groups = 8;
  int attn_heads = 4;
  int cond_dim = 128;
  bool mask_channel = true;
  bool sketch_channel = true;

  /// Channels consumed by the first layer excluding the sketch: noisy + masked image (+ mask).
  int base_channels() const { return 2 * latent_channels + (mask_channel ? 1 : 0); }
  int input_channels() const { return base_channels() + (sketch_channel ? 1 : 0); }

  KeyValues to_key_values() const;
  static UNetSpec from_key_values(const KeyValues& kv);
  static UNetSpec from_config(const RunConfig& cfg, bool sketch_channel);

  friend bool operator==(const UNetSpec&, const UNetSpec&) = default;
};

/// Channel stack fed to the denoiser, concatenated as [noisy | masked_image | mask | sketch].
struct DenoiserInput {
  torch::Tensor noisy;         // [B, c_lat, h, w]
  torch::Tensor masked_image;  // [B, c_lat, h, w], latent of (1 - m) * x_p
  torch::Tensor mask;          // [B, 1, h, w]
  torch::Tensor sketch;        // [B, 1, h, w]

  torch::Tensor concat(bool with_mask, bool with_sketch) const;
};

/// Sinusoidal embedding of integer timesteps, [B] -> [B, dim].
torch::Tensor timestep_embedding(const torch::Tensor& t, int dim);

struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int in, int out, int temb, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
  torch::nn::Linear time_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Pixels attend to the condition tokens; output added residually.
struct CrossAttentionImpl : torch::nn::Module {
  CrossAttentionImpl(int channels, int cond_dim, int heads, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  int heads;
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};
};
TORCH_MODULE(CrossAttention);

/// Time-conditioned UNet predicting the diffusion noise.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetSpec& spec);

  /// x: [B, input_channels, h, w]; t: [B] integer steps; cond: [B, n_tokens, cond_dim].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& cond);

  const UNetSpec& spec() const { return spec_; }

  torch::Tensor time_embedding(const torch::Tensor& t);
  torch::ScalarType parameter_dtype() const;

 private:
  UNetSpec spec_;
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::Conv2d input_base{nullptr};
  torch::nn::Conv2d input_sketch{nullptr};
  torch::nn::ModuleList down_blocks{nullptr};
  torch::nn::ModuleList downsamplers{nullptr};
  CrossAttention attention{nullptr};
  ResBlock mid{nullptr};
  torch::nn::ModuleList upsamplers{nullptr};
  torch::nn::ModuleList up_blocks{nullptr};
  torch::nn::GroupNorm out_norm{nullptr};
  torch::nn::Conv2d out_conv{nullptr};
};
TORCH_MODULE(UNet);

/// eps_theta(input, t, c); output shape matches input.noisy.
torch::Tensor denoise(UNet& model, const DenoiserInput& input, const torch::Tensor& t,
                      const torch::Tensor& cond);

/// Adds the sketch input channel with zero-initialized first-layer kernels; every other
/// parameter is copied bit-exact. Throws ContractError if `base` already has one.
UNet extend_for_sketch(UNet& base);

int64_t parameter_count(const torch::nn::Module& m);

/// Group count used for a given width: largest divisor of channels not above `groups`.
int group_count(int channels, int groups);

}  // namespace sketchfill
