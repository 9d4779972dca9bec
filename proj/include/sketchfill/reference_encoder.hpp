#pragma once

#include <vector>

#include <torch/torch.h>

#include "sketchfill/config.hpp"
#include "sketchfill/reference_image.hpp"

namespace sketchfill {

struct EncoderSpec {
  static constexpr int kVersion = 1;

  int input_size = 32;
  std::vector<int> widths{32, 64, 128, 128};
  int hidden = 256;
  int cond_dim = 128;
  int groups = 8;

  KeyValues to_key_values() const;
  static EncoderSpec from_key_values(const KeyValues& kv);
  static EncoderSpec from_config(const RunConfig& cfg);

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// c = MLP(Enc(x_r)): conv blocks (stride 1 then 2), global average pool, two-layer projection.
class ReferenceEncoderImpl : public torch::nn::Module {
 public:
  explicit ReferenceEncoderImpl(const EncoderSpec& spec);

  /// x: [B, 3, S, S] -> [B, cond_dim].
  torch::Tensor forward(const torch::Tensor& x);
  /// Pooled backbone features before the projection head.
  torch::Tensor features(const torch::Tensor& x);

  const EncoderSpec& spec() const { return spec_; }

  torch::nn::ModuleList backbone{nullptr};
  torch::nn::Sequential projection{nullptr};

 private:
  EncoderSpec spec_;
};
TORCH_MODULE(ReferenceEncoder);

/// Condition tokens for the denoiser: [B, 1, cond_dim].
inline torch::Tensor as_condition_tokens(const torch::Tensor& c) { return c.unsqueeze(1); }

/// Encodes one reference (resized to the encoder input first); returns [cond_dim].
/// Throws std::runtime_error on non-finite activations.
torch::Tensor encode_reference(const ReferenceImage& x_r, ReferenceEncoder& encoder);

/// Batched variant over already-sized references; returns [B, cond_dim].
torch::Tensor encode_references(const std::vector<ReferenceImage>& refs, ReferenceEncoder& encoder);

}  // namespace sketchfill
