#pragma once

#include <memory>
#include <string>
#include <utility>

#include <torch/torch.h>

#include "sketchfill/rng.hpp"

namespace sketchfill {

/// Maps batched images [B, 3, H, W] in [-1, 1] to the diffusion working space and back.
class Codec {
 public:
  virtual ~Codec() = default;
  virtual std::string name() const = 0;
  virtual int spatial_factor() const = 0;
  virtual int latent_channels() const = 0;
  virtual torch::Tensor encode(const torch::Tensor& x) const = 0;
  /// Output is clamped to [-1, 1].
  virtual torch::Tensor decode(const torch::Tensor& z) const = 0;
  /// Trainable weights, empty for parameter-free codecs.
  virtual std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const { return {}; }

 protected:
  void check_encode_input(const torch::Tensor& x) const;
};

class IdentityCodec final : public Codec {
 public:
  std::string name() const override { return "identity"; }
  int spatial_factor() const override { return 1; }
  int latent_channels() const override { return 3; }
  torch::Tensor encode(const torch::Tensor& x) const override;
  torch::Tensor decode(const torch::Tensor& z) const override;
};

struct ConvCodecNetImpl : torch::nn::Module {
  explicit ConvCodecNetImpl(int latent_channels, int width = 32);
  torch::Tensor encode(const torch::Tensor& x);
  torch::Tensor decode(const torch::Tensor& z);

  torch::nn::Conv2d enc1{nullptr}, enc2{nullptr}, enc3{nullptr};
  torch::nn::Conv2d dec1{nullptr}, dec2{nullptr}, dec3{nullptr};
};
TORCH_MODULE(ConvCodecNet);

/// Stride-2 conv autoencoder (factor 2), trained with an L1 reconstruction loss.
class ConvCodec final : public Codec {
 public:
  explicit ConvCodec(int latent_channels, uint64_t seed = 0);

  std::string name() const override { return "conv"; }
  int spatial_factor() const override { return 2; }
  int latent_channels() const override { return latent_channels_; }
  torch::Tensor encode(const torch::Tensor& x) const override;
  torch::Tensor decode(const torch::Tensor& z) const override;
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const override;

  /// Trains on random batches of `images` ([N, 3, H, W]); returns the final batch L1.
  double train(const torch::Tensor& images, int steps, int batch, double lr, uint64_t seed);

  ConvCodecNet& net() { return net_; }

 private:
  int latent_channels_;
  mutable ConvCodecNet net_{nullptr};
};

std::shared_ptr<Codec> make_codec(const std::string& name, int latent_channels, uint64_t seed = 0);

/// Max-pool projection of binary mask/sketch maps ([B, 1, H, W]) to latent resolution,
/// so thin strokes survive. Factor 1 is the identity.
std::pair<torch::Tensor, torch::Tensor> project_mask_sketch(const torch::Tensor& mask,
                                                            const torch::Tensor& sketch, int factor);

}  // namespace sketchfill
