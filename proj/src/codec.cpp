#include "sketchfill/codec.hpp"

#include "sketchfill/diffusion.hpp"
#include "sketchfill/image.hpp"

namespace sketchfill {

namespace F = torch::nn::functional;

void Codec::check_encode_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != 3) throw ContractError(name() + " codec: expected [B,3,H,W]");
  const int f = spatial_factor();
  if (x.size(2) % f != 0 || x.size(3) % f != 0) {
    throw ContractError(name() + " codec: image dims must be divisible by " + std::to_string(f));
  }
}

torch::Tensor IdentityCodec::encode(const torch::Tensor& x) const {
  check_encode_input(x);
  return x;
}

torch::Tensor IdentityCodec::decode(const torch::Tensor& z) const { return z.clamp(-1.0, 1.0); }

ConvCodecNetImpl::ConvCodecNetImpl(int latent_channels, int width) {
  using torch::nn::Conv2dOptions;
  enc1 = register_module("enc1", torch::nn::Conv2d(Conv2dOptions(3, width, 3).padding(1)));
  enc2 = register_module("enc2", torch::nn::Conv2d(Conv2dOptions(width, width, 3).stride(2).padding(1)));
  enc3 = register_module("enc3", torch::nn::Conv2d(Conv2dOptions(width, latent_channels, 1)));
  dec1 = register_module("dec1", torch::nn::Conv2d(Conv2dOptions(latent_channels, width, 3).padding(1)));
  dec2 = register_module("dec2", torch::nn::Conv2d(Conv2dOptions(width, width, 3).padding(1)));
  dec3 = register_module("dec3", torch::nn::Conv2d(Conv2dOptions(width, 3, 3).padding(1)));
}

torch::Tensor ConvCodecNetImpl::encode(const torch::Tensor& x) {
  auto h = torch::silu(enc1(x));
  h = torch::silu(enc2(h));
  return enc3(h);
}

torch::Tensor ConvCodecNetImpl::decode(const torch::Tensor& z) {
  auto h = F::interpolate(z, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
  h = torch::silu(dec1(h));
  h = torch::silu(dec2(h));
  return dec3(h);
}

ConvCodec::ConvCodec(int latent_channels, uint64_t seed) : latent_channels_(latent_channels) {
  torch::manual_seed(seed);
  net_ = ConvCodecNet(latent_channels);
  net_->eval();
}

torch::Tensor ConvCodec::encode(const torch::Tensor& x) const {
  check_encode_input(x);
  return net_->encode(x);
}

torch::Tensor ConvCodec::decode(const torch::Tensor& z) const {
  return net_->decode(z).clamp(-1.0, 1.0);
}

std::vector<std::pair<std::string, torch::Tensor>> ConvCodec::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : net_->named_parameters()) out.emplace_back(p.key(), p.value());
  return out;
}

double ConvCodec::train(const torch::Tensor& images, int steps, int batch, double lr, uint64_t seed) {
  net_->train();
  torch::optim::AdamW opt(net_->parameters(), torch::optim::AdamWOptions(lr).weight_decay(0.0));
  auto gen = make_generator(seed);
  double last = 0.0;
  for (int step = 0; step < steps; ++step) {
    auto idx = torch::randint(images.size(0), {batch}, gen, torch::kLong);
    auto x = images.index_select(0, idx);
    auto recon = net_->decode(net_->encode(x));
    auto loss = (recon - x).abs().mean();
    opt.zero_grad();
    loss.backward();
    opt.step();
    last = loss.item<double>();
  }
  net_->eval();
  return last;
}

std::shared_ptr<Codec> make_codec(const std::string& name, int latent_channels, uint64_t seed) {
  if (name == "identity") return std::make_shared<IdentityCodec>();
  if (name == "conv") return std::make_shared<ConvCodec>(latent_channels, seed);
  throw ConfigError("unknown codec '" + name + "'");
}

std::pair<torch::Tensor, torch::Tensor> project_mask_sketch(const torch::Tensor& mask,
                                                            const torch::Tensor& sketch, int factor) {
  if (factor < 1) throw ContractError("project_mask_sketch: factor must be >= 1");
  if (mask.dim() != 4 || !mask.sizes().equals(sketch.sizes())) {
    throw ContractError("project_mask_sketch: expected matching [B,1,H,W] maps");
  }
  if (mask.size(2) % factor != 0 || mask.size(3) % factor != 0) {
    throw ContractError("project_mask_sketch: dims must be divisible by the factor");
  }
  if (factor == 1) return {mask, sketch};
  return {F::max_pool2d(mask, F::MaxPool2dFuncOptions(factor)),
          F::max_pool2d(sketch, F::MaxPool2dFuncOptions(factor))};
}

}  // namespace sketchfill
