#include "sketchfill/reference_encoder.hpp"

#include <stdexcept>

#include "sketchfill/denoiser.hpp"
#include "sketchfill/image.hpp"
#include "sketchfill/tensor_util.hpp"

namespace sketchfill {

using torch::nn::Conv2dOptions;

KeyValues EncoderSpec::to_key_values() const {
  return {
      {"encoder.version", std::to_string(kVersion)},
      {"encoder.input_size", std::to_string(input_size)},
      {"encoder.widths", format_int_list(widths)},
      {"encoder.hidden", std::to_string(hidden)},
      {"encoder.cond_dim", std::to_string(cond_dim)},
      {"encoder.groups", std::to_string(groups)},
  };
}

EncoderSpec EncoderSpec::from_key_values(const KeyValues& kv) {
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ContractError(std::string("encoder descriptor: missing ") + k);
    return it->second;
  };
  if (std::stoi(get("encoder.version")) != kVersion) throw ContractError("encoder descriptor: unsupported version");
  EncoderSpec s;
  s.input_size = std::stoi(get("encoder.input_size"));
  s.widths = parse_int_list(get("encoder.widths"));
  s.hidden = std::stoi(get("encoder.hidden"));
  s.cond_dim = std::stoi(get("encoder.cond_dim"));
  s.groups = std::stoi(get("encoder.groups"));
  return s;
}

EncoderSpec EncoderSpec::from_config(const RunConfig& cfg) {
  EncoderSpec s;
  s.input_size = cfg.reference_size;
  s.widths = cfg.encoder_widths;
  s.hidden = cfg.encoder_hidden;
  s.cond_dim = cfg.d_cond;
  s.groups = cfg.norm_groups;
  return s;
}

ReferenceEncoderImpl::ReferenceEncoderImpl(const EncoderSpec& spec) : spec_(spec) {
  if (spec.widths.empty()) throw ContractError("ReferenceEncoder: widths must be non-empty");
  backbone = register_module("backbone", torch::nn::ModuleList());
  int ch = 3;
  for (size_t i = 0; i < spec.widths.size(); ++i) {
    const int w = spec.widths[i];
    backbone->push_back(torch::nn::Sequential(
        torch::nn::Conv2d(Conv2dOptions(ch, w, 3).stride(i == 0 ? 1 : 2).padding(1)),
        torch::nn::GroupNorm(group_count(w, spec.groups), w), torch::nn::SiLU()));
    ch = w;
  }
  projection = register_module("projection",
                               torch::nn::Sequential(torch::nn::Linear(ch, spec.hidden), torch::nn::SiLU(),
                                                     torch::nn::Linear(spec.hidden, spec.cond_dim)));
}

torch::Tensor ReferenceEncoderImpl::features(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ContractError("ReferenceEncoder: expected [B,3,S,S]");
  auto h = x;
  for (const auto& block : *backbone) h = block->as<torch::nn::Sequential>()->forward(h);
  return h.mean({2, 3});
}

torch::Tensor ReferenceEncoderImpl::forward(const torch::Tensor& x) { return projection->forward(features(x)); }

namespace {

torch::Tensor checked(torch::Tensor c) {
  if (!torch::isfinite(c).all().item<bool>()) {
    throw std::runtime_error("encode_reference: non-finite activations");
  }
  return c;
}

torch::Tensor reference_batch(const std::vector<ReferenceImage>& refs, int size, torch::ScalarType dtype) {
  std::vector<torch::Tensor> ts;
  ts.reserve(refs.size());
  for (const auto& r : refs) {
    const Image& px = r.pixels;
    ts.push_back(to_tensor(px.width() == size && px.height() == size ? px : resize_bilinear(px, size, size)));
  }
  return torch::stack(ts).to(dtype);
}

}  // namespace

torch::Tensor encode_reference(const ReferenceImage& x_r, ReferenceEncoder& encoder) {
  return encode_references({x_r}, encoder)[0];
}

torch::Tensor encode_references(const std::vector<ReferenceImage>& refs, ReferenceEncoder& encoder) {
  if (refs.empty()) throw ContractError("encode_references: empty batch");
  torch::NoGradGuard no_grad;
  auto dtype = encoder->projection->parameters().front().scalar_type();
  return checked(encoder->forward(reference_batch(refs, encoder->spec().input_size, dtype)));
}

}  // namespace sketchfill
