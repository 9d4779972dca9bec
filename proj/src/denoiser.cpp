#include "sketchfill/denoiser.hpp"

#include <cmath>

#include "sketchfill/image.hpp"

namespace sketchfill {

namespace F = torch::nn::functional;
using torch::nn::Conv2dOptions;

KeyValues UNetSpec::to_key_values() const {
  return {
      {"unet.version", std::to_string(kVersion)},
      {"unet.latent_channels", std::to_string(latent_channels)},
      {"unet.widths", format_int_list(widths)},
      {"unet.res_blocks", std::to_string(res_blocks)},
      {"unet.time_embed_dim", std::to_string(time_embed_dim)},
      {"unet.groups", std::to_string(groups)},
      {"unet.attn_heads", std::to_string(attn_heads)},
      {"unet.cond_dim", std::to_string(cond_dim)},
      {"unet.mask_channel", mask_channel ? "true" : "false"},
      {"unet.sketch_channel", sketch_channel ? "true" : "false"},
      {"unet.input_channels", std::to_string(input_channels())},
  };
}

UNetSpec UNetSpec::from_key_values(const KeyValues& kv) {
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ContractError(std::string("unet descriptor: missing ") + k);
    return it->second;
  };
  if (std::stoi(get("unet.version")) != kVersion) throw ContractError("unet descriptor: unsupported version");
  UNetSpec s;
  s.latent_channels = std::stoi(get("unet.latent_channels"));
  s.widths = parse_int_list(get("unet.widths"));
  s.res_blocks = std::stoi(get("unet.res_blocks"));
  s.time_embed_dim = std::stoi(get("unet.time_embed_dim"));
  s.groups = std::stoi(get("unet.groups"));
  s.attn_heads = std::stoi(get("unet.attn_heads"));
  s.cond_dim = std::stoi(get("unet.cond_dim"));
  s.mask_channel = get("unet.mask_channel") == "true";
  s.sketch_channel = get("unet.sketch_channel") == "true";
  if (std::stoi(get("unet.input_channels")) != s.input_channels()) {
    throw ContractError("unet descriptor: input channel count inconsistent");
  }
  return s;
}

UNetSpec UNetSpec::from_config(const RunConfig& cfg, bool sketch_channel) {
  UNetSpec s;
  s.latent_channels = cfg.latent_channels();
  s.widths = cfg.unet_widths;
  s.res_blocks = cfg.unet_res_blocks;
  s.time_embed_dim = cfg.time_embed_dim;
  s.groups = cfg.norm_groups;
  s.attn_heads = cfg.attn_heads;
  s.cond_dim = cfg.d_cond;
  s.mask_channel = cfg.mask_channel;
  s.sketch_channel = sketch_channel;
  return s;
}

torch::Tensor DenoiserInput::concat(bool with_mask, bool with_sketch) const {
  std::vector<torch::Tensor> parts{noisy, masked_image};
  if (with_mask) parts.push_back(mask);
  if (with_sketch) parts.push_back(sketch);
  for (const auto& p : parts) {
    if (p.dim() != 4 || p.size(0) != noisy.size(0) || p.size(2) != noisy.size(2) ||
        p.size(3) != noisy.size(3)) {
      throw ContractError("DenoiserInput: channel planes disagree on batch or spatial dims");
    }
  }
  return torch::cat(parts, 1);
}

int group_count(int channels, int groups) {
  int g = std::max(1, std::min(groups, channels));
  while (channels % g != 0) --g;
  return g;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kDouble) / half);
  auto args = t.to(torch::kDouble).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, torch::kDouble)}, 1);
  return emb;
}

ResBlockImpl::ResBlockImpl(int in, int out, int temb, int groups) {
  norm1 = register_module("norm1", torch::nn::GroupNorm(group_count(in, groups), in));
  conv1 = register_module("conv1", torch::nn::Conv2d(Conv2dOptions(in, out, 3).padding(1)));
  time_proj = register_module("time_proj", torch::nn::Linear(temb, out));
  norm2 = register_module("norm2", torch::nn::GroupNorm(group_count(out, groups), out));
  conv2 = register_module("conv2", torch::nn::Conv2d(Conv2dOptions(out, out, 3).padding(1)));
  if (in != out) skip = register_module("skip", torch::nn::Conv2d(Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1(torch::silu(norm1(x)));
  h = h + time_proj(torch::silu(temb)).unsqueeze(-1).unsqueeze(-1);
  h = conv2(torch::silu(norm2(h)));
  return h + (skip ? skip(x) : x);
}

CrossAttentionImpl::CrossAttentionImpl(int channels, int cond_dim, int heads_, int groups)
    : heads(heads_) {
  if (channels % heads != 0) throw ContractError("CrossAttention: channels must divide by heads");
  norm = register_module("norm", torch::nn::GroupNorm(group_count(channels, groups), channels));
  q = register_module("q", torch::nn::Linear(channels, channels));
  k = register_module("k", torch::nn::Linear(cond_dim, channels));
  v = register_module("v", torch::nn::Linear(cond_dim, channels));
  out = register_module("out", torch::nn::Linear(channels, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const int64_t n = cond.size(1), dh = c / heads;
  auto tokens = norm(x).flatten(2).transpose(1, 2);                     // [B, HW, C]
  auto qh = q(tokens).view({b, h * w, heads, dh}).transpose(1, 2);      // [B, H, HW, dh]
  auto kh = k(cond).view({b, n, heads, dh}).transpose(1, 2);            // [B, H, n, dh]
  auto vh = v(cond).view({b, n, heads, dh}).transpose(1, 2);
  auto attn = torch::softmax(torch::matmul(qh, kh.transpose(-1, -2)) / std::sqrt(double(dh)), -1);
  auto mixed = torch::matmul(attn, vh).transpose(1, 2).reshape({b, h * w, c});
  return x + out(mixed).transpose(1, 2).reshape({b, c, h, w});
}

namespace {

struct UpsampleImpl : torch::nn::Module {
  explicit UpsampleImpl(int channels) {
    conv = register_module("conv", torch::nn::Conv2d(Conv2dOptions(channels, channels, 3).padding(1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    return conv(F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest)));
  }
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Upsample);

}  // namespace

UNetImpl::UNetImpl(const UNetSpec& spec) : spec_(spec) {
  const auto& w = spec.widths;
  const int levels = static_cast<int>(w.size());
  if (levels < 1 || spec.res_blocks < 1) throw ContractError("UNet: need >= 1 level and res block");
  const int temb = spec.time_embed_dim;
  const int g = spec.groups;

  time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(w[0], temb),
                                                               torch::nn::SiLU(),
                                                               torch::nn::Linear(temb, temb)));
  input_base = register_module(
      "input_base", torch::nn::Conv2d(Conv2dOptions(spec.base_channels(), w[0], 3).padding(1)));
  if (spec.sketch_channel) {
    input_sketch = register_module(
        "input_sketch", torch::nn::Conv2d(Conv2dOptions(1, w[0], 3).padding(1).bias(false)));
  }

  down_blocks = register_module("down_blocks", torch::nn::ModuleList());
  downsamplers = register_module("downsamplers", torch::nn::ModuleList());
  int ch = w[0];
  for (int l = 0; l < levels; ++l) {
    for (int r = 0; r < spec.res_blocks; ++r) {
      down_blocks->push_back(ResBlock(ch, w[l], temb, g));
      ch = w[l];
    }
    if (l + 1 < levels) {
      downsamplers->push_back(torch::nn::Conv2d(Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
    }
  }
  attention = register_module("attention", CrossAttention(ch, spec.cond_dim, spec.attn_heads, g));
  mid = register_module("mid", ResBlock(ch, ch, temb, g));

  upsamplers = register_module("upsamplers", torch::nn::ModuleList());
  up_blocks = register_module("up_blocks", torch::nn::ModuleList());
  for (int l = levels - 2; l >= 0; --l) {
    upsamplers->push_back(Upsample(ch));
    for (int r = 0; r < spec.res_blocks; ++r) {
      up_blocks->push_back(ResBlock(r == 0 ? ch + w[l] : w[l], w[l], temb, g));
    }
    ch = w[l];
  }
  out_norm = register_module("out_norm", torch::nn::GroupNorm(group_count(ch, g), ch));
  out_conv = register_module("out_conv",
                             torch::nn::Conv2d(Conv2dOptions(ch, spec.latent_channels, 3).padding(1)));
  torch::NoGradGuard no_grad;
  out_conv->weight.zero_();
  out_conv->bias.zero_();
  if (input_sketch) input_sketch->weight.zero_();
}

torch::ScalarType UNetImpl::parameter_dtype() const { return input_base->weight.scalar_type(); }

torch::Tensor UNetImpl::time_embedding(const torch::Tensor& t) {
  return time_mlp->forward(timestep_embedding(t, spec_.widths[0]).to(parameter_dtype()));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& cond) {
  if (x.dim() != 4 || x.size(1) != spec_.input_channels()) {
    throw ContractError("UNet: expected " + std::to_string(spec_.input_channels()) + " input channels, got " +
                        (x.dim() == 4 ? std::to_string(x.size(1)) : std::string("non-4D input")));
  }
  if (cond.dim() != 3 || cond.size(2) != spec_.cond_dim || cond.size(0) != x.size(0)) {
    throw ContractError("UNet: condition must be [B, tokens, cond_dim]");
  }
  const int levels = static_cast<int>(spec_.widths.size());
  const int64_t factor = int64_t{1} << (levels - 1);
  if (x.size(2) % factor != 0 || x.size(3) % factor != 0) {
    throw ContractError("UNet: spatial dims must be divisible by 2^(levels-1)");
  }
  auto temb = time_embedding(t);

  // The sketch path is a separate kernel so a zero kernel adds exact zeros.
  auto h = input_base(x.narrow(1, 0, spec_.base_channels()).contiguous());
  if (input_sketch) h = h + input_sketch(x.narrow(1, spec_.base_channels(), 1).contiguous());

  std::vector<torch::Tensor> skips;
  size_t block = 0;
  for (int l = 0; l < levels; ++l) {
    for (int r = 0; r < spec_.res_blocks; ++r) {
      h = down_blocks[block++]->as<ResBlock>()->forward(h, temb);
    }
    if (l + 1 < levels) {
      skips.push_back(h);
      h = downsamplers[l]->as<torch::nn::Conv2d>()->forward(h);
    }
  }
  h = attention(h, cond);
  h = mid(h, temb);

  block = 0;
  for (int i = 0; i < levels - 1; ++i) {
    h = upsamplers[i]->as<Upsample>()->forward(h);
    h = torch::cat({h, skips[skips.size() - 1 - i]}, 1);
    for (int r = 0; r < spec_.res_blocks; ++r) {
      h = up_blocks[block++]->as<ResBlock>()->forward(h, temb);
    }
  }
  return out_conv(torch::silu(out_norm(h)));
}

torch::Tensor denoise(UNet& model, const DenoiserInput& input, const torch::Tensor& t,
                      const torch::Tensor& cond) {
  const auto& spec = model->spec();
  if (input.noisy.size(1) != spec.latent_channels || input.masked_image.size(1) != spec.latent_channels) {
    throw ContractError("denoise: latent channel mismatch");
  }
  return model->forward(input.concat(spec.mask_channel, spec.sketch_channel), t, cond);
}

UNet extend_for_sketch(UNet& base) {
  if (base->spec().sketch_channel) throw ContractError("extend_for_sketch: model already has a sketch channel");
  UNetSpec spec = base->spec();
  spec.sketch_channel = true;
  UNet extended(spec);
  extended->to(base->parameter_dtype());
  torch::NoGradGuard no_grad;
  auto src = base->named_parameters();
  for (auto& p : extended->named_parameters()) {
    if (p.key() == "input_sketch.weight") {
      p.value().zero_();
      continue;
    }
    const torch::Tensor* from = src.find(p.key());
    if (!from || !from->sizes().equals(p.value().sizes())) {
      throw ContractError("extend_for_sketch: parameter layout mismatch at " + p.key());
    }
    p.value().copy_(*from);
  }
  auto src_buffers = base->named_buffers();
  for (auto& b : extended->named_buffers()) {
    if (const torch::Tensor* from = src_buffers.find(b.key())) b.value().copy_(*from);
  }
  extended->train(base->is_training());
  return extended;
}

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace sketchfill
