#include "sketchfill/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sketchfill/data_pipeline.hpp"
#include "sketchfill/tensor_util.hpp"

namespace sketchfill {

SketchPhase parse_sketch_phase(const std::string& s) {
  if (s == "early") return SketchPhase::early;
  if (s == "late") return SketchPhase::late;
  throw ConfigError("unknown sketch phase '" + s + "' (expected early|late)");
}

const char* to_string(SketchPhase p) { return p == SketchPhase::early ? "early" : "late"; }

SketchSchedule::SketchSchedule(int total_steps, double rho, SketchPhase phase)
    : total_(total_steps), rho_(rho), phase_(phase) {
  if (total_steps < 1) throw ContractError("SketchSchedule: total_steps must be >= 1");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ContractError("SketchSchedule: rho must be in [0, 1]");
  on_ = std::clamp(static_cast<int>(std::ceil(rho * total_steps - 1e-9)), 0, total_steps);
}

bool SketchSchedule::active(int k) const {
  if (k < 0 || k >= total_) throw ContractError("SketchSchedule: step index out of range");
  return phase_ == SketchPhase::early ? k < on_ : k >= total_ - on_;
}

torch::Tensor sample(UNet& unet, const NoiseSchedule& sched, const SampleConditioning& inputs,
                     const std::vector<SketchSchedule>& gating, const SamplerOptions& opts,
                     std::vector<at::Generator>& gens) {
  const int64_t b = inputs.masked.size(0);
  if (static_cast<int64_t>(gens.size()) != b) throw ContractError("sample: need one generator per row");
  if (gating.size() != 1 && static_cast<int64_t>(gating.size()) != b) {
    throw ContractError("sample: need one sketch schedule per row or a shared one");
  }
  for (const auto& g : gating) {
    if (g.total_steps() != opts.steps) throw ContractError("sample: sketch schedule length differs from steps");
  }
  torch::NoGradGuard no_grad;
  const auto ts = sampling_timesteps(sched.T, opts.steps);
  const auto row_shape = inputs.masked.sizes().slice(1).vec();

  std::vector<torch::Tensor> rows;
  rows.reserve(b);
  for (int64_t i = 0; i < b; ++i) rows.push_back(torch::randn(row_shape, gens[i], inputs.masked.options()));
  auto z = torch::stack(rows);

  const ReverseOptions rev{opts.mode, opts.clip_x0};
  const int n = static_cast<int>(ts.size());
  for (int k = 0; k < n; ++k) {
    const int t = ts[n - 1 - k];
    const int t_prev = k + 1 < n ? ts[n - 2 - k] : -1;

    std::vector<float> gate(b);
    for (int64_t i = 0; i < b; ++i) gate[i] = gating[gating.size() == 1 ? 0 : i].active(k) ? 1.0f : 0.0f;
    auto gate_t = torch::tensor(gate).to(inputs.sketch.scalar_type()).view({b, 1, 1, 1});
    auto sketch = inputs.sketch * gate_t;

    auto tt = torch::full({b}, t, torch::kLong);
    torch::Tensor eps;
    {
      AutocastGuard autocast(opts.bf16);
      eps = denoise(unet, DenoiserInput{z, inputs.masked, inputs.mask, sketch}, tt, inputs.cond);
    }
    eps = eps.to(z.scalar_type());

    torch::Tensor noise;
    if (reverse_step_needs_noise(t, t_prev, sched, rev)) {
      rows.clear();
      for (int64_t i = 0; i < b; ++i) rows.push_back(torch::randn(row_shape, gens[i], z.options()));
      noise = torch::stack(rows);
    }
    z = reverse_step(z, eps, t, t_prev, sched, rev, noise);
  }
  return z;
}

void validate_request(const EditRequest& req, const Model& model) {
  const int size = model.config.image_size;
  if (req.image.channels() != 3) throw ContractError("edit request: image must be RGB");
  if (req.image.width() != size || req.image.height() != size) {
    throw ContractError("edit request: image must be " + std::to_string(size) + "x" + std::to_string(size));
  }
  if (!req.mask.same_shape(req.image)) throw ContractError("edit request: mask shape differs from image");
  if (!req.sketch.same_shape(req.image)) throw ContractError("edit request: sketch shape differs from image");
  if (!req.mask.any()) throw ContractError("mask empty");
  if (req.reference.pixels.channels() != 3 || req.reference.pixels.empty()) {
    throw ContractError("edit request: reference must be a non-empty RGB image");
  }
  if (req.steps < 1 || req.steps > model.schedule.T) {
    throw ContractError("edit request: steps must be in [1, T]");
  }
  if (!(req.rho >= 0.0 && req.rho <= 1.0)) throw ContractError("edit request: rho must be in [0, 1]");
  if (req.feather < 0) throw ContractError("edit request: feather must be >= 0");
}

SampleConditioning prepare_conditioning(const std::vector<const EditRequest*>& reqs, Model& model) {
  if (reqs.empty()) throw ContractError("prepare_conditioning: empty batch");
  std::vector<torch::Tensor> x, m, s;
  std::vector<ReferenceImage> refs;
  for (const auto* r : reqs) {
    validate_request(*r, model);
    x.push_back(to_tensor(r->image));
    m.push_back(to_tensor(r->mask));
    s.push_back(to_tensor(r->sketch & r->mask));
    refs.push_back(r->reference);
  }
  torch::NoGradGuard no_grad;
  const auto dtype = model.unet->parameter_dtype();
  auto images = torch::stack(x);
  auto mask = torch::stack(m);
  SampleConditioning c;
  c.masked = model.codec->encode(images * (1.0 - mask)).to(dtype);
  auto [mlat, slat] = project_mask_sketch(mask, torch::stack(s), model.codec->spatial_factor());
  c.mask = mlat.to(dtype);
  c.sketch = slat.to(dtype);
  {
    AutocastGuard autocast(model.config.precision == "bf16");
    c.cond = as_condition_tokens(encode_references(refs, model.encoder)).to(dtype);
  }
  return c;
}

std::vector<Image> finish_edits(const std::vector<const EditRequest*>& reqs, Model& model,
                                const torch::Tensor& latents) {
  torch::NoGradGuard no_grad;
  auto decoded = model.codec->decode(latents.to(torch::kFloat));
  std::vector<Image> out;
  out.reserve(reqs.size());
  for (size_t i = 0; i < reqs.size(); ++i) {
    const auto* r = reqs[i];
    out.push_back(paste_composite(r->image, r->mask, to_image(decoded[static_cast<int64_t>(i)]), r->feather));
  }
  return out;
}

namespace {

std::vector<Image> compose_group(const std::vector<const EditRequest*>& reqs, Model& model) {
  auto inputs = prepare_conditioning(reqs, model);
  std::vector<SketchSchedule> gating;
  std::vector<at::Generator> gens;
  for (const auto* r : reqs) {
    gating.emplace_back(r->steps, r->rho, r->sketch_phase);
    gens.push_back(make_generator(r->seed));
  }
  const SamplerOptions opts{reqs.front()->steps, reqs.front()->mode, true, model.config.precision == "bf16"};
  auto z = sample(model.unet, model.schedule, inputs, gating, opts, gens);
  return finish_edits(reqs, model, z);
}

}  // namespace

Image compose(const EditRequest& req, Model& model) { return compose_group({&req}, model).front(); }

std::vector<Image> compose_batch(const std::vector<EditRequest>& reqs, Model& model) {
  std::map<std::pair<int, int>, std::vector<size_t>> groups;
  for (size_t i = 0; i < reqs.size(); ++i) {
    groups[{reqs[i].steps, static_cast<int>(reqs[i].mode)}].push_back(i);
  }
  std::vector<Image> out(reqs.size());
  for (const auto& [key, idx] : groups) {
    std::vector<const EditRequest*> group;
    for (size_t i : idx) group.push_back(&reqs[i]);
    auto images = compose_group(group, model);
    for (size_t j = 0; j < idx.size(); ++j) out[idx[j]] = std::move(images[j]);
  }
  return out;
}

Image paste_composite(const Image& x_p, const Bitmap& m, const Image& generated, int feather) {
  if (!x_p.same_shape(generated) || !m.same_shape(x_p)) throw ContractError("paste_composite: shape mismatch");
  if (feather < 0) throw ContractError("paste_composite: feather must be >= 0");
  const int h = x_p.height(), w = x_p.width(), ch = x_p.channels();

  // depth[p] = number of erosions survived, capped at feather.
  std::vector<int> depth(static_cast<size_t>(w) * h, 0);
  if (feather > 0) {
    Bitmap cur = m;
    for (int d = 1; d <= feather && cur.any(); ++d) {
      cur = erode3x3(cur);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (cur.at(y, x)) depth[static_cast<size_t>(y) * w + x] = d;
    }
  }

  Image out = x_p;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m.at(y, x)) continue;
      if (feather == 0) {
        for (int c = 0; c < ch; ++c) out.at(y, x, c) = generated.at(y, x, c);
        continue;
      }
      const float a = float(depth[static_cast<size_t>(y) * w + x] + 1) / float(feather + 1);
      for (int c = 0; c < ch; ++c) {
        out.at(y, x, c) = a * generated.at(y, x, c) + (1.0f - a) * x_p.at(y, x, c);
      }
    }
  }
  return out;
}

ReferenceImage self_reference(const Image& x_p, const Box& ref_bbox, int size) {
  if (ref_bbox.degenerate()) throw ContractError("self_reference: degenerate bbox");
  if (!ref_bbox.inside(x_p.width(), x_p.height())) throw ContractError("self_reference: bbox outside image");
  const auto span = ref_bbox.pixels();
  if (span.width() <= 0 || span.height() <= 0) throw ContractError("self_reference: bbox covers no pixel");
  return resize_reference(crop(x_p, ref_bbox), size, ReferenceSource::self_reference);
}

double sketch_agreement(const Image& result, const Bitmap& sketch, const Bitmap& mask) {
  if (!sketch.same_shape(result) || !mask.same_shape(result)) {
    throw ContractError("sketch_agreement: shape mismatch");
  }
  if (!sketch.any()) throw ContractError("sketch_agreement: empty sketch");
  const int h = result.height(), w = result.width();
  const Image g = sobel_magnitude(result.channels() == 3 ? luma01(result) : result);

  Bitmap interior = erode3x3(mask);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) interior.set(y, x, false);
    }
  }
  double gmax = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (interior.at(y, x)) gmax = std::max(gmax, double(g.at(y, x)));

  double total = 0.0;
  int counted = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!sketch.at(y, x) || !mask.at(y, x)) continue;
      double peak = -1.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w || !interior.at(yy, xx)) continue;
          peak = std::max(peak, double(g.at(yy, xx)));
        }
      }
      if (peak < 0.0) continue;
      total += peak;
      ++counted;
    }
  }
  if (counted == 0) throw ContractError("sketch_agreement: no sketch pixel lies inside the mask interior");
  if (gmax <= 0.0) return 0.0;
  return total / counted / gmax;
}

}  // namespace sketchfill
