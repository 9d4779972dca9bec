#include "sketchfill/diffusion.hpp"

#include <cmath>
#include <numbers>

#include <ATen/CPUGeneratorImpl.h>

#include "sketchfill/image.hpp"

namespace sketchfill {

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + s + "'");
}

SamplerMode parse_sampler_mode(const std::string& s) {
  if (s == "ddim") return SamplerMode::ddim;
  if (s == "ddpm") return SamplerMode::ddpm;
  throw ConfigError("unknown sampler mode '" + s + "'");
}

const char* to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }
const char* to_string(SamplerMode m) { return m == SamplerMode::ddim ? "ddim" : "ddpm"; }

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind) {
  if (T < 2) throw ConfigError("make_schedule: T must be >= 2");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  if (kind == ScheduleKind::linear) {
    for (int i = 0; i < T; ++i) s.betas[i] = beta_start + (beta_end - beta_start) * i / (T - 1);
  } else {
    constexpr double offset = 0.008;
    auto f = [&](double t) {
      double v = std::cos((t / T + offset) / (1 + offset) * std::numbers::pi / 2);
      return v * v;
    };
    for (int i = 0; i < T; ++i) {
      double b = 1.0 - f(i + 1) / f(i);
      s.betas[i] = std::clamp(b, 1e-8, 0.999);
    }
  }
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    s.alphas[i] = 1.0 - s.betas[i];
    prod *= s.alphas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                              const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) throw ContractError("forward_diffuse: t out of range");
  if (!z0.sizes().equals(eps.sizes())) throw ContractError("forward_diffuse: eps shape mismatch");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t,
                              const torch::Tensor& eps, const NoiseSchedule& sched) {
  if (!z0.sizes().equals(eps.sizes())) throw ContractError("forward_diffuse: eps shape mismatch");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw ContractError("forward_diffuse: t must be [B]");
  auto table = torch::tensor(sched.alpha_bars, torch::kDouble);
  auto ab = table.index_select(0, t.to(torch::kLong));
  std::vector<int64_t> shape(z0.dim(), 1);
  shape[0] = z0.size(0);
  auto a = ab.sqrt().to(z0.scalar_type()).view(shape);
  auto b = (1.0 - ab).sqrt().to(z0.scalar_type()).view(shape);
  return a * z0 + b * eps;
}

namespace {

double reverse_sigma(int t, int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts) {
  if (t < 0 || t >= sched.T || t_prev >= t || t_prev < -1) {
    throw ContractError("reverse_step: invalid (t, t_prev)");
  }
  if (opts.mode != SamplerMode::ddpm || t_prev < 0) return 0.0;
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  return std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

}  // namespace

bool reverse_step_needs_noise(int t, int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts) {
  return reverse_sigma(t, t_prev, sched, opts) > 0.0;
}

torch::Tensor reverse_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                           int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts,
                           const torch::Tensor& noise) {
  const double sigma = reverse_sigma(t, t_prev, sched, opts);
  if (!z_t.sizes().equals(eps_hat.sizes())) throw ContractError("reverse_step: eps shape mismatch");
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);

  auto x0 = (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  if (opts.clip_x0) x0 = x0.clamp(-1.0, 1.0);

  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  auto out = std::sqrt(ab_prev) * x0 + dir * eps_hat;
  if (sigma > 0.0) {
    if (!noise.defined() || !noise.sizes().equals(z_t.sizes())) {
      throw ContractError("reverse_step: stochastic step needs noise shaped like z_t");
    }
    out = out + sigma * noise;
  }
  return out;
}

torch::Tensor reverse_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                           int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts,
                           at::Generator& gen) {
  torch::Tensor noise;
  if (reverse_step_needs_noise(t, t_prev, sched, opts)) noise = torch::randn(z_t.sizes(), gen, z_t.options());
  return reverse_step(z_t, eps_hat, t, t_prev, sched, opts, noise);
}

std::vector<int> sampling_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw ContractError("sampling_timesteps: steps must be in [1, T]");
  std::vector<int> ts(steps);
  for (int i = 0; i < steps; ++i) {
    ts[i] = static_cast<int>((static_cast<int64_t>(i) * T) / steps);
  }
  // Land the last step on T-1 so sampling starts at the noisiest level.
  const int shift = (T - 1) - ts.back();
  for (int& t : ts) t += shift;
  return ts;
}

at::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace sketchfill
