#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

namespace sketchfill {

enum class ScheduleKind { linear, cosine };
enum class SamplerMode { ddpm, ddim };

ScheduleKind parse_schedule_kind(const std::string& s);
SamplerMode parse_sampler_mode(const std::string& s);
const char* to_string(ScheduleKind k);
const char* to_string(SamplerMode m);

/// Discrete variance schedule. Index t in [0, T) is 0-based: alpha_bars[0] = 1 - betas[0].
/// Only {kind, T, beta_start, beta_end} is ever serialized; the arrays are rebuilt.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::linear;
  int T = 0;
  double beta_start = 0;
  double beta_end = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// alpha_bar at t, with t = -1 meaning the clean sample (alpha_bar = 1).
  double alpha_bar(int t) const { return t < 0 ? 1.0 : alpha_bars.at(static_cast<size_t>(t)); }
};

/// Linear: betas evenly spaced in [beta_start, beta_end].
/// Cosine: the squared-cosine alpha_bar curve (offset 0.008), betas capped at 0.999;
/// the beta range is validated but does not shape the curve.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end, ScheduleKind kind);

/// sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.
torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& eps,
                              const NoiseSchedule& sched);

/// Per-example timesteps: t has shape [B] and indexes the leading dimension of z0.
torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t,
                              const torch::Tensor& eps, const NoiseSchedule& sched);

struct ReverseOptions {
  SamplerMode mode = SamplerMode::ddim;
  bool clip_x0 = true;
};

/// One reverse step from t to t_prev (t_prev < t; -1 lands on the clean estimate).
/// DDIM is deterministic. DDPM uses the posterior variance (eta = 1) and draws noise
/// from `gen` only when t_prev >= 0.
torch::Tensor reverse_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                           int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts,
                           at::Generator& gen);

/// Same step with caller-supplied noise (ignored, and may be undefined, for deterministic steps).
torch::Tensor reverse_step(const torch::Tensor& z_t, const torch::Tensor& eps_hat, int t,
                           int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts,
                           const torch::Tensor& noise);

bool reverse_step_needs_noise(int t, int t_prev, const NoiseSchedule& sched, const ReverseOptions& opts);

/// Evenly strided timesteps in increasing order, floor(i * T / steps) shifted so the
/// last one is T - 1.
std::vector<int> sampling_timesteps(int T, int steps);

at::Generator make_generator(uint64_t seed);

}  // namespace sketchfill
