#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "sketchfill/image.hpp"
#include "sketchfill/model.hpp"
#include "sketchfill/reference_image.hpp"

namespace sketchfill {

/// Which end of the reverse trajectory keeps the sketch. `early` is the default
/// plug-and-drop reading (highest-noise steps first); `late` is the inverted variant.
enum class SketchPhase { early, late };

SketchPhase parse_sketch_phase(const std::string& s);
const char* to_string(SketchPhase p);

/// Per-step sketch gating over a reverse trajectory of `total_steps` steps.
/// Step index k = 0 is the first (noisiest) reverse step.
class SketchSchedule {
 public:
  SketchSchedule(int total_steps, double rho, SketchPhase phase = SketchPhase::early);

  static SketchSchedule ungated(int total_steps) { return {total_steps, 1.0}; }

  int total_steps() const { return total_; }
  double rho() const { return rho_; }
  SketchPhase phase() const { return phase_; }
  /// ceil(rho * total_steps)
  int on_steps() const { return on_; }
  bool active(int k) const;

 private:
  int total_;
  double rho_;
  SketchPhase phase_;
  int on_;
};

/// Fixed (non-noise) denoiser inputs for a batch, already in latent space.
struct SampleConditioning {
  torch::Tensor masked;  // [B, c_lat, h, w]
  torch::Tensor mask;    // [B, 1, h, w]
  torch::Tensor sketch;  // [B, 1, h, w]
  torch::Tensor cond;    // [B, 1, d_cond]
};

struct SamplerOptions {
  int steps = 50;
  SamplerMode mode = SamplerMode::ddim;
  bool clip_x0 = true;
  bool bf16 = false;  // autocast the denoiser
};

/// Reverse diffusion from z_T to a clean latent. Row i draws its starting noise and any
/// stochastic-step noise from gens[i]; its sketch channel is zeroed on steps where
/// gating[i] is inactive. `gating` holds one schedule per row or a single shared one.
torch::Tensor sample(UNet& unet, const NoiseSchedule& sched, const SampleConditioning& inputs,
                     const std::vector<SketchSchedule>& gating, const SamplerOptions& opts,
                     std::vector<at::Generator>& gens);

struct EditRequest {
  Image image;       // x_p, RGB in [-1, 1]
  Bitmap mask;       // 1 = regenerate
  Bitmap sketch;     // clipped to the mask on ingestion
  ReferenceImage reference;
  double rho = 1.0;
  int steps = 50;
  uint64_t seed = 0;
  SamplerMode mode = SamplerMode::ddim;
  SketchPhase sketch_phase = SketchPhase::early;
  int feather = 0;   // 0 = hard paste
};

/// Throws ContractError for an empty mask or shapes inconsistent with the model.
void validate_request(const EditRequest& req, const Model& model);

/// Encodes images, masks, sketches and references of a batch of requests.
SampleConditioning prepare_conditioning(const std::vector<const EditRequest*>& reqs, Model& model);

/// Decodes sampled latents and paste-composites them onto each request's image.
std::vector<Image> finish_edits(const std::vector<const EditRequest*>& reqs, Model& model,
                                const torch::Tensor& latents);

Image compose(const EditRequest& req, Model& model);

/// Batched compose. Requests sharing (steps, mode) are sampled together; each row keeps
/// its own seed and sketch schedule.
std::vector<Image> compose_batch(const std::vector<EditRequest>& reqs, Model& model);

/// m * generated + (1 - m) * x_p. With feather > 0 the weight ramps up over `feather`
/// pixels inside the mask; pixels outside the mask are always copied from x_p.
Image paste_composite(const Image& x_p, const Bitmap& m, const Image& generated, int feather = 0);

/// Crop of x_p used as the reference, without augmentation.
ReferenceImage self_reference(const Image& x_p, const Box& ref_bbox, int size);

/// Mean over sketch pixels of the peak normalized Sobel magnitude of the result in the
/// pixel's 3x3 neighbourhood. Gradients are taken only where the 3x3 window lies fully in
/// the mask, and normalized by their maximum there. Constant results score 0.
double sketch_agreement(const Image& result, const Bitmap& sketch, const Bitmap& mask);

}  // namespace sketchfill
