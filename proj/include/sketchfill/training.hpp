#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include <torch/torch.h>

#include "sketchfill/data_pipeline.hpp"
#include "sketchfill/model.hpp"

namespace sketchfill {

/// Raised when the training loss stops being finite.
class TrainingFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// EditSamples moved into the diffusion working space.
struct TrainingBatch {
  torch::Tensor z0;          // [B, c_lat, h, w] latent of x_p
  torch::Tensor masked;      // [B, c_lat, h, w] latent of (1 - m) * x_p
  torch::Tensor mask;        // [B, 1, h, w] at latent resolution
  torch::Tensor sketch;      // [B, 1, h, w] at latent resolution
  torch::Tensor reference;   // [B, 3, S, S]

  int64_t size() const { return z0.defined() ? z0.size(0) : 0; }
};

TrainingBatch collate(const std::vector<EditSample>& samples, const Codec& codec,
                      torch::ScalarType dtype = torch::kFloat);

/// eps_hat from (denoiser input, timesteps [B], reference images [B, 3, S, S]).
using NoisePredictor =
    std::function<torch::Tensor(const DenoiserInput&, const torch::Tensor&, const torch::Tensor&)>;

/// Mean squared error between drawn noise and the predictor's output; t ~ U{0..T-1} and
/// eps ~ N(0, 1) are drawn per example from `gen`. Throws TrainingFault when not finite.
torch::Tensor training_loss(const TrainingBatch& batch, const NoisePredictor& predict, const NoiseSchedule& sched,
                            at::Generator& gen);

/// Mean squared error between drawn noise and the prediction. t ~ U{0..T-1} and
/// eps ~ N(0, 1) are drawn per example from `gen`. `bf16` runs the networks under autocast.
torch::Tensor training_loss(const TrainingBatch& batch, UNet& unet, ReferenceEncoder& encoder,
                            const NoiseSchedule& sched, at::Generator& gen, bool bf16 = false);

SampleOptions sample_options(const RunConfig& cfg);

/// Deterministic batch for (config seed, phase, step).
std::vector<EditSample> synthesize_batch(const std::vector<Image>& train_images, const RunConfig& cfg,
                                         int phase, int step);

/// Noise generator paired with synthesize_batch for the same step.
at::Generator step_generator(const RunConfig& cfg, int phase, int step);

struct TrainOptions {
  int steps = 0;
  std::filesystem::path out_dir;  // empty -> no log or checkpoint files
  std::function<void(int step, double loss)> on_step;
};

struct TrainResult {
  std::vector<double> losses;  // one per step
  std::filesystem::path final_checkpoint;
};

/// AdamW over denoiser + encoder for the phase recorded in model.config.phase.
/// Writes phase<N>_loss.jsonl (step 0, then every log_every steps) and checkpoints every
/// checkpoint_every steps plus phase<N>.ckpt at the end when out_dir is set.
TrainResult train_model(Model& model, const std::vector<Image>& train_images, const TrainOptions& opts);

}  // namespace sketchfill
