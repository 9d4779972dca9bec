#include "sketchfill/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "sketchfill/tensor_util.hpp"

namespace sketchfill {

namespace fs = std::filesystem;

TrainingBatch collate(const std::vector<EditSample>& samples, const Codec& codec, torch::ScalarType dtype) {
  if (samples.empty()) throw ContractError("collate: empty batch");
  std::vector<torch::Tensor> x, m, s, r;
  for (const auto& e : samples) {
    x.push_back(to_tensor(e.x_p));
    m.push_back(to_tensor(e.mask));
    s.push_back(to_tensor(e.sketch));
    r.push_back(to_tensor(e.reference.pixels));
  }
  TrainingBatch b;
  auto images = torch::stack(x);
  auto mask = torch::stack(m);
  torch::NoGradGuard no_grad;
  b.z0 = codec.encode(images).to(dtype);
  b.masked = codec.encode(images * (1.0 - mask)).to(dtype);
  auto [mlat, slat] = project_mask_sketch(mask, torch::stack(s), codec.spatial_factor());
  b.mask = mlat.to(dtype);
  b.sketch = slat.to(dtype);
  b.reference = torch::stack(r).to(dtype);
  return b;
}

torch::Tensor training_loss(const TrainingBatch& batch, const NoisePredictor& predict, const NoiseSchedule& sched,
                            at::Generator& gen) {
  if (batch.size() == 0) throw ContractError("training_loss: empty batch");
  const int64_t b = batch.size();
  auto t = torch::randint(sched.T, {b}, gen, torch::kLong);
  auto eps = torch::randn(batch.z0.sizes(), gen, batch.z0.options());
  auto noisy = forward_diffuse(batch.z0, t, eps, sched);
  auto eps_hat = predict(DenoiserInput{noisy, batch.masked, batch.mask, batch.sketch}, t, batch.reference);
  auto loss = torch::mse_loss(eps_hat.to(eps.scalar_type()), eps);
  if (!std::isfinite(loss.item<double>())) throw TrainingFault("training_loss: non-finite loss");
  return loss;
}

torch::Tensor training_loss(const TrainingBatch& batch, UNet& unet, ReferenceEncoder& encoder,
                            const NoiseSchedule& sched, at::Generator& gen, bool bf16) {
  NoisePredictor predict = [&](const DenoiserInput& in, const torch::Tensor& t, const torch::Tensor& reference) {
    AutocastGuard autocast(bf16);
    auto cond = as_condition_tokens(encoder->forward(reference));
    return denoise(unet, in, t, cond);
  };
  return training_loss(batch, predict, sched, gen);
}

SampleOptions sample_options(const RunConfig& cfg) {
  SampleOptions o;
  o.sketch_threshold = cfg.sketch_threshold;
  o.reference_size = cfg.reference_size;
  return o;
}

std::vector<EditSample> synthesize_batch(const std::vector<Image>& train_images, const RunConfig& cfg,
                                         int phase, int step) {
  if (train_images.empty()) throw ContractError("synthesize_batch: no training images");
  const uint64_t step_seed = derive_seed(cfg.seed, static_cast<uint64_t>(phase), static_cast<uint64_t>(step));
  Rng pick(derive_seed(step_seed, 0));
  const auto opts = sample_options(cfg);
  std::vector<EditSample> out;
  out.reserve(cfg.batch_size);
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto idx = static_cast<size_t>(pick() % train_images.size());
    Rng rng(derive_seed(step_seed, 1, static_cast<uint64_t>(i)));
    out.push_back(make_training_example(train_images[idx], rng, opts));
  }
  return out;
}

at::Generator step_generator(const RunConfig& cfg, int phase, int step) {
  return make_generator(derive_seed(cfg.seed, static_cast<uint64_t>(phase), static_cast<uint64_t>(step)) ^
                        0x5eedfacecafef00dULL);
}

TrainResult train_model(Model& model, const std::vector<Image>& train_images, const TrainOptions& opts) {
  const RunConfig& cfg = model.config;
  const int phase = cfg.phase;
  if (phase == 2 && !model.has_sketch_channel()) {
    throw ContractError("train_model: phase 2 requires a sketch-extended denoiser");
  }
  std::vector<torch::Tensor> params = model.unet->parameters();
  for (auto& p : model.encoder->parameters()) params.push_back(p);
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.learning_rate)
                                      .betas({cfg.adam_beta1, cfg.adam_beta2})
                                      .weight_decay(cfg.weight_decay));

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    log.open(opts.out_dir / ("phase" + std::to_string(phase) + "_loss.jsonl"), std::ios::trunc);
  }

  TrainResult result;
  result.losses.reserve(opts.steps);
  model.set_training(true);
  double window = 0.0;
  int window_n = 0;
  for (int step = 0; step < opts.steps; ++step) {
    auto samples = synthesize_batch(train_images, cfg, phase, step);
    auto batch = collate(samples, *model.codec, model.unet->parameter_dtype());
    auto gen = step_generator(cfg, phase, step);
    auto loss = training_loss(batch, model.unet, model.encoder, model.schedule, gen, cfg.precision == "bf16");
    opt.zero_grad();
    loss.backward();
    if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
    opt.step();

    const double value = loss.item<double>();
    result.losses.push_back(value);
    window += value;
    ++window_n;
    if (opts.on_step) opts.on_step(step, value);
    if (log.is_open() && (step == 0 || (step + 1) % cfg.log_every == 0)) {
      nlohmann::json rec = {{"phase", phase}, {"step", step}, {"loss", value}, {"window_mean", window / window_n}};
      log << rec.dump() << '\n' << std::flush;
      window = 0.0;
      window_n = 0;
    }
    if (!opts.out_dir.empty() && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < opts.steps) {
      model.set_training(false);
      save_checkpoint(opts.out_dir / ("phase" + std::to_string(phase) + "_step" + std::to_string(step + 1) + ".ckpt"),
                      model);
      model.set_training(true);
    }
  }
  model.set_training(false);
  if (!opts.out_dir.empty()) {
    result.final_checkpoint = opts.out_dir / ("phase" + std::to_string(phase) + ".ckpt");
    save_checkpoint(result.final_checkpoint, model);
  }
  return result;
}

}  // namespace sketchfill
