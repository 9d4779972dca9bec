#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "sketchfill/codec.hpp"
#include "sketchfill/denoiser.hpp"
#include "sketchfill/model.hpp"
#include "sketchfill/reference_encoder.hpp"
#include "sketchfill/tensor_util.hpp"
#include "sketchfill/training.hpp"
#include "test_support.hpp"

using namespace sketchfill;
using sketchfill::fixtures::tiny_config;

namespace {

torch::Tensor random_cond(int64_t b, int d, at::Generator& gen) { return torch::randn({b, 1, d}, gen); }

DenoiserInput random_input(int64_t b, int c, int size, at::Generator& gen) {
  DenoiserInput in;
  in.noisy = torch::randn({b, c, size, size}, gen);
  in.masked_image = torch::rand({b, c, size, size}, gen) * 2 - 1;
  in.mask = (torch::rand({b, 1, size, size}, gen) < 0.4).to(torch::kFloat);
  in.sketch = (torch::rand({b, 1, size, size}, gen) < 0.2).to(torch::kFloat);
  return in;
}

}  // namespace

// ---------------------------------------------------------------- codec

TEST(Codec, IdentityIsExact) {
  auto c = make_codec("identity", 4);
  auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
  EXPECT_TRUE(torch::equal(c->encode(x), x));
  EXPECT_TRUE(torch::equal(c->decode(x), x));
  EXPECT_TRUE(torch::equal(c->decode(c->encode(x)), x));
  EXPECT_EQ(c->spatial_factor(), 1);
}

TEST(Codec, ConvCodecShapes) {
  auto c = make_codec("conv", 4, 3);
  auto x = torch::rand({2, 3, 64, 64}) * 2 - 1;
  auto z = c->encode(x);
  EXPECT_EQ(z.sizes(), (std::vector<int64_t>{2, 4, 32, 32}));
  auto y = c->decode(torch::zeros({1, 4, 32, 32}));
  EXPECT_EQ(y.sizes(), (std::vector<int64_t>{1, 3, 64, 64}));
  EXPECT_TRUE(torch::isfinite(y).all().item<bool>());
  EXPECT_LE(y.abs().max().item<double>(), 1.0);
  EXPECT_THROW(c->encode(torch::rand({1, 3, 63, 64})), ContractError);
  EXPECT_THROW(make_codec("vae", 4), ConfigError);
}

TEST(Codec, TrainedConvCodecRoundTrip) {
  std::vector<Image> train, held_out;
  for (int i = 0; i < 64; ++i) train.push_back(fixtures::scene_image(32, 100 + i));
  for (int i = 0; i < 16; ++i) held_out.push_back(fixtures::scene_image(32, 9000 + i));
  ConvCodec codec(4, 1);
  codec.train(stack_images(train), 600, 16, 2e-3, 5);
  auto x = stack_images(held_out);
  torch::NoGradGuard ng;
  const double mae = (codec.decode(codec.encode(x)) - x).abs().mean().item<double>() / 2.0;  // [0,1] scale
  RecordProperty("held_out_mae", std::to_string(mae));
  EXPECT_LT(mae, 0.05);
}

TEST(ProjectMaskSketch, FactorOneUnchanged) {
  auto m = (torch::rand({1, 1, 8, 8}) < 0.5).to(torch::kFloat);
  auto s = (torch::rand({1, 1, 8, 8}) < 0.1).to(torch::kFloat);
  auto [pm, ps] = project_mask_sketch(m, s, 1);
  EXPECT_TRUE(torch::equal(pm, m));
  EXPECT_TRUE(torch::equal(ps, s));
}

TEST(ProjectMaskSketch, ThinLineSurvives) {
  auto s = torch::zeros({1, 1, 16, 16});
  s.index_put_({0, 0, 7, torch::indexing::Slice()}, 1.0);  // 1-px horizontal line
  auto [pm, ps] = project_mask_sketch(torch::zeros_like(s), s, 2);
  EXPECT_EQ(ps.sum().item<double>(), 8.0);
  EXPECT_TRUE(torch::equal(ps[0][0][3], torch::ones({8})));
  EXPECT_EQ(pm.sum().item<double>(), 0.0);
}

TEST(ProjectMaskSketch, BinaryAndMonotone) {
  auto gen = make_generator(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = (torch::rand({1, 1, 16, 16}, gen) < 0.1).to(torch::kFloat);
    auto b = torch::maximum(a, (torch::rand({1, 1, 16, 16}, gen) < 0.1).to(torch::kFloat));  // a subset of b
    auto [pa, unused_a] = project_mask_sketch(a, a, 2);
    auto [pb, unused_b] = project_mask_sketch(b, b, 2);
    EXPECT_TRUE(((pa == 0) | (pa == 1)).all().item<bool>());
    EXPECT_TRUE((pa <= pb).all().item<bool>());
  }
}

// ---------------------------------------------------------------- denoiser

TEST(Denoiser, InputChannelCountFollowsLatent) {
  UNetSpec s;
  s.latent_channels = 4;
  EXPECT_EQ(s.input_channels(), 2 * 4 + 2);
  s.sketch_channel = false;
  EXPECT_EQ(s.input_channels(), 2 * 4 + 1);
}

TEST(Denoiser, ConcatOrderIsFixed) {
  DenoiserInput in;
  in.noisy = torch::full({1, 3, 4, 4}, 1.0);
  in.masked_image = torch::full({1, 3, 4, 4}, 2.0);
  in.mask = torch::full({1, 1, 4, 4}, 3.0);
  in.sketch = torch::full({1, 1, 4, 4}, 4.0);
  auto x = in.concat(true, true);
  ASSERT_EQ(x.size(1), 8);
  const float expect[8] = {1, 1, 1, 2, 2, 2, 3, 4};
  for (int c = 0; c < 8; ++c) EXPECT_EQ(x[0][c][0][0].item<float>(), expect[c]);
  in.sketch = torch::zeros({1, 1, 4, 5});
  EXPECT_THROW(in.concat(true, true), ContractError);
}

TEST(Denoiser, OutputShapeAndDeterminism) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, true, 5);
  auto gen = make_generator(1);
  auto in = random_input(3, 3, 16, gen);
  auto cond = random_cond(3, cfg.d_cond, gen);
  auto t = torch::tensor({0, 17, 39}, torch::kLong);
  torch::NoGradGuard ng;
  auto a = denoise(m.unet, in, t, cond);
  auto b = denoise(m.unet, in, t, cond);
  EXPECT_EQ(a.sizes(), in.noisy.sizes());
  EXPECT_TRUE(torch::equal(a, b));
}

TEST(Denoiser, FiniteOnExtremeInputs) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, true, 6);
  {
    // Random non-zero output layer so the check covers the full graph.
    torch::NoGradGuard ng;
    for (auto& p : m.unet->parameters()) p.add_(0.1 * torch::randn_like(p));
  }
  auto gen = make_generator(2);
  torch::NoGradGuard ng;
  auto t = torch::tensor({5, 30}, torch::kLong);
  auto cond = random_cond(2, cfg.d_cond, gen);
  for (double fill : {0.0, 1.0}) {
    DenoiserInput in{torch::full({2, 3, 16, 16}, fill), torch::full({2, 3, 16, 16}, fill),
                     torch::full({2, 1, 16, 16}, fill), torch::full({2, 1, 16, 16}, fill)};
    EXPECT_TRUE(torch::isfinite(denoise(m.unet, in, t, cond)).all().item<bool>()) << fill;
  }
  EXPECT_TRUE(torch::isfinite(denoise(m.unet, random_input(2, 3, 16, gen), t, cond)).all().item<bool>());
}

TEST(Denoiser, RejectsBadShapes) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, true, 6);
  auto gen = make_generator(2);
  auto t = torch::tensor({5}, torch::kLong);
  torch::NoGradGuard ng;
  EXPECT_THROW(denoise(m.unet, random_input(1, 3, 15, gen), t, random_cond(1, cfg.d_cond, gen)), ContractError);
  EXPECT_THROW(denoise(m.unet, random_input(1, 3, 16, gen), t, random_cond(1, cfg.d_cond + 1, gen)), ContractError);
  EXPECT_THROW(denoise(m.unet, random_input(1, 4, 16, gen), t, random_cond(1, cfg.d_cond, gen)), ContractError);
}

TEST(Denoiser, TimeEmbeddingInjective) {
  RunConfig cfg;
  auto t = torch::arange(cfg.timesteps, torch::kLong);
  auto e = timestep_embedding(t, cfg.time_embed_dim);
  std::set<std::vector<double>> seen;
  for (int i = 0; i < cfg.timesteps; ++i) {
    auto row = e[i].contiguous();
    seen.insert(std::vector<double>(row.data_ptr<double>(), row.data_ptr<double>() + row.numel()));
  }
  EXPECT_EQ(seen.size(), static_cast<size_t>(cfg.timesteps));
}

TEST(Denoiser, ZeroInitExtensionIsBitExact) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 8);
  {
    torch::NoGradGuard ng;
    for (auto& p : m.unet->parameters()) p.add_(0.2 * torch::randn_like(p));
  }
  UNet ext = extend_for_sketch(m.unet);
  auto gen = make_generator(3);
  torch::NoGradGuard ng;
  for (int i = 0; i < 20; ++i) {
    auto in = random_input(5, 3, 16, gen);
    in.sketch = torch::randn({5, 1, 16, 16}, gen) * 10;  // arbitrary, not even binary
    auto cond = random_cond(5, cfg.d_cond, gen);
    auto t = torch::randint(cfg.timesteps, {5}, gen, torch::kLong);
    EXPECT_TRUE(torch::equal(denoise(m.unet, in, t, cond), denoise(ext, in, t, cond)));
  }
}

TEST(Denoiser, ExtensionAddsOneKernelPerOutputChannel) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 8);
  UNet ext = extend_for_sketch(m.unet);
  EXPECT_EQ(parameter_count(*ext) - parameter_count(*m.unet), int64_t{cfg.unet_widths[0]} * 3 * 3);
  EXPECT_TRUE(ext->spec().sketch_channel);
  EXPECT_THROW(extend_for_sketch(ext), ContractError);
}

TEST(Denoiser, SketchChannelIgnoredOnlyWhenFresh) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 9);
  UNet ext = extend_for_sketch(m.unet);
  auto gen = make_generator(4);
  auto in = random_input(2, 3, 16, gen);
  auto cond = random_cond(2, cfg.d_cond, gen);
  auto t = torch::tensor({10, 20}, torch::kLong);
  auto blank = in;
  blank.sketch = torch::zeros_like(in.sketch);
  {
    torch::NoGradGuard ng;
    EXPECT_TRUE(torch::equal(denoise(ext, in, t, cond), denoise(ext, blank, t, cond)));
    // Any non-zero sketch kernel (as after fine-tuning) makes the channel matter.
    for (auto& p : ext->named_parameters()) {
      if (p.key() == "input_sketch.weight") p.value().fill_(0.05);
      if (p.key() == "out_conv.weight") p.value().normal_(0, 0.1);
    }
    const double diff = (denoise(ext, in, t, cond) - denoise(ext, blank, t, cond)).pow(2).sum().item<double>();
    EXPECT_GT(diff, 0.0);
  }
}

TEST(Denoiser, DescriptorRoundTrip) {
  auto spec = UNetSpec::from_config(tiny_config(), true);
  auto kv = spec.to_key_values();
  EXPECT_EQ(UNetSpec::from_key_values(kv), spec);
  kv["unet.input_channels"] = "99";
  EXPECT_THROW(UNetSpec::from_key_values(kv), ContractError);
  kv = spec.to_key_values();
  kv["unet.version"] = "7";
  EXPECT_THROW(UNetSpec::from_key_values(kv), ContractError);
}

// ---------------------------------------------------------------- reference encoder

TEST(ReferenceEncoder, DeterministicAndSized) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 10);
  auto img = fixtures::random_image(16, 3);
  auto a = encode_reference({img}, m.encoder);
  auto b = encode_reference({img}, m.encoder);
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_EQ(a.numel(), cfg.d_cond);
  // Other sizes are resized to the encoder input first.
  ReferenceImage big{fixtures::random_image(40, 4)};
  EXPECT_EQ(encode_reference(big, m.encoder).numel(), cfg.d_cond);
  ReferenceImage wide{resize_bilinear(fixtures::random_image(16, 5), 30, 12)};
  EXPECT_EQ(encode_reference(wide, m.encoder).numel(), cfg.d_cond);
}

TEST(ReferenceEncoder, BatchMatchesSingle) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 10);
  std::vector<ReferenceImage> refs{{fixtures::random_image(16, 1)}, {fixtures::random_image(16, 2)}};
  auto batch = encode_references(refs, m.encoder);
  EXPECT_TRUE(torch::allclose(batch[1], encode_reference(refs[1], m.encoder), 1e-5, 1e-6));
}

TEST(ReferenceEncoder, GradientReachesBackboneAndProjection) {
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 11);
  {
    torch::NoGradGuard ng;
    for (auto& p : m.unet->named_parameters())
      if (p.key().rfind("out_conv", 0) == 0) p.value().normal_(0, 0.1);
  }
  auto gen = make_generator(6);
  TrainingBatch b;
  b.z0 = torch::rand({2, 3, 16, 16}, gen) * 2 - 1;
  b.mask = torch::ones({2, 1, 16, 16});
  b.masked = torch::zeros_like(b.z0);
  b.sketch = torch::zeros({2, 1, 16, 16});
  b.reference = torch::rand({2, 3, 16, 16}, gen) * 2 - 1;
  auto lgen = make_generator(7);
  training_loss(b, m.unet, m.encoder, m.schedule, lgen).backward();
  double backbone = 0, projection = 0;
  for (auto& p : m.encoder->named_parameters()) {
    const double g = p.value().grad().defined() ? p.value().grad().norm().item<double>() : 0.0;
    (p.key().rfind("backbone", 0) == 0 ? backbone : projection) += g;
  }
  EXPECT_GT(backbone, 0.0);
  EXPECT_GT(projection, 0.0);
}

TEST(ResizeReference, Contracts) {
  auto img = fixtures::random_image(32, 12);
  auto same = resize_reference(img, 32);
  EXPECT_EQ(same.pixels, img);
  Image flat(2, 2, 3, 0.25f);
  auto up = resize_reference(flat, 32);
  for (float v : up.pixels.data()) EXPECT_FLOAT_EQ(v, 0.25f);
  Image wide(64, 32, 3, 0.0f);
  auto r = resize_reference(wide, 32);
  EXPECT_EQ(r.pixels.width(), 32);
  EXPECT_EQ(r.pixels.height(), 32);
  EXPECT_THROW(resize_reference(Image(0, 4, 3), 32), ContractError);
  EXPECT_THROW(resize_reference(Image(4, 4, 1), 32), ContractError);
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsExact) {
  auto dir = fixtures::scratch_dir("ckpt_roundtrip");
  auto cfg = tiny_config();
  Model m = Model::create(cfg, true, 12);
  {
    torch::NoGradGuard ng;
    for (auto& p : m.unet->parameters()) p.add_(0.1 * torch::randn_like(p));
  }
  save_checkpoint(dir / "a.ckpt", m);
  Model r = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(r.config.to_key_values(), m.config.to_key_values());
  EXPECT_EQ(r.unet->spec(), m.unet->spec());
  EXPECT_EQ(r.schedule.alpha_bars, m.schedule.alpha_bars);
  auto a = m.unet->named_parameters();
  for (auto& p : r.unet->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), a[p.key()])) << p.key();
  auto e = m.encoder->named_parameters();
  for (auto& p : r.encoder->named_parameters()) EXPECT_TRUE(torch::equal(p.value(), e[p.key()])) << p.key();
  // Same bytes -> same id; the id is stable across saves of the same weights.
  save_checkpoint(dir / "b.ckpt", r);
  EXPECT_EQ(checkpoint_id(dir / "a.ckpt"), checkpoint_id(dir / "b.ckpt"));
}

TEST(Checkpoint, ConvCodecWeightsSaved) {
  auto dir = fixtures::scratch_dir("ckpt_codec");
  auto cfg = tiny_config();
  cfg.codec = "conv";
  Model m = Model::create(cfg, false, 13);
  save_checkpoint(dir / "c.ckpt", m);
  Model r = load_checkpoint(dir / "c.ckpt");
  auto x = torch::rand({1, 3, 16, 16}) * 2 - 1;
  torch::NoGradGuard ng;
  EXPECT_TRUE(torch::equal(m.codec->encode(x), r.codec->encode(x)));
  EXPECT_EQ(r.unet->spec().latent_channels, cfg.codec_latent_channels);
}

TEST(Checkpoint, RefusesMismatchedArchitecture) {
  auto dir = fixtures::scratch_dir("ckpt_mismatch");
  auto cfg = tiny_config();
  Model m = Model::create(cfg, false, 14);
  save_checkpoint(dir / "p1.ckpt", m);
  EXPECT_THROW(load_checkpoint(dir / "p1.ckpt", UNetSpec::from_config(cfg, true)), ContractError);
  auto other = cfg;
  other.unet_widths = {8, 32};
  EXPECT_THROW(load_checkpoint(dir / "p1.ckpt", UNetSpec::from_config(other, false)), ContractError);
  EXPECT_NO_THROW(load_checkpoint(dir / "p1.ckpt", UNetSpec::from_config(cfg, false)));

  // Tamper with the descriptor: widths in the header no longer match the blob.
  std::ifstream in(dir / "p1.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const std::string from = "unet.widths = 8,16";
  auto pos = bytes.find(from);
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, from.size(), "unet.widths = 8,32");
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), ContractError);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint\n";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), ContractError);
}
