#include "idnerf/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace idnerf;

namespace {

ModelConfig tiny_model_cfg(GuidanceMode mode = GuidanceMode::Indirect) {
  ModelConfig mc;
  mc.n_views = 3;
  mc.samples_per_ray = 4;
  mc.mode = mode;
  mc.arm.latent_hw = 8;
  mc.decoder.trunk_width = 8;
  mc.decoder.trunk_depth = 1;
  mc.decoder.color_width = 8;
  mc.decoder.freq_x = 2;
  mc.decoder.freq_d = 1;
  return Model::synced(mc);
}

LoadedScene tiny_scene(uint64_t seed, int64_t hw = 16) {
  Rng rng(seed);
  SceneSpec spec = random_scene(rng, hw, false);
  LoadedScene ls;
  ls.image_size = hw;
  ls.near = spec.near;
  ls.far = spec.far;
  for (int v = 0; v < 6; ++v) {
    double az = 2.0 * M_PI * v / 6.0;
    Camera cam = rig_camera(spec, az, 0.2);
    GroundTruth gt = render_ground_truth(spec, cam, 64);
    ls.images.push_back(gt.image);
    ls.cameras.push_back(cam);
    ls.depths.push_back(gt.depth);
    ls.train_views.push_back(v);
  }
  ls.target_view = 0;
  ls.sparsity_triplets.push_back({1, 2, 3});
  return ls;
}

std::shared_ptr<DenoiserBackend> unit_prior(int64_t latent_hw) {
  size_t n = static_cast<size_t>(4 * latent_hw * latent_hw);
  return std::make_shared<AnalyticGaussianBackend>(std::vector<double>(n, 0.0), 1.0);
}

TrainConfig tiny_train_cfg() {
  TrainConfig tc;
  tc.rays_per_step = 16;
  tc.total_steps = 50;
  tc.lambda_s = 1e-3;
  tc.seed = 9;
  tc.direct_patch = 8;
  return tc;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
}

}  // namespace

TEST(RenderingLoss, ZeroSumAndGradient) {
  Tensor a = Tensor::from({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  EXPECT_DOUBLE_EQ(rendering_loss(a, a).values()[0], 0.0);

  // unit error in every channel of one ray: sum mode totals 3
  Tensor r = Tensor::from({1, 3}, {1.0, 1.0, 1.0});
  Tensor t = Tensor::from({1, 3}, {0.0, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(rendering_loss(r, t, false).values()[0], 3.0);
  EXPECT_DOUBLE_EQ(rendering_loss(r, t, true).values()[0], 3.0);

  // mean mode divides by the ray count
  Tensor r2 = Tensor::from({2, 3}, {1, 1, 1, 1, 1, 1});
  Tensor t2 = Tensor::zeros({2, 3});
  EXPECT_DOUBLE_EQ(rendering_loss(r2, t2, false).values()[0], 6.0);
  EXPECT_DOUBLE_EQ(rendering_loss(r2, t2, true).values()[0], 3.0);

  // gradient: d/dC of mean loss is 2 (C - target) / R
  Tensor pred = Tensor::from({2, 3}, {0.3, -0.1, 0.8, 0.2, 0.9, 0.0})
                    .set_requires_grad();
  Tensor tgt = Tensor::from({2, 3}, {0.0, 0.4, 0.5, 0.5, 0.5, 0.5});
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(rendering_loss(pred, tgt, true));
  }
  for (size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(pred.grad()[i], 2.0 * (pred.values()[i] - tgt.values()[i]) / 2.0,
                1e-12);

  EXPECT_THROW(rendering_loss(Tensor::zeros({2, 3}), Tensor::zeros({3, 3})),
               ContractError);
}

TEST(OneCycleSchedule, ClosedForm) {
  OneCycle oc;
  oc.max_lr = 1e-3;
  oc.total_steps = 1000;
  EXPECT_NEAR(oc.lr(0), 1e-3 / 25.0, 1e-18);
  EXPECT_NEAR(oc.lr(300), 1e-3, 1e-18);
  EXPECT_NEAR(oc.lr(1000), 1e-3 / 1e4, 1e-18);
  // linear in both segments
  double lo = 1e-3 / 25.0;
  EXPECT_NEAR(oc.lr(150), lo + (1e-3 - lo) * 0.5, 1e-15);
  double end = 1e-3 / 1e4;
  EXPECT_NEAR(oc.lr(650), 1e-3 + (end - 1e-3) * 0.5, 1e-15);
  // monotone up then down
  for (int64_t s = 1; s <= 300; ++s) EXPECT_GT(oc.lr(s), oc.lr(s - 1));
  for (int64_t s = 301; s <= 1000; ++s) EXPECT_LT(oc.lr(s), oc.lr(s - 1));
  // clamped past the end
  EXPECT_DOUBLE_EQ(oc.lr(5000), oc.lr(1000));
}

TEST(AdamWOpt, SingleStepOracle) {
  Tensor p = Tensor::from({2}, {1.0, -2.0}).set_requires_grad();
  p.ensure_grad();
  p.grad() = {0.5, -0.25};
  AdamW opt;
  opt.weight_decay = 0.01;
  std::map<std::string, double> lrs = {{"p", 1e-2}};
  std::vector<double> before = p.values();
  std::vector<double> g = p.grad();
  opt.step({{"p", p}}, lrs);
  for (size_t i = 0; i < 2; ++i) {
    double m = (1 - 0.9) * g[i];
    double v = (1 - 0.999) * g[i] * g[i];
    double mh = m / (1 - 0.9);
    double vh = v / (1 - 0.999);
    double want = before[i] - 1e-2 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * before[i]);
    EXPECT_NEAR(p.values()[i], want, 1e-15);
  }
  EXPECT_EQ(opt.step_count, 1);
  ASSERT_EQ(opt.m.at("p").size(), 2u);
}

TEST(AdamWOpt, ZeroGradZeroDecayIsNoOp) {
  Tensor p = Tensor::from({3}, {0.5, -0.5, 2.0}).set_requires_grad();
  p.ensure_grad();
  AdamW opt;
  opt.weight_decay = 0;
  opt.step({{"p", p}}, {{"p", 1e-2}});
  EXPECT_DOUBLE_EQ(p.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(p.values()[1], -0.5);
  EXPECT_DOUBLE_EQ(p.values()[2], 2.0);
}

TEST(ClipGradNorm, ScalesOnlyWhenAboveThreshold) {
  Tensor a = Tensor::from({2}, {0.0, 0.0}).set_requires_grad();
  Tensor b = Tensor::from({1}, {0.0}).set_requires_grad();
  a.ensure_grad();
  b.ensure_grad();
  a.grad() = {3.0, 0.0};
  b.grad() = {4.0};
  NamedParams ps = {{"a", a}, {"b", b}};
  double norm = clip_grad_norm(ps, 1.0);
  EXPECT_NEAR(norm, 5.0, 1e-12);
  double after = 0;
  for (double g : a.grad()) after += g * g;
  for (double g : b.grad()) after += g * g;
  EXPECT_NEAR(std::sqrt(after), 1.0, 1e-12);

  a.grad() = {0.3, 0.0};
  b.grad() = {0.4};
  EXPECT_NEAR(clip_grad_norm(ps, 1.0), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.3);
  EXPECT_DOUBLE_EQ(b.grad()[0], 0.4);
}

TEST(TrainerLoop, SameSeedSameFirstLoss) {
  auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  std::vector<LoadedScene> scenes = {tiny_scene(5)};
  auto sched = DiffusionSchedule::linear();

  Rng r1(77);
  Trainer t1(Model(mc, r1), unit_prior(mc.arm.latent_hw), sched, tc, scenes);
  Rng r2(77);
  Trainer t2(Model(mc, r2), unit_prior(mc.arm.latent_hw), sched, tc, scenes);
  StepMetrics a = t1.train_step();
  StepMetrics b = t2.train_step();
  EXPECT_EQ(a.loss_total, b.loss_total);
  EXPECT_EQ(a.loss_render, b.loss_render);
  EXPECT_EQ(a.sds_residual, b.sds_residual);
}

TEST(TrainerLoop, LambdaZeroTurnsOffSds) {
  auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  tc.lambda_s = 0;
  tc.lambda_r = 1;
  std::vector<LoadedScene> scenes = {tiny_scene(6)};
  Rng rng(78);
  Trainer tr(Model(mc, rng), unit_prior(mc.arm.latent_hw),
             DiffusionSchedule::linear(), tc, scenes);
  StepMetrics sm = tr.train_step();
  EXPECT_EQ(sm.loss_total, sm.loss_render);
  EXPECT_EQ(sm.sds_residual, 0.0);
}

TEST(TrainerLoop, LossDecreasesOverShortRun) {
  auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  tc.lambda_s = 0;
  tc.total_steps = 40;
  std::vector<LoadedScene> scenes = {tiny_scene(7)};
  Rng rng(79);
  Trainer tr(Model(mc, rng), unit_prior(mc.arm.latent_hw),
             DiffusionSchedule::linear(), tc, scenes);
  double first = 0, last = 0;
  for (int s = 0; s < 40; ++s) {
    StepMetrics sm = tr.train_step();
    if (s < 5) first += sm.loss_render;
    if (s >= 35) last += sm.loss_render;
  }
  EXPECT_LT(last, first);
}

TEST(TrainerLoop, CheckpointRoundTripBitExact) {
  namespace fs = std::filesystem;
  auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  std::vector<LoadedScene> scenes = {tiny_scene(8)};
  auto sched = DiffusionSchedule::linear();
  std::string dir = (fs::temp_directory_path() / "trainer_ckpt_test").string();
  fs::create_directories(dir);

  Rng rng(80);
  Trainer tr(Model(mc, rng), unit_prior(mc.arm.latent_hw), sched, tc, scenes);
  for (int s = 0; s < 3; ++s) tr.train_step();
  std::string p1 = dir + "/a.idnf";
  tr.save(p1);

  // An uninterrupted continuation...
  StepMetrics cont = tr.train_step();

  // ...must match a restore-then-step continuation exactly.
  Rng rng2(81);
  Trainer tr2(Model(mc, rng2), unit_prior(mc.arm.latent_hw), sched, tc, scenes);
  tr2.restore(p1);
  EXPECT_EQ(tr2.step(), 3);
  StepMetrics resumed = tr2.train_step();
  EXPECT_EQ(resumed.loss_total, cont.loss_total);
  EXPECT_EQ(resumed.loss_render, cont.loss_render);
  EXPECT_EQ(resumed.grad_norm, cont.grad_norm);

  // And a save-load-save cycle reproduces the file byte for byte.
  Rng rng3(82);
  Trainer tr3(Model(mc, rng3), unit_prior(mc.arm.latent_hw), sched, tc, scenes);
  tr3.restore(p1);
  std::string p2 = dir + "/b.idnf";
  tr3.save(p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  fs::remove_all(dir);
}

TEST(TrainerLoop, DirectSdsModeRuns) {
  auto mc = tiny_model_cfg(GuidanceMode::DirectSds);
  auto tc = tiny_train_cfg();
  std::vector<LoadedScene> scenes = {tiny_scene(9)};
  Rng rng(83);
  Trainer tr(Model(mc, rng), unit_prior(mc.arm.latent_hw),
             DiffusionSchedule::linear(), tc, scenes);
  StepMetrics sm = tr.train_step();
  EXPECT_TRUE(std::isfinite(sm.loss_total));
  EXPECT_GT(sm.sds_residual, 0.0);  // the rendered patch was noised and scored
}

TEST(TrainerLoop, RenderOnlyGradientAudit) {
  // With the rendering loss switched off, the SDS gradient flows into the
  // latent-inference stack but never into the NeRF decoder (the estimator
  // cuts the path at the denoiser input).
  auto mc = tiny_model_cfg();
  std::vector<LoadedScene> scenes = {tiny_scene(10)};
  Rng rng(84);
  Model model(mc, rng);
  auto sched = DiffusionSchedule::linear();
  auto backend = unit_prior(mc.arm.latent_hw);

  std::vector<Image> imgs;
  std::vector<Camera> cams;
  for (int64_t v : {1, 2, 3}) {
    imgs.push_back(scenes[0].images[static_cast<size_t>(v)]);
    cams.push_back(scenes[0].cameras[static_cast<size_t>(v)]);
  }
  SceneInputs inputs = make_scene_inputs(imgs, cams);
  Rng drng(85);
  Tape tape;
  {
    Tape::Scope scope(tape);
    ForwardResult fr = forward_rays(model, inputs, scenes[0].cameras[0],
                                    {{0, 0}, {4, 4}}, &drng);
    ASSERT_GT(fr.z_code.numel(), 0);
    SdsResult sds = sds_loss(fr.z_code, fr.gamma, sched, *backend, drng);
    tape.backward(sds.loss);
  }
  NamedParams ps;
  model.params(ps);
  double latent_grad = 0;
  for (const auto& [name, p] : ps) {
    double gsum = 0;
    if (p.has_grad())
      for (double g : p.grad()) gsum += std::fabs(g);
    if (name.rfind("decoder", 0) == 0 || name.rfind("backbone", 0) == 0 ||
        name.rfind("arm", 0) == 0 || name.rfind("cond", 0) == 0) {
      EXPECT_EQ(gsum, 0.0) << name;
    }
    if (name.rfind("latent.b", 0) == 0 || name.rfind("latent.fc", 0) == 0)
      latent_grad += gsum;
  }
  EXPECT_GT(latent_grad, 0.0);
}

TEST(TrainerLoop, FrozenBackendUntouchedByTraining) {
  auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  std::vector<LoadedScene> scenes = {tiny_scene(11)};
  auto sched = DiffusionSchedule::linear();

  // Pretrained toy denoiser as the backend; its weights must stay pinned.
  Rng wrng(86);
  auto pdm = std::make_shared<ToyDenoiser>(
      mc.n_views * ConditionEncoder::kEmbedDim, wrng);
  std::vector<std::vector<double>> lat(
      6, std::vector<double>(static_cast<size_t>(4 * mc.arm.latent_hw *
                                                 mc.arm.latent_hw),
                             0.1));
  std::vector<std::vector<double>> gam(
      6, std::vector<double>(
             static_cast<size_t>(mc.n_views * ConditionEncoder::kEmbedDim), 0.2));
  pretrain_toy_denoiser(*pdm, lat, gam, sched, 1, 1e-3, 5);
  uint64_t before = pdm->checksum();

  Rng rng(87);
  Trainer tr(Model(mc, rng), pdm, sched, tc, scenes);
  for (int s = 0; s < 10; ++s) tr.train_step();
  EXPECT_EQ(pdm->checksum(), before);
}

TEST(TrainerLoop, BadConfigRejected) {
  auto mc = tiny_model_cfg();
  auto tc = tiny_train_cfg();
  tc.lambda_s = -1;
  std::vector<LoadedScene> scenes = {tiny_scene(12)};
  Rng rng(88);
  EXPECT_THROW(Trainer(Model(mc, rng), unit_prior(mc.arm.latent_hw),
                       DiffusionSchedule::linear(), tc, scenes),
               ContractError);
  auto tc2 = tiny_train_cfg();
  Rng rng2(89);
  EXPECT_THROW(Trainer(Model(mc, rng2), unit_prior(mc.arm.latent_hw),
                       DiffusionSchedule::linear(), tc2, {}),
               ContractError);
}
