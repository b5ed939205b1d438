// Command-line front end for the whole pipeline: dataset generation, denoiser
// pretraining, training, rendering, evaluation, and verification.
//
// Exit codes: 0 success, 1 contract violation (bad flags, broken invariants),
// 2 I/O failure. Every run writes a manifest JSON under its --out directory.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "idnerf/evalbench.hpp"
#include "idnerf/gradcheck.hpp"
#include "idnerf/model.hpp"
#include "idnerf/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace idnerf;

namespace {

struct CommonModelFlags {
  std::string mode = "indirect";
  int64_t n_views = 3;
  int64_t samples_per_ray = 64;
  int64_t latent_hw = 64;
  int64_t trunk_width = 128;
  int64_t trunk_depth = 4;
  int64_t color_width = 64;
  std::string dtype = "f64";

  void add_to(CLI::App* app) {
    app->add_option("--mode", mode, "guidance mode")
        ->check(CLI::IsMember({"indirect", "scene-latent", "no-latent", "direct-sds"}));
    app->add_option("--n-views", n_views, "input views per scene");
    app->add_option("--samples-per-ray", samples_per_ray, "depth samples m");
    app->add_option("--latent-hw", latent_hw, "view latent spatial extent");
    app->add_option("--trunk-width", trunk_width, "decoder trunk width");
    app->add_option("--trunk-depth", trunk_depth, "decoder trunk depth");
    app->add_option("--color-width", color_width, "decoder color branch width");
    app->add_option("--dtype", dtype, "parameter precision")
        ->check(CLI::IsMember({"f64", "f32"}));
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.mode = mode_from_name(mode);
    mc.n_views = n_views;
    mc.samples_per_ray = samples_per_ray;
    mc.arm.latent_hw = latent_hw;
    mc.decoder.trunk_width = trunk_width;
    mc.decoder.trunk_depth = trunk_depth;
    mc.decoder.color_width = color_width;
    return Model::synced(mc);
  }
  DType dt() const { return dtype == "f32" ? DType::f32 : DType::f64; }

  json to_json() const {
    return {{"mode", mode},           {"n_views", n_views},
            {"samples_per_ray", samples_per_ray},
            {"latent_hw", latent_hw}, {"trunk_width", trunk_width},
            {"trunk_depth", trunk_depth},
            {"color_width", color_width},
            {"dtype", dtype}};
  }
};

struct TrainFlags {
  TrainConfig tc;
  std::string backend = "analytic";
  std::string pdm_path;

  void add_to(CLI::App* app) {
    app->add_option("--steps", tc.total_steps, "training steps");
    app->add_option("--rays", tc.rays_per_step, "rays per step");
    app->add_option("--test-rays", tc.test_rays, "rays per eval chunk");
    app->add_option("--lambda-s", tc.lambda_s, "guidance loss weight");
    app->add_option("--lambda-r", tc.lambda_r, "rendering loss weight");
    app->add_option("--lr-backbone", tc.lr_backbone_decoder,
                    "max lr, backbone + decoder group");
    app->add_option("--lr-rest", tc.lr_rest, "max lr, remaining modules");
    app->add_option("--clip-norm", tc.clip_norm, "gradient clip global norm");
    app->add_option("--seed", tc.seed, "run seed");
    app->add_option("--backend", backend, "frozen denoiser backend")
        ->check(CLI::IsMember({"analytic", "pdm"}));
    app->add_option("--pdm", pdm_path, "pretrained toy denoiser checkpoint");
  }

  json to_json() const {
    return {{"steps", tc.total_steps},   {"rays", tc.rays_per_step},
            {"test_rays", tc.test_rays}, {"lambda_s", tc.lambda_s},
            {"lambda_r", tc.lambda_r},   {"lr_backbone", tc.lr_backbone_decoder},
            {"lr_rest", tc.lr_rest},     {"clip_norm", tc.clip_norm},
            {"seed", tc.seed},           {"backend", backend}};
  }
};

// CLI11 only honors set_config on the root command, never on a subcommand,
// so config files are expanded by hand before parsing: each key=value line
// becomes a "--key value" pair appended to the argument list, skipped when
// the flag was already given explicitly so the command line always wins.
std::vector<std::string> expand_config_args(std::vector<std::string> args) {
  std::string path;
  for (size_t i = 0; i < args.size();) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ContractError("--config expects a file path");
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i + 2));
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
    }
  }
  if (path.empty()) return args;
  std::ifstream f(path);
  if (!f.good()) throw IoError("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    if (line[0] == '#' || line[0] == ';') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ContractError("config file '" + path + "' line " +
                          std::to_string(lineno) + " is not key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    auto vstart = val.find_first_not_of(" \t");
    val = vstart == std::string::npos ? "" : val.substr(vstart);
    std::string flag = "--" + key;
    bool given = false;
    for (const std::string& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (given) continue;
    args.push_back(flag);
    if (!val.empty()) args.push_back(val);
  }
  return args;
}

void add_config_flag(CLI::App* app) {
  // consumed by expand_config_args before parsing; declared for --help only
  app->add_option("--config", "key=value file of flag defaults");
}

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& config, uint64_t weights_hash) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["weights_hash"] = hex64(weights_hash);
  fs::create_directories(out_dir);
  std::ofstream f(out_dir + "/manifest.json");
  if (!f) throw IoError("cannot write " + out_dir + "/manifest.json");
  f << m.dump(2) << "\n";
}

std::vector<LoadedScene> load_dataset(const std::string& data_dir) {
  std::vector<LoadedScene> scenes;
  for (const auto& d : list_scene_dirs(data_dir)) scenes.push_back(load_scene(d));
  check(!scenes.empty(), "dataset at " + data_dir + " has no scenes");
  return scenes;
}

Checkpoint model_checkpoint(const Model& model) {
  NamedParams p;
  model.params(p);
  Checkpoint ck;
  for (const auto& [name, t] : p) ck.put_tensor(name, t);
  return ck;
}

void load_model_weights(Model& model, const Checkpoint& ck) {
  NamedParams p;
  model.params(p);
  for (auto& [name, t] : p) {
    Tensor loaded = ck.tensor(name);
    check(loaded.shape() == t.shape(), "checkpoint: shape mismatch for " + name +
                                           ", file has " + shape_str(loaded.shape()) +
                                           ", model wants " + shape_str(t.shape()));
    t.values() = loaded.values();
  }
}

std::shared_ptr<DenoiserBackend> make_backend(const std::string& kind,
                                              const std::string& pdm_path,
                                              const ModelConfig& mc) {
  if (kind == "analytic") return standard_normal_backend()(mc);
  check(!pdm_path.empty(), "--backend pdm requires --pdm <checkpoint>");
  Checkpoint ck = Checkpoint::load(pdm_path);
  int64_t gamma_len = static_cast<int64_t>(ck.u64("pdm.gamma_len")[0]);
  check(gamma_len == mc.n_views * ConditionEncoder::kEmbedDim,
        "pdm checkpoint conditions on gamma length " + std::to_string(gamma_len) +
            ", model produces " +
            std::to_string(mc.n_views * ConditionEncoder::kEmbedDim));
  Rng rng(0);
  auto pdm = std::make_shared<ToyDenoiser>(gamma_len, rng);
  NamedParams p;
  pdm->params(p);
  for (auto& [name, t] : p) t.values() = ck.tensor(name).values();
  pdm->freeze();
  check(pdm->checksum() == ck.u64("pdm.checksum")[0],
        "pdm checkpoint checksum mismatch; weights corrupted");
  return pdm;
}

// Bootstrap latent corpus: the randomly initialized (seeded) latent module
// encodes each scene's lead input triplet; the corpus is what the toy
// denoiser learns to denoise.
void corpus_from_dataset(const std::vector<LoadedScene>& scenes,
                         const ModelConfig& mc, uint64_t seed,
                         std::vector<std::vector<double>>& latents,
                         std::vector<std::vector<double>>& gammas) {
  Rng rng(seed);
  Model model(mc, rng);
  for (const auto& sc : scenes) {
    for (int lvl = 0; lvl < 3; ++lvl) {
      const auto& tri = sc.sparsity_triplets[static_cast<size_t>(lvl)];
      std::vector<Image> imgs;
      std::vector<Camera> cams;
      for (int64_t vi : tri) {
        imgs.push_back(sc.images[static_cast<size_t>(vi)]);
        cams.push_back(sc.cameras[static_cast<size_t>(vi)]);
      }
      SceneInputs in = make_scene_inputs(imgs, cams);
      Tensor z_s = model.latent.infer_scene_latent(in.view_images, in.ray_images);
      Tensor ri = ray_image(sc.cameras[static_cast<size_t>(sc.target_view)]).to_tensor();
      latents.push_back(model.latent.infer_view_latent(z_s, ri).values());
      gammas.push_back(model.cond.embed(in.view_images, in.ray_images).values());
    }
  }
}

// --- subcommand bodies --------------------------------------------------

int cmd_gen_data(const std::string& out, uint64_t seed, int64_t scenes,
                 int64_t image_size, int64_t oracle_samples) {
  make_benchmark(out, seed, scenes, image_size, oracle_samples);
  write_manifest(out, "gen-data",
                 {{"seed", seed},
                  {"scenes", scenes},
                  {"image_size", image_size},
                  {"oracle_samples", oracle_samples}},
                 0);
  return 0;
}

int cmd_pretrain(const std::string& data, const std::string& out,
                 const CommonModelFlags& mf, int64_t epochs, double lr,
                 uint64_t seed) {
  auto scenes = load_dataset(data);
  ModelConfig mc = mf.model_config();
  std::vector<std::vector<double>> latents, gammas;
  corpus_from_dataset(scenes, mc, seed, latents, gammas);
  auto sched = DiffusionSchedule::linear();
  Rng rng(seed + 1);
  ToyDenoiser pdm(mc.n_views * ConditionEncoder::kEmbedDim, rng);
  PretrainStats stats = pretrain_toy_denoiser(pdm, latents, gammas, sched,
                                              epochs, lr, seed + 2);
  fs::create_directories(out);
  Checkpoint ck;
  NamedParams p;
  pdm.params(p);
  for (const auto& [name, t] : p) ck.put_tensor(name, t);
  ck.put_u64("pdm.gamma_len", {static_cast<uint64_t>(pdm.gamma_len())});
  ck.put_u64("pdm.checksum", {pdm.checksum()});
  ck.save(out + "/pdm.idnf");
  json cfg = mf.to_json();
  cfg["epochs"] = epochs;
  cfg["lr"] = lr;
  cfg["seed"] = seed;
  cfg["initial_holdout_mse"] = stats.initial_holdout_mse;
  cfg["final_holdout_mse"] = stats.final_holdout_mse;
  cfg["checksum"] = hex64(stats.checksum);
  write_manifest(out, "pretrain-pdm", cfg, ck.content_hash());
  std::cout << "holdout mse " << stats.initial_holdout_mse << " -> "
            << stats.final_holdout_mse << "\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out,
              const CommonModelFlags& mf, const TrainFlags& tf,
              const std::string& resume, int64_t probe_every,
              int64_t checkpoint_every) {
  auto scenes = load_dataset(data);
  ModelConfig mc = mf.model_config();
  auto sched = DiffusionSchedule::linear();
  auto backend = make_backend(tf.backend, tf.pdm_path, mc);
  Rng init_rng(tf.tc.seed * 1000003 + 7);
  Model model(mc, init_rng, mf.dt());
  Trainer trainer(std::move(model), backend, sched, tf.tc, scenes);
  if (!resume.empty()) trainer.restore(resume);

  fs::create_directories(out);
  std::ofstream csv(out + "/metrics.csv", std::ios::app);
  if (!csv) throw IoError("cannot open " + out + "/metrics.csv");
  if (trainer.step() == 0)
    csv << "step,loss_total,loss_render,sds_residual,lr_fast,lr_slow,"
           "grad_norm,probe_psnr\n";

  auto probe = [&]() {
    const LoadedScene& sc = scenes[0];
    std::vector<Image> imgs;
    std::vector<Camera> cams;
    for (int64_t vi : sc.sparsity_triplets[0]) {
      imgs.push_back(sc.images[static_cast<size_t>(vi)]);
      cams.push_back(sc.cameras[static_cast<size_t>(vi)]);
    }
    SceneInputs in = make_scene_inputs(imgs, cams);
    Image r = render_image(trainer.model(), in,
                           sc.cameras[static_cast<size_t>(sc.target_view)]);
    return psnr(r, sc.images[static_cast<size_t>(sc.target_view)]);
  };

  while (trainer.step() < tf.tc.total_steps) {
    StepMetrics sm = trainer.train_step();
    csv << sm.step << "," << sm.loss_total << "," << sm.loss_render << ","
        << sm.sds_residual << "," << sm.lr_fast << "," << sm.lr_slow << ","
        << sm.grad_norm << ",";
    if (probe_every > 0 && (sm.step % probe_every == 0 ||
                            trainer.step() == tf.tc.total_steps))
      csv << probe();
    csv << "\n";
    if (checkpoint_every > 0 && trainer.step() % checkpoint_every == 0)
      trainer.save(out + "/checkpoint.idnf");
  }
  trainer.save(out + "/checkpoint.idnf");
  json cfg;
  cfg["model"] = mf.to_json();
  cfg["train"] = tf.to_json();
  write_manifest(out, "train", cfg,
                 Checkpoint::load(out + "/checkpoint.idnf").content_hash());
  return 0;
}

Model model_from_run(const std::string& run_dir, CommonModelFlags& mf) {
  std::ifstream f(run_dir + "/manifest.json");
  if (!f) throw IoError("missing " + run_dir + "/manifest.json");
  json m = json::parse(f);
  json mj = m.at("config").at("model");
  mf.mode = mj.at("mode").get<std::string>();
  mf.n_views = mj.at("n_views").get<int64_t>();
  mf.samples_per_ray = mj.at("samples_per_ray").get<int64_t>();
  mf.latent_hw = mj.at("latent_hw").get<int64_t>();
  mf.trunk_width = mj.at("trunk_width").get<int64_t>();
  mf.trunk_depth = mj.at("trunk_depth").get<int64_t>();
  mf.color_width = mj.at("color_width").get<int64_t>();
  mf.dtype = mj.at("dtype").get<std::string>();
  Rng rng(0);
  Model model(mf.model_config(), rng, mf.dt());
  load_model_weights(model, Checkpoint::load(run_dir + "/checkpoint.idnf"));
  return model;
}

int cmd_render(const std::string& data, const std::string& run,
               const std::string& out, int64_t scene_idx, int64_t view,
               int level) {
  auto scenes = load_dataset(data);
  check(scene_idx >= 0 && scene_idx < static_cast<int64_t>(scenes.size()),
        "scene index out of range");
  const LoadedScene& sc = scenes[static_cast<size_t>(scene_idx)];
  int64_t target = view >= 0 ? view : sc.target_view;
  check(target >= 0 && target < static_cast<int64_t>(sc.cameras.size()),
        "view index out of range");
  CommonModelFlags mf;
  Model model = model_from_run(run, mf);
  std::vector<Image> imgs;
  std::vector<Camera> cams;
  for (int64_t vi : sc.sparsity_triplets[static_cast<size_t>(level - 1)]) {
    imgs.push_back(sc.images[static_cast<size_t>(vi)]);
    cams.push_back(sc.cameras[static_cast<size_t>(vi)]);
  }
  SceneInputs in = make_scene_inputs(imgs, cams);
  Image r = render_image(model, in, sc.cameras[static_cast<size_t>(target)]);
  fs::create_directories(out);
  write_png(out + "/render.png", r);
  write_f32(out + "/render.f32", r.data);
  write_manifest(out, "render",
                 {{"scene", scene_idx},
                  {"view", target},
                  {"level", level},
                  {"run", run},
                  {"model", mf.to_json()}},
                 model_checkpoint(model).content_hash());
  return 0;
}

int cmd_eval(const std::string& data, const std::string& run,
             const std::string& out, int level) {
  auto scenes = load_dataset(data);
  CommonModelFlags mf;
  Model model = model_from_run(run, mf);
  auto evals = eval_dataset(model, scenes, level);
  EvalStats st = summarize(evals);
  uint64_t whash = model_checkpoint(model).content_hash();
  fs::create_directories(out);
  {
    std::ofstream f(out + "/eval.csv");
    f << "# metrics: psnr, ssim; lpips not computed\n";
    f << "# weights_hash: " << hex64(whash) << "\n";
    f << "scene,psnr,ssim,has_occluder\n";
    for (size_t i = 0; i < evals.size(); ++i)
      f << i << "," << evals[i].psnr << "," << evals[i].ssim << ","
        << (evals[i].has_occluder ? 1 : 0) << "\n";
  }
  json j;
  j["level"] = level;
  j["psnr_mean"] = st.psnr_mean;
  j["psnr_std"] = st.psnr_std;
  j["ssim_mean"] = st.ssim_mean;
  j["ssim_std"] = st.ssim_std;
  j["count"] = st.count;
  j["weights_hash"] = hex64(whash);
  j["metrics"] = {"psnr", "ssim"};
  j["lpips"] = "not computed";
  {
    std::ofstream f(out + "/eval.json");
    f << j.dump(2) << "\n";
  }
  write_manifest(out, "eval", {{"level", level}, {"run", run}}, whash);
  std::cout << "psnr " << st.psnr_mean << " +- " << st.psnr_std << ", ssim "
            << st.ssim_mean << " +- " << st.ssim_std << "\n";
  return 0;
}

int cmd_ablate(const std::string& data, const std::string& out,
               const CommonModelFlags& mf, const TrainFlags& tf,
               const std::vector<uint64_t>& seeds, int eval_level) {
  auto scenes = load_dataset(data);
  auto sched = DiffusionSchedule::linear();
  BackendFactory factory = [&](const ModelConfig& mc) {
    return make_backend(tf.backend, tf.pdm_path, mc);
  };
  AblationReport rep = run_ablation(scenes, mf.model_config(), tf.tc, factory,
                                    sched, seeds, eval_level);
  write_ablation_report(out, rep);
  json cfg;
  cfg["model"] = mf.to_json();
  cfg["train"] = tf.to_json();
  cfg["seeds"] = seeds;
  cfg["eval_level"] = eval_level;
  write_manifest(out, "ablate", cfg, 0);
  for (const auto& mode : rep.modes)
    std::cout << mode << " median psnr " << rep.median_psnr.at(mode) << "\n";
  std::cout << "ordering " << (rep.ordering_ok ? "ok" : "violated")
            << ", spread " << rep.spread_db << " dB\n";
  return 0;
}

int cmd_sweep(const std::string& data, const std::string& out,
              const CommonModelFlags& mf, const TrainFlags& tf) {
  auto scenes = load_dataset(data);
  auto sched = DiffusionSchedule::linear();
  BackendFactory factory = [&](const ModelConfig& mc) {
    return make_backend(tf.backend, tf.pdm_path, mc);
  };
  SparsityReport rep =
      run_sparsity_sweep(scenes, mf.model_config(), tf.tc, factory, sched);
  write_sparsity_report(out, rep);
  json cfg;
  cfg["model"] = mf.to_json();
  cfg["train"] = tf.to_json();
  write_manifest(out, "sweep", cfg, 0);
  for (const auto& l : rep.levels)
    std::cout << "level " << l.level << " gap " << l.gap_db << " dB\n";
  std::cout << "trend " << (rep.trend_ok ? "ok" : "violated") << "\n";
  return 0;
}

int run_gradient_suite() {
  Rng rng(77);
  ModelConfig mc;
  mc.samples_per_ray = 3;
  mc.arm.latent_hw = 8;
  mc.decoder.trunk_width = 8;
  mc.decoder.trunk_depth = 2;
  mc.decoder.color_width = 8;
  Model model(mc, rng);
  NamedParams params;
  model.params(params);

  SceneSpec spec = random_scene(rng, 12, false);
  std::vector<Image> imgs;
  std::vector<Camera> cams;
  for (double az : {-0.4, 0.3, 1.0}) {
    Camera c = rig_camera(spec, az, 0.2);
    imgs.push_back(render_ground_truth(spec, c, 32).image);
    cams.push_back(c);
  }
  SceneInputs in = make_scene_inputs(imgs, cams);
  Camera target = rig_camera(spec, 0.0, 0.2);
  std::vector<std::array<int64_t, 2>> pixels = {{3, 4}, {7, 8}};

  auto loss_fn = [&]() {
    ForwardResult fr = forward_rays(model, in, target, pixels, nullptr);
    return sum_all(mul(fr.render.color, fr.render.color));
  };
  auto res = gradcheck(loss_fn, params, 1e-5, 97);
  std::cout << "pipeline gradcheck: max rel err " << res.max_rel_err << " at "
            << res.worst_param << " (" << res.checked << " probes)\n";
  check(res.max_rel_err < 1e-4, "gradient suite failed: " + res.worst_param);
  return 0;
}

int cmd_verify(const std::string& suite, const std::string& data) {
  if (suite == "gradients") return run_gradient_suite();
  if (suite == "dataset") {
    auto scenes = load_dataset(data);
    for (const auto& sc : scenes) {
      for (const auto& cam : sc.cameras) cam.validate();
      check(sc.sparsity_triplets.size() == 3, "scene missing sparsity triplets");
      check(sc.train_views.size() >= 4, "scene needs >= 4 training views");
      for (const auto& im : sc.images)
        for (double v : im.data)
          check(v >= -1e-9 && v <= 1.0 + 1e-9, "image sample out of [0,1]");
    }
    std::cout << "dataset ok: " << scenes.size() << " scenes\n";
    return 0;
  }
  throw ContractError("unknown verify suite '" + suite + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"indirect diffusion-guided novel view synthesis pipeline"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark");
  std::string gen_out;
  uint64_t gen_seed = 7;
  int64_t gen_scenes = 8, gen_size = 64, gen_samples = 512;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--scenes", gen_scenes, "number of scenes");
  gen->add_option("--image-size", gen_size, "image extent");
  gen->add_option("--oracle-samples", gen_samples, "oracle integration samples");
  add_config_flag(gen);

  // pretrain-pdm
  auto* pre = app.add_subcommand("pretrain-pdm", "pretrain the toy denoiser");
  std::string pre_data, pre_out;
  int64_t pre_epochs = 10;
  double pre_lr = 1e-3;
  uint64_t pre_seed = 5;
  CommonModelFlags pre_mf;
  pre->add_option("--data", pre_data, "dataset directory")->required();
  pre->add_option("--out", pre_out, "output directory")->required();
  pre->add_option("--epochs", pre_epochs, "passes over the corpus");
  pre->add_option("--lr", pre_lr, "adam learning rate");
  pre->add_option("--seed", pre_seed, "pretraining seed");
  pre_mf.add_to(pre);
  add_config_flag(pre);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_out, tr_resume;
  int64_t tr_probe = 100, tr_ckpt_every = 0;
  CommonModelFlags tr_mf;
  TrainFlags tr_tf;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_option("--probe-every", tr_probe, "probe-view PSNR interval (0 = off)");
  tr->add_option("--checkpoint-every", tr_ckpt_every,
                 "periodic checkpoint interval (0 = final only)");
  tr_mf.add_to(tr);
  tr_tf.add_to(tr);
  add_config_flag(tr);

  // render
  auto* rd = app.add_subcommand("render", "render a view from a trained run");
  std::string rd_data, rd_run, rd_out;
  int64_t rd_scene = 0, rd_view = -1;
  int rd_level = 1;
  rd->add_option("--data", rd_data, "dataset directory")->required();
  rd->add_option("--run", rd_run, "training run directory")->required();
  rd->add_option("--out", rd_out, "output directory")->required();
  rd->add_option("--scene", rd_scene, "scene index");
  rd->add_option("--view", rd_view, "view index (-1 = held-out target)");
  rd->add_option("--level", rd_level, "input sparsity level")
      ->check(CLI::Range(1, 3));
  add_config_flag(rd);

  // eval
  auto* ev = app.add_subcommand("eval", "score target views of a trained run");
  std::string ev_data, ev_run, ev_out;
  int ev_level = 1;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--run", ev_run, "training run directory")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--level", ev_level, "input sparsity level")
      ->check(CLI::Range(1, 3));
  add_config_flag(ev);

  // ablate
  auto* ab = app.add_subcommand("ablate", "latent-guidance ablation");
  std::string ab_data, ab_out;
  std::vector<uint64_t> ab_seeds = {1, 2, 3};
  int ab_level = 1;
  CommonModelFlags ab_mf;
  TrainFlags ab_tf;
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--seeds", ab_seeds, "run seeds (median taken)");
  ab->add_option("--eval-level", ab_level, "input sparsity level for scoring")
      ->check(CLI::Range(1, 3));
  ab_mf.add_to(ab);
  ab_tf.add_to(ab);
  add_config_flag(ab);

  // sweep
  auto* sw = app.add_subcommand("sweep", "input-sparsity sweep");
  std::string sw_data, sw_out;
  CommonModelFlags sw_mf;
  TrainFlags sw_tf;
  sw->add_option("--data", sw_data, "dataset directory")->required();
  sw->add_option("--out", sw_out, "output directory")->required();
  sw_mf.add_to(sw);
  sw_tf.add_to(sw);
  add_config_flag(sw);

  // verify
  auto* vf = app.add_subcommand("verify", "run a verification suite");
  std::string vf_suite = "gradients", vf_data;
  vf->add_option("--suite", vf_suite, "suite: gradients | dataset")
      ->check(CLI::IsMember({"gradients", "dataset"}));
  vf->add_option("--data", vf_data, "dataset directory (dataset suite)");
  add_config_flag(vf);

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config_args(std::move(args));
  } catch (const IoError& e) {
    std::cerr << "{\"error\":\"io\",\"detail\":\"" << e.what() << "\"}\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "{\"error\":\"contract\",\"detail\":\"" << e.what() << "\"}\n";
    return 1;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, gen_seed, gen_scenes, gen_size, gen_samples);
    if (*pre) return cmd_pretrain(pre_data, pre_out, pre_mf, pre_epochs, pre_lr, pre_seed);
    if (*tr) return cmd_train(tr_data, tr_out, tr_mf, tr_tf, tr_resume, tr_probe, tr_ckpt_every);
    if (*rd) return cmd_render(rd_data, rd_run, rd_out, rd_scene, rd_view, rd_level);
    if (*ev) return cmd_eval(ev_data, ev_run, ev_out, ev_level);
    if (*ab) return cmd_ablate(ab_data, ab_out, ab_mf, ab_tf, ab_seeds, ab_level);
    if (*sw) return cmd_sweep(sw_data, sw_out, sw_mf, sw_tf);
    if (*vf) return cmd_verify(vf_suite, vf_data);
  } catch (const IoError& e) {
    std::cerr << "{\"error\":\"io\",\"detail\":\"" << e.what() << "\"}\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "{\"error\":\"contract\",\"detail\":\"" << e.what() << "\"}\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "{\"error\":\"contract\",\"detail\":\"" << e.what() << "\"}\n";
    return 1;
  }
  return 1;
}
