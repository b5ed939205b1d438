#pragma once

// Benchmark drivers: train small models on the synthetic dataset, score the
// held-out target views (PSNR / SSIM; no perceptual metric, see report
// headers), and run the guidance ablation and input-sparsity sweep.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "idnerf/common.hpp"
#include "idnerf/metrics.hpp"
#include "idnerf/model.hpp"
#include "idnerf/scenes.hpp"
#include "idnerf/trainer.hpp"

namespace idnerf {

struct EvalStats {
  double psnr_mean = 0, psnr_std = 0;
  double ssim_mean = 0, ssim_std = 0;
  int64_t count = 0;
};

struct SceneEval {
  double psnr = 0, ssim = 0;
  bool has_occluder = false;
};

inline EvalStats summarize(const std::vector<SceneEval>& evals) {
  EvalStats s;
  s.count = static_cast<int64_t>(evals.size());
  if (evals.empty()) return s;
  for (const auto& e : evals) {
    s.psnr_mean += e.psnr;
    s.ssim_mean += e.ssim;
  }
  s.psnr_mean /= static_cast<double>(s.count);
  s.ssim_mean /= static_cast<double>(s.count);
  for (const auto& e : evals) {
    s.psnr_std += (e.psnr - s.psnr_mean) * (e.psnr - s.psnr_mean);
    s.ssim_std += (e.ssim - s.ssim_mean) * (e.ssim - s.ssim_mean);
  }
  s.psnr_std = std::sqrt(s.psnr_std / static_cast<double>(s.count));
  s.ssim_std = std::sqrt(s.ssim_std / static_cast<double>(s.count));
  return s;
}

inline double median3(std::vector<double> v) {
  check(!v.empty(), "median: empty sample");
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// Renders the scene's held-out target view from the given input triplet.
inline SceneEval eval_target_view(const Model& model, const LoadedScene& sc,
                                  const std::array<int64_t, 3>& triplet) {
  std::vector<Image> imgs;
  std::vector<Camera> cams;
  for (int64_t vi : triplet) {
    imgs.push_back(sc.images[static_cast<size_t>(vi)]);
    cams.push_back(sc.cameras[static_cast<size_t>(vi)]);
  }
  SceneInputs inputs = make_scene_inputs(imgs, cams);
  const Camera& tc = sc.cameras[static_cast<size_t>(sc.target_view)];
  Image rendered = render_image(model, inputs, tc);
  const Image& gt = sc.images[static_cast<size_t>(sc.target_view)];
  SceneEval e;
  e.psnr = psnr(rendered, gt);
  e.ssim = ssim(rendered, gt);
  e.has_occluder = sc.has_occluder;
  return e;
}

// Worker count: IDNERF_THREADS wins, else available parallelism.
inline int64_t worker_count() {
  if (const char* e = std::getenv("IDNERF_THREADS")) {
    int64_t n = std::atoll(e);
    check(n >= 1, "IDNERF_THREADS must be >= 1");
    return n;
  }
  return std::max<int64_t>(1, std::thread::hardware_concurrency());
}

// Evaluation parallelizes across scenes: renders only read the model, and
// each worker thread sees no active tape.
inline std::vector<SceneEval> eval_dataset(
    const Model& model, const std::vector<LoadedScene>& scenes, int level) {
  check(level >= 1 && level <= 3, "eval: sparsity level must be 1..3");
  size_t n = scenes.size();
  std::vector<SceneEval> out(n);
  int64_t workers = std::min<int64_t>(worker_count(), static_cast<int64_t>(n));
  auto run = [&](size_t start, size_t stride) {
    for (size_t i = start; i < n; i += stride)
      out[i] = eval_target_view(
          model, scenes[i],
          scenes[i].sparsity_triplets[static_cast<size_t>(level - 1)]);
  };
  if (workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> threads;
    for (int64_t w = 0; w < workers; ++w)
      threads.emplace_back(run, static_cast<size_t>(w),
                           static_cast<size_t>(workers));
    for (auto& t : threads) t.join();
  }
  return out;
}

using BackendFactory =
    std::function<std::shared_ptr<DenoiserBackend>(const ModelConfig&)>;

// N(0, I) score oracle over the view latent; the default frozen prior for
// the benchmark drivers.
inline BackendFactory standard_normal_backend() {
  return [](const ModelConfig& mc) -> std::shared_ptr<DenoiserBackend> {
    size_t n = static_cast<size_t>(4 * mc.arm.latent_hw * mc.arm.latent_hw);
    return std::make_shared<AnalyticGaussianBackend>(
        std::vector<double>(n, 0.0), 1.0);
  };
}

inline Model train_on_dataset(const std::vector<LoadedScene>& scenes,
                              const ModelConfig& mc, const TrainConfig& tc,
                              const BackendFactory& make_backend,
                              const DiffusionSchedule& sched) {
  Rng init_rng(tc.seed * 1000003 + 7);
  Model model(mc, init_rng);
  TrainConfig tcfg = tc;
  if (mc.mode == GuidanceMode::NoLatent) tcfg.lambda_s = 0;
  Trainer trainer(std::move(model), make_backend(mc), sched, tcfg, scenes);
  for (int64_t s = 0; s < tcfg.total_steps; ++s) trainer.train_step();
  return trainer.model();
}

// ---------------------------------------------------------------------------
// Guidance ablation: no-latent vs scene-latent vs view-latent guidance,
// several seeds each, per-mode medians, ordering verdict.

struct AblationReport {
  std::vector<std::string> modes;  // evaluation order
  std::map<std::string, std::vector<double>> psnr_by_seed;
  std::map<std::string, std::vector<double>> ssim_by_seed;
  std::map<std::string, double> median_psnr, median_ssim;
  bool ordering_ok = false;
  double spread_db = 0;  // best median minus worst median
  std::vector<uint64_t> seeds;
};

inline AblationReport run_ablation(const std::vector<LoadedScene>& scenes,
                                   const ModelConfig& base_mc,
                                   const TrainConfig& base_tc,
                                   const BackendFactory& make_backend,
                                   const DiffusionSchedule& sched,
                                   const std::vector<uint64_t>& seeds,
                                   int eval_level = 1) {
  AblationReport rep;
  rep.seeds = seeds;
  const GuidanceMode order[3] = {GuidanceMode::NoLatent,
                                 GuidanceMode::SceneLatent,
                                 GuidanceMode::Indirect};
  for (GuidanceMode m : order) rep.modes.push_back(mode_name(m));
  for (GuidanceMode m : order) {
    for (uint64_t seed : seeds) {
      ModelConfig mc = base_mc;
      mc.mode = m;
      TrainConfig tc = base_tc;
      tc.seed = seed;
      Model model = train_on_dataset(scenes, mc, tc, make_backend, sched);
      EvalStats st = summarize(eval_dataset(model, scenes, eval_level));
      rep.psnr_by_seed[mode_name(m)].push_back(st.psnr_mean);
      rep.ssim_by_seed[mode_name(m)].push_back(st.ssim_mean);
    }
    rep.median_psnr[mode_name(m)] = median3(rep.psnr_by_seed[mode_name(m)]);
    rep.median_ssim[mode_name(m)] = median3(rep.ssim_by_seed[mode_name(m)]);
  }
  double p_no = rep.median_psnr["no-latent"];
  double p_zs = rep.median_psnr["scene-latent"];
  double p_tv = rep.median_psnr["indirect"];
  rep.spread_db = p_tv - p_no;
  // Trend verdict, not absolute values: each pairwise comparison gets a
  // 0.1 dB slack (medians at this scale carry real seed noise), and the
  // latent pathway must be worth at least 0.1 dB overall.
  const double slack = 0.1;
  rep.ordering_ok = (p_no <= p_zs + slack) && (p_zs <= p_tv + slack) &&
                    (rep.spread_db >= 0.1);
  return rep;
}

// ---------------------------------------------------------------------------
// Input-sparsity sweep: the same two models (with and without the latent
// pathway) evaluated at the three wideness levels; the guidance gap should
// not shrink as the inputs get sparser.

struct SparsityLevelReport {
  int level = 0;
  EvalStats with_latent, without_latent;
  double gap_db = 0;
  std::vector<double> occluder_gaps;  // per occluder scene at this level
};

struct SparsityReport {
  std::vector<SparsityLevelReport> levels;
  bool trend_ok = false;  // gap at level 3 >= gap at level 1
  double occluder_gap_level3 = 0;
};

inline SparsityReport run_sparsity_sweep(const std::vector<LoadedScene>& scenes,
                                         const ModelConfig& base_mc,
                                         const TrainConfig& base_tc,
                                         const BackendFactory& make_backend,
                                         const DiffusionSchedule& sched) {
  ModelConfig mc_with = base_mc;
  mc_with.mode = GuidanceMode::Indirect;
  ModelConfig mc_without = base_mc;
  mc_without.mode = GuidanceMode::NoLatent;
  Model with_latent =
      train_on_dataset(scenes, mc_with, base_tc, make_backend, sched);
  Model without_latent =
      train_on_dataset(scenes, mc_without, base_tc, make_backend, sched);

  SparsityReport rep;
  for (int level = 1; level <= 3; ++level) {
    SparsityLevelReport lr;
    lr.level = level;
    auto ew = eval_dataset(with_latent, scenes, level);
    auto eo = eval_dataset(without_latent, scenes, level);
    lr.with_latent = summarize(ew);
    lr.without_latent = summarize(eo);
    lr.gap_db = lr.with_latent.psnr_mean - lr.without_latent.psnr_mean;
    for (size_t i = 0; i < ew.size(); ++i)
      if (ew[i].has_occluder) lr.occluder_gaps.push_back(ew[i].psnr - eo[i].psnr);
    rep.levels.push_back(lr);
  }
  rep.trend_ok = rep.levels[2].gap_db >= rep.levels[0].gap_db;
  if (!rep.levels[2].occluder_gaps.empty()) {
    for (double g : rep.levels[2].occluder_gaps) rep.occluder_gap_level3 += g;
    rep.occluder_gap_level3 /= static_cast<double>(rep.levels[2].occluder_gaps.size());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization. CSV headers note the metric set explicitly.

inline void write_ablation_report(const std::string& out_dir,
                                  const AblationReport& rep) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/ablation.csv");
    f << "# metrics: psnr, ssim; lpips not computed\n";
    f << "mode,seed,psnr,ssim\n";
    for (const auto& mode : rep.modes)
      for (size_t i = 0; i < rep.seeds.size(); ++i)
        f << mode << "," << rep.seeds[i] << ","
          << rep.psnr_by_seed.at(mode)[i] << ","
          << rep.ssim_by_seed.at(mode)[i] << "\n";
  }
  nlohmann::json j;
  j["modes"] = rep.modes;
  j["seeds"] = rep.seeds;
  j["median_psnr"] = rep.median_psnr;
  j["median_ssim"] = rep.median_ssim;
  j["ordering_ok"] = rep.ordering_ok;
  j["spread_db"] = rep.spread_db;
  j["metrics"] = {"psnr", "ssim"};
  j["lpips"] = "not computed";
  std::ofstream f(out_dir + "/ablation.json");
  f << j.dump(2) << "\n";
}

inline void write_sparsity_report(const std::string& out_dir,
                                  const SparsityReport& rep) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/sparsity.csv");
    f << "# metrics: psnr, ssim; lpips not computed\n";
    f << "level,psnr_with,psnr_without,gap_db,ssim_with,ssim_without\n";
    for (const auto& l : rep.levels)
      f << l.level << "," << l.with_latent.psnr_mean << ","
        << l.without_latent.psnr_mean << "," << l.gap_db << ","
        << l.with_latent.ssim_mean << "," << l.without_latent.ssim_mean << "\n";
  }
  nlohmann::json j;
  j["trend_ok"] = rep.trend_ok;
  j["occluder_gap_level3"] = rep.occluder_gap_level3;
  j["metrics"] = {"psnr", "ssim"};
  j["lpips"] = "not computed";
  j["levels"] = nlohmann::json::array();
  for (const auto& l : rep.levels) {
    nlohmann::json lj;
    lj["level"] = l.level;
    lj["psnr_with"] = l.with_latent.psnr_mean;
    lj["psnr_without"] = l.without_latent.psnr_mean;
    lj["gap_db"] = l.gap_db;
    lj["occluder_gaps"] = l.occluder_gaps;
    j["levels"].push_back(lj);
  }
  std::ofstream f(out_dir + "/sparsity.json");
  f << j.dump(2) << "\n";
}

// Side-by-side comparison strip: ground truth | renders, left to right.
inline void write_comparison_strip(const std::string& path, const Image& gt,
                                   const std::vector<Image>& renders) {
  int64_t H = gt.height, W = gt.width;
  int64_t n = static_cast<int64_t>(renders.size()) + 1;
  Image strip(H, W * n);
  auto blit = [&](const Image& src, int64_t slot) {
    for (int c = 0; c < 3; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          strip.at(c, y, slot * W + x) = src.at(c, y, x);
  };
  blit(gt, 0);
  for (size_t i = 0; i < renders.size(); ++i) {
    check(renders[i].height == H && renders[i].width == W,
          "comparison strip: extent mismatch");
    blit(renders[i], static_cast<int64_t>(i) + 1);
  }
  write_png(path, strip);
}

}  // namespace idnerf
