#pragma once

// Joint optimization: L_total = lambda_s * L_SDS + lambda_r * L_rendering,
// AdamW with a one-cycle schedule, gradient clipping, checkpointing.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idnerf/checkpoint.hpp"
#include "idnerf/common.hpp"
#include "idnerf/diffusion.hpp"
#include "idnerf/metrics.hpp"
#include "idnerf/model.hpp"
#include "idnerf/scenes.hpp"

namespace idnerf {

// Sum (or mean) over rays of squared L2 color error.
inline Tensor rendering_loss(const Tensor& rendered, const Tensor& target,
                             bool mean_reduce = true) {
  check(rendered.shape() == target.shape(),
        "rendering_loss: batch shapes differ, " + shape_str(rendered.shape()) +
            " vs " + shape_str(target.shape()));
  Tensor d = sub(rendered, target);
  Tensor s = sum_all(mul(d, d));
  if (!mean_reduce) return s;
  int64_t rays = rendered.shape()[0];
  return scale(s, 1.0 / static_cast<double>(rays));
}

// One-cycle schedule: linear ramp to max_lr at warmup_frac, then linear decay
// to max_lr / final_div. Closed form, so resuming is exact.
struct OneCycle {
  double max_lr = 1e-3;
  double start_div = 25.0;
  double final_div = 1e4;
  double warmup_frac = 0.3;
  int64_t total_steps = 1000;

  double lr(int64_t step) const {
    double s = static_cast<double>(std::min(step, total_steps));
    double peak_at = warmup_frac * static_cast<double>(total_steps);
    if (s <= peak_at) {
      double lo = max_lr / start_div;
      double f = peak_at > 0 ? s / peak_at : 1.0;
      return lo + (max_lr - lo) * f;
    }
    double lo = max_lr / final_div;
    double f = (s - peak_at) / (static_cast<double>(total_steps) - peak_at);
    return max_lr + (lo - max_lr) * f;
  }
};

struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-4;
  int64_t step_count = 0;
  // Moments keyed by parameter name; survives checkpoint round-trips.
  std::map<std::string, std::vector<double>> m, v;

  // lr per parameter (already includes the group learning rate).
  void step(const std::vector<std::pair<std::string, Tensor>>& params,
            const std::map<std::string, double>& lr_by_name) {
    ++step_count;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (const auto& [name, t] : params) {
      Tensor p = t;
      if (!p.has_grad()) continue;
      auto& mv = m[name];
      auto& vv = v[name];
      if (mv.size() != p.values().size()) mv.assign(p.values().size(), 0.0);
      if (vv.size() != p.values().size()) vv.assign(p.values().size(), 0.0);
      double lr = lr_by_name.at(name);
      auto& val = p.values();
      auto& g = p.grad();
      for (size_t i = 0; i < val.size(); ++i) {
        mv[i] = beta1 * mv[i] + (1 - beta1) * g[i];
        vv[i] = beta2 * vv[i] + (1 - beta2) * g[i] * g[i];
        double mh = mv[i] / bc1, vh = vv[i] / bc2;
        val[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * val[i]);
      }
      apply_dtype(val, p.dtype());
    }
  }
};

inline double clip_grad_norm(const NamedParams& params, double max_norm) {
  double total = 0;
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) total += g * g;
  }
  total = std::sqrt(total);
  if (total > max_norm && total > 0) {
    double s = max_norm / total;
    for (const auto& [name, t] : params) {
      Tensor p = t;
      if (!p.has_grad()) continue;
      for (double& g : p.grad()) g *= s;
    }
  }
  return total;
}

struct TrainConfig {
  int64_t rays_per_step = 1024;
  int64_t test_rays = 4096;
  double lambda_s = 1.0;
  double lambda_r = 1.0;
  double lr_backbone_decoder = 5e-5;  // backbone + NeRF decoder group
  double lr_rest = 1e-3;              // remaining modules
  double warmup_frac = 0.3;
  double clip_norm = 1.0;
  // Input triplets are always clustered, like the evaluation protocol's
  // fixed triplets: this fraction of steps clusters around the target
  // itself, the rest around a random pivot view, so clustered inputs at
  // every distance from the target stay in distribution.
  double near_frac = 0.5;
  int64_t total_steps = 2000;
  uint64_t seed = 0;
  bool mean_loss = true;
  int64_t direct_patch = 64;  // patch side for direct-sds mode (clamped to image)

  void validate() const {
    check(lambda_s >= 0 && lambda_r >= 0,
          "TrainConfig: lambda_s and lambda_r must be >= 0");
    check(rays_per_step > 0 && total_steps > 0, "TrainConfig: bad budgets");
  }
};

struct StepMetrics {
  int64_t step = 0;
  double loss_total = 0, loss_render = 0, sds_residual = 0;
  double lr_fast = 0, lr_slow = 0, grad_norm = 0;
};

class Trainer {
 public:
  Trainer(Model model, std::shared_ptr<DenoiserBackend> backend,
          DiffusionSchedule sched, TrainConfig cfg,
          std::vector<LoadedScene> scenes)
      : model_(std::move(model)),
        backend_(std::move(backend)),
        sched_(std::move(sched)),
        cfg_(cfg),
        scenes_(std::move(scenes)),
        rng_(cfg.seed) {
    cfg_.validate();
    check(!scenes_.empty(), "Trainer: no scenes");
    model_.params(params_);
    for (const auto& [name, t] : params_) {
      bool slow = name.rfind("backbone", 0) == 0 || name.rfind("decoder", 0) == 0;
      lr_scale_[name] = slow ? 0 : 1;  // group id; resolved per step
    }
  }

  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }
  Rng& rng() { return rng_; }

  double current_lr(bool fast_group) const {
    OneCycle oc;
    oc.total_steps = cfg_.total_steps;
    oc.warmup_frac = cfg_.warmup_frac;
    oc.max_lr = fast_group ? cfg_.lr_rest : cfg_.lr_backbone_decoder;
    return oc.lr(step_);
  }

  StepMetrics train_step() {
    const LoadedScene& sc = scenes_[static_cast<size_t>(
        rng_.uniform_int(0, static_cast<int64_t>(scenes_.size()) - 1))];
    // Random target from the training roster. The input triplet is always a
    // jittered cluster (3 of the 5 views nearest a pivot), mirroring the
    // evaluation protocol's clustered triplets: the pivot is the target with
    // probability near_frac, else a random view, so clustered inputs at
    // every distance from the target are seen in training.
    std::vector<int64_t> pool = sc.train_views;
    int64_t ti = rng_.uniform_int(0, static_cast<int64_t>(pool.size()) - 1);
    int64_t target = pool[static_cast<size_t>(ti)];
    pool.erase(pool.begin() + ti);
    bool near = rng_.uniform() < cfg_.near_frac;
    int64_t pivot = target;
    if (!near)
      pivot = pool[static_cast<size_t>(
          rng_.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
    auto cam_dir = [&sc](int64_t v) {
      Vec3 t = sc.cameras[static_cast<size_t>(v)].pose.t;
      return t * (1.0 / t.norm());
    };
    Vec3 pd = cam_dir(pivot);
    std::sort(pool.begin(), pool.end(), [&](int64_t a, int64_t b) {
      double da = cam_dir(a).dot(pd), db = cam_dir(b).dot(pd);
      if (da != db) return da > db;
      return a < b;
    });
    std::vector<int64_t> input_views;
    for (int64_t k = 0; k < model_.cfg.n_views; ++k) {
      int64_t cand = std::min<int64_t>(static_cast<int64_t>(pool.size()),
                                       model_.cfg.n_views + 2 - k);
      int64_t j = rng_.uniform_int(0, cand - 1);
      input_views.push_back(pool[static_cast<size_t>(j)]);
      pool.erase(pool.begin() + j);
    }
    return train_step_on(sc, target, input_views);
  }

  StepMetrics train_step_on(const LoadedScene& sc, int64_t target,
                            const std::vector<int64_t>& input_views) {
    std::vector<Image> imgs;
    std::vector<Camera> cams;
    for (int64_t vi : input_views) {
      imgs.push_back(sc.images[static_cast<size_t>(vi)]);
      cams.push_back(sc.cameras[static_cast<size_t>(vi)]);
    }
    SceneInputs inputs = make_scene_inputs(imgs, cams);
    const Camera& tc = sc.cameras[static_cast<size_t>(target)];
    const Image& timg = sc.images[static_cast<size_t>(target)];

    bool direct = model_.cfg.mode == GuidanceMode::DirectSds;
    std::vector<std::array<int64_t, 2>> pixels;
    if (direct) {
      // Contiguous low-res patch so the rendered image itself can be noised.
      int64_t p = std::min(cfg_.direct_patch, tc.width);
      int64_t x0 = rng_.uniform_int(0, tc.width - p);
      int64_t y0 = rng_.uniform_int(0, tc.height - p);
      for (int64_t y = 0; y < p; ++y)
        for (int64_t x = 0; x < p; ++x) pixels.push_back({x0 + x, y0 + y});
    } else {
      for (int64_t r = 0; r < cfg_.rays_per_step; ++r)
        pixels.push_back({rng_.uniform_int(0, tc.width - 1),
                          rng_.uniform_int(0, tc.height - 1)});
    }

    Tape tape;
    StepMetrics sm;
    sm.step = step_;
    {
      Tape::Scope scope(tape);
      ForwardResult fr = forward_rays(model_, inputs, tc, pixels, &rng_);

      int64_t R = static_cast<int64_t>(pixels.size());
      std::vector<double> tgt(static_cast<size_t>(R * 3));
      for (int64_t r = 0; r < R; ++r)
        for (int c = 0; c < 3; ++c)
          tgt[static_cast<size_t>(r * 3 + c)] =
              timg.at(c, pixels[static_cast<size_t>(r)][1],
                      pixels[static_cast<size_t>(r)][0]);
      Tensor lr_loss = rendering_loss(fr.render.color,
                                      Tensor::from({R, 3}, tgt), cfg_.mean_loss);
      Tensor total = scale(lr_loss, cfg_.lambda_r);

      if (cfg_.lambda_s > 0) {
        if (fr.z_code.numel() > 0) {
          SdsResult sds = sds_loss(fr.z_code, fr.gamma, sched_, *backend_, rng_);
          total = add(total, scale(sds.loss, cfg_.lambda_s));
          sm.sds_residual = sds.residual_norm;
        } else if (direct) {
          // Direct supervision arm: noise the rendered patch itself.
          int64_t p = static_cast<int64_t>(std::llround(
              std::sqrt(static_cast<double>(pixels.size()))));
          Tensor patch = reshape(transpose(fr.render.color), {3, p, p});
          Tensor up = resize_bilinear(patch, model_.cfg.arm.latent_hw,
                                      model_.cfg.arm.latent_hw);
          // Luma as a fourth channel to match the 4-channel denoiser.
          Tensor luma = add(add(scale(slice(up, 0, 0, 1), 0.299),
                                scale(slice(up, 0, 1, 1), 0.587)),
                            scale(slice(up, 0, 2, 1), 0.114));
          Tensor z_img = concat({up, luma}, 0);
          SdsResult sds = sds_loss(z_img, fr.gamma, sched_, *backend_, rng_);
          total = add(total, scale(sds.loss, cfg_.lambda_s));
          sm.sds_residual = sds.residual_norm;
        }
      }

      sm.loss_render = lr_loss.item();
      sm.loss_total = total.item();
      if (!std::isfinite(sm.loss_total)) {
        nlohmann::json dump;
        dump["step"] = step_;
        dump["target_view"] = target;
        dump["input_views"] = input_views;
        dump["loss_render"] = sm.loss_render;
        throw ContractError("train_step: non-finite loss; batch: " + dump.dump());
      }
      tape.backward(total);
    }

    sm.grad_norm = clip_grad_norm(params_, cfg_.clip_norm);
    std::map<std::string, double> lr_by_name;
    double lr_fast = current_lr(true), lr_slow = current_lr(false);
    for (const auto& [name, scale_id] : lr_scale_)
      lr_by_name[name] = scale_id == 1 ? lr_fast : lr_slow;
    opt_.step(params_, lr_by_name);
    for (const auto& [name, t] : params_) {
      Tensor p = t;
      p.zero_grad();
    }
    sm.lr_fast = lr_fast;
    sm.lr_slow = lr_slow;
    ++step_;
    return sm;
  }

  // --- Checkpointing: parameters, optimizer moments, RNG, step counter.

  void save(const std::string& path, const ToyDenoiser* pdm = nullptr) const {
    Checkpoint ck;
    for (const auto& [name, t] : params_) ck.put_tensor(name, t);
    for (const auto& [name, mv] : opt_.m)
      ck.put_tensor("opt.m." + name, Tensor::from({static_cast<int64_t>(mv.size())}, mv));
    for (const auto& [name, vv] : opt_.v)
      ck.put_tensor("opt.v." + name, Tensor::from({static_cast<int64_t>(vv.size())}, vv));
    ck.put_u64("opt.step_count", {static_cast<uint64_t>(opt_.step_count)});
    ck.put_u64("trainer.step", {static_cast<uint64_t>(step_)});
    std::string rs = rng_.serialize();
    std::vector<uint64_t> words;
    std::istringstream is(rs);
    uint64_t w;
    while (is >> w) words.push_back(w);
    ck.put_u64("trainer.rng", words);
    if (pdm) {
      NamedParams pp;
      pdm->params(pp);
      for (const auto& [name, t] : pp) ck.put_tensor(name, t);
    }
    ck.save(path);
  }

  void restore(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    for (auto& [name, t] : params_) {
      Tensor loaded = ck.tensor(name);
      check(loaded.shape() == t.shape(),
            "restore: shape mismatch for " + name);
      t.values() = loaded.values();
    }
    opt_.m.clear();
    opt_.v.clear();
    for (const auto& [name, t] : params_) {
      if (ck.has("opt.m." + name)) opt_.m[name] = ck.tensor("opt.m." + name).values();
      if (ck.has("opt.v." + name)) opt_.v[name] = ck.tensor("opt.v." + name).values();
    }
    opt_.step_count = static_cast<int64_t>(ck.u64("opt.step_count")[0]);
    step_ = static_cast<int64_t>(ck.u64("trainer.step")[0]);
    std::ostringstream os;
    for (uint64_t w : ck.u64("trainer.rng")) os << w << " ";
    rng_.deserialize(os.str());
  }

  const NamedParams& params() const { return params_; }

 private:
  Model model_;
  std::shared_ptr<DenoiserBackend> backend_;
  DiffusionSchedule sched_;
  TrainConfig cfg_;
  std::vector<LoadedScene> scenes_;
  Rng rng_;
  NamedParams params_;
  std::map<std::string, int> lr_scale_;
  AdamW opt_;
  int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Toy denoiser pretraining (declared in diffusion.hpp).

inline PretrainStats pretrain_toy_denoiser(
    ToyDenoiser& denoiser, const std::vector<std::vector<double>>& latents,
    const std::vector<std::vector<double>>& gammas,
    const DiffusionSchedule& sched, int64_t epochs, double lr, uint64_t seed) {
  check(!latents.empty(), "pretrain_toy_denoiser: empty latent corpus");
  check(latents.size() == gammas.size(),
        "pretrain_toy_denoiser: latent/gamma count mismatch");
  // Hold out every fifth sample for the before/after evaluation.
  std::vector<size_t> train_idx, hold_idx;
  for (size_t i = 0; i < latents.size(); ++i)
    (i % 5 == 4 && latents.size() >= 5 ? hold_idx : train_idx).push_back(i);
  auto subset = [&](const std::vector<size_t>& idx,
                    const std::vector<std::vector<double>>& src) {
    std::vector<std::vector<double>> out;
    for (size_t i : idx) out.push_back(src[i]);
    return out;
  };
  auto hold_z = subset(hold_idx.empty() ? train_idx : hold_idx, latents);
  auto hold_g = subset(hold_idx.empty() ? train_idx : hold_idx, gammas);

  PretrainStats stats;
  stats.initial_holdout_mse =
      denoiser_holdout_mse(denoiser, hold_z, hold_g, sched, seed + 17);

  NamedParams params = denoiser.trainable_params();
  AdamW opt;
  opt.weight_decay = 0;
  std::map<std::string, double> lrs;
  for (const auto& [name, t] : params) lrs[name] = lr;
  Rng rng(seed);
  int64_t hw = static_cast<int64_t>(latents[0].size()) / 4;
  int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(hw))));
  for (int64_t e = 0; e < epochs; ++e) {
    for (size_t ii = 0; ii < train_idx.size(); ++ii) {
      size_t i = train_idx[ii];
      int64_t t = rng.uniform_int(sched.t_min, sched.t_max);
      std::vector<double> eps(latents[i].size());
      for (auto& x : eps) x = rng.normal();
      auto z_t = forward_noise(latents[i], t, eps, sched);
      Tape tape;
      {
        Tape::Scope scope(tape);
        Tensor pred = denoiser.forward(
            Tensor::from({4, side, side}, z_t), t,
            Tensor::from({static_cast<int64_t>(gammas[i].size())}, gammas[i]),
            sched);
        Tensor d = sub(pred, Tensor::from({4, side, side}, eps));
        Tensor loss = mean_all(mul(d, d));
        tape.backward(loss);
      }
      opt.step(params, lrs);
      for (const auto& [name, t2] : params) {
        Tensor p = t2;
        p.zero_grad();
      }
    }
  }
  denoiser.freeze();
  stats.final_holdout_mse =
      denoiser_holdout_mse(denoiser, hold_z, hold_g, sched, seed + 17);
  stats.checksum = denoiser.checksum();
  return stats;
}

}  // namespace idnerf
