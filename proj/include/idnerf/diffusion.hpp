#pragma once

// DDPM schedule, forward noising, score-distillation gradient on the
// view-level latent, conditioning embedding, and two frozen denoiser
// backends: an analytic Gaussian-score oracle and a small pre-trained
// conv denoiser.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "idnerf/checkpoint.hpp"
#include "idnerf/common.hpp"
#include "idnerf/featrepro.hpp"
#include "idnerf/random.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

struct DiffusionSchedule {
  int64_t steps = 1000;
  std::vector<double> beta;       // beta[t-1] for t in 1..steps
  std::vector<double> alpha_bar;  // alpha_bar[t] for t in 0..steps; [0] = 1
  int64_t t_min = 0, t_max = 0;   // SDS sampling range

  static DiffusionSchedule linear(int64_t steps = 1000, double beta_start = 1e-4,
                                  double beta_end = 2e-2) {
    check(steps >= 1, "DiffusionSchedule: steps must be >= 1");
    DiffusionSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<size_t>(steps));
    s.alpha_bar.resize(static_cast<size_t>(steps) + 1);
    s.alpha_bar[0] = 1.0;
    for (int64_t t = 1; t <= steps; ++t) {
      double b = steps == 1 ? beta_start
                            : beta_start + (beta_end - beta_start) *
                                               static_cast<double>(t - 1) /
                                               static_cast<double>(steps - 1);
      s.beta[static_cast<size_t>(t - 1)] = b;
      s.alpha_bar[static_cast<size_t>(t)] =
          s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - b);
    }
    s.t_min = std::max<int64_t>(1, static_cast<int64_t>(0.02 * static_cast<double>(steps)));
    s.t_max = static_cast<int64_t>(0.98 * static_cast<double>(steps));
    return s;
  }

  double abar(int64_t t) const {
    check(t >= 0 && t <= steps, "schedule: step " + std::to_string(t) +
                                    " out of range [0," + std::to_string(steps) + "]");
    return alpha_bar[static_cast<size_t>(t)];
  }
};

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps
inline std::vector<double> forward_noise(const std::vector<double>& z, int64_t t,
                                         const std::vector<double>& eps,
                                         const DiffusionSchedule& sched) {
  check(t >= 1 && t <= sched.steps,
        "forward_noise: step " + std::to_string(t) + " out of [1," +
            std::to_string(sched.steps) + "]");
  check(z.size() == eps.size(), "forward_noise: shape mismatch");
  double a = std::sqrt(sched.abar(t));
  double b = std::sqrt(1.0 - sched.abar(t));
  std::vector<double> out(z.size());
  for (size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + b * eps[i];
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser backends. Frozen by contract: predictions never join the tape.

class DenoiserBackend {
 public:
  virtual ~DenoiserBackend() = default;
  virtual std::vector<double> predict_noise(const std::vector<double>& z_t,
                                            int64_t t,
                                            const std::vector<double>& gamma,
                                            const DiffusionSchedule& sched) const = 0;
  virtual bool frozen() const = 0;
};

// Exact optimal denoiser when the data law is N(mu, diag(var)):
// the noised marginal is p_t = N(sqrt(abar) mu, abar*var + (1-abar)), and
// eps = -sqrt(1-abar) * grad log p_t(z_t)
//     = sqrt(1-abar) * (z_t - sqrt(abar) mu) / (abar*var + (1-abar)).
class AnalyticGaussianBackend : public DenoiserBackend {
 public:
  AnalyticGaussianBackend(std::vector<double> mu, std::vector<double> var)
      : mu_(std::move(mu)), var_(std::move(var)) {
    check(mu_.size() == var_.size(), "AnalyticGaussian: mu/var size mismatch");
    for (double v : var_)
      check(v > 0, "AnalyticGaussian: variance must be positive");
  }
  AnalyticGaussianBackend(std::vector<double> mu, double var)
      : AnalyticGaussianBackend(std::move(mu),
                                std::vector<double>(mu.size(), var)) {
    check(var > 0, "AnalyticGaussian: variance must be positive");
  }

  std::vector<double> predict_noise(const std::vector<double>& z_t, int64_t t,
                                    const std::vector<double>&,
                                    const DiffusionSchedule& sched) const override {
    check(z_t.size() == mu_.size(), "AnalyticGaussian: latent size mismatch");
    double ab = sched.abar(t);
    double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    std::vector<double> out(z_t.size());
    for (size_t i = 0; i < z_t.size(); ++i)
      out[i] = sb * (z_t[i] - sa * mu_[i]) / (ab * var_[i] + (1.0 - ab));
    return out;
  }
  bool frozen() const override { return true; }

  const std::vector<double>& mu() const { return mu_; }

 private:
  std::vector<double> mu_, var_;
};

inline std::vector<double> analytic_epsilon(const std::vector<double>& z_t,
                                            int64_t t,
                                            const std::vector<double>& mu,
                                            const std::vector<double>& var,
                                            const DiffusionSchedule& sched) {
  return AnalyticGaussianBackend(mu, var).predict_noise(z_t, t, {}, sched);
}

// ---------------------------------------------------------------------------
// Conditioning embedding: weight-shared per-view encoder over the 6-channel
// (image ++ ray image) concat, global average pool, FC, blocks concatenated.

struct ConditionEncoder {
  static constexpr int64_t kEmbedDim = 32;
  ConvLayer c1, c2;
  FcLayer fc;

  ConditionEncoder() = default;
  explicit ConditionEncoder(Rng& rng, DType dt = DType::f64)
      : c1(6, 16, 3, 2, 1, rng, dt),
        c2(16, 32, 3, 2, 1, rng, dt),
        fc(32, kEmbedDim, rng, dt) {}

  Tensor embed_view(const Tensor& view6) const {
    Tensor h = relu(c1.forward(view6));
    h = relu(c2.forward(h));
    int64_t C = h.shape()[0], hw = h.shape()[1] * h.shape()[2];
    Tensor pooled = reduce_mean(reshape(h, {C, hw}), 1);  // [C]
    return reshape(fc.forward(reshape(pooled, {1, C})), {kEmbedDim});
  }

  // gamma, length N * kEmbedDim, view blocks in input order.
  Tensor embed(const std::vector<Tensor>& views,
               const std::vector<Tensor>& ray_images) const {
    check(!views.empty() && views.size() == ray_images.size(),
          "embed_condition: views and ray images must align");
    std::vector<Tensor> blocks;
    for (size_t i = 0; i < views.size(); ++i)
      blocks.push_back(embed_view(concat({views[i], ray_images[i]}, 0)));
    return concat(blocks, 0);
  }

  void params(NamedParams& out, const std::string& prefix = "cond") const {
    c1.params(out, prefix + ".c1");
    c2.params(out, prefix + ".c2");
    fc.params(out, prefix + ".fc");
  }
};

// ---------------------------------------------------------------------------
// Toy conv denoiser standing in for the pretrained diffusion model.
// Input channels: 4 latent + 8 sinusoidal t-embedding + 8 projected gamma.

class ToyDenoiser : public DenoiserBackend {
 public:
  static constexpr int64_t kTimeChannels = 8;
  static constexpr int64_t kGammaChannels = 8;

  ToyDenoiser() = default;
  ToyDenoiser(int64_t gamma_len, Rng& rng, DType dt = DType::f64)
      : gamma_len_(gamma_len),
        gamma_fc_(gamma_len, kGammaChannels, rng, dt),
        c1_(4 + kTimeChannels + kGammaChannels, 32, 3, 1, 1, rng, dt),
        c2_(32, 32, 3, 1, 1, rng, dt),
        c3_(32, 4, 3, 1, 1, rng, dt) {}

  // Differentiable forward for pretraining. z_t [4,h,w].
  Tensor forward(const Tensor& z_t, int64_t t, const Tensor& gamma,
                 const DiffusionSchedule& sched) const {
    check(z_t.rank() == 3 && z_t.shape()[0] == 4,
          "ToyDenoiser: latent must be [4,h,w], got " + shape_str(z_t.shape()));
    int64_t h = z_t.shape()[1], w = z_t.shape()[2];
    double tn = static_cast<double>(t) / static_cast<double>(sched.steps);
    std::vector<double> temb(static_cast<size_t>(kTimeChannels * h * w));
    for (int64_t k = 0; k < kTimeChannels / 2; ++k) {
      double freq = std::pow(100.0, static_cast<double>(k));
      double sv = std::sin(tn * freq), cv = std::cos(tn * freq);
      std::fill_n(temb.begin() + (2 * k) * h * w, h * w, sv);
      std::fill_n(temb.begin() + (2 * k + 1) * h * w, h * w, cv);
    }
    Tensor tch = Tensor::from({kTimeChannels, h, w}, temb);
    Tensor gproj = gamma_fc_.forward(reshape(gamma, {1, gamma_len_}));  // [1,8]
    // broadcast gamma channels over the spatial extent
    Tensor gch = mul(reshape(gproj, {kGammaChannels, 1, 1}),
                     Tensor::full({kGammaChannels, h, w}, 1.0));
    Tensor x = concat({z_t, tch, gch}, 0);
    Tensor hh = relu(c1_.forward(x));
    hh = relu(c2_.forward(hh));
    return c3_.forward(hh);
  }

  std::vector<double> predict_noise(const std::vector<double>& z_t, int64_t t,
                                    const std::vector<double>& gamma,
                                    const DiffusionSchedule& sched) const override {
    check(z_t.size() % 4 == 0, "ToyDenoiser: latent size not divisible by 4");
    int64_t hw = static_cast<int64_t>(z_t.size()) / 4;
    int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(hw))));
    check(side * side == hw, "ToyDenoiser: latent is not square");
    // No tape scope: the prediction never joins the gradient graph.
    Tensor z = Tensor::from({4, side, side}, z_t);
    Tensor g = Tensor::from({gamma_len_}, gamma);
    return forward(z, t, g, sched).values();
  }

  bool frozen() const override { return frozen_; }
  void freeze() { frozen_ = true; }

  void params(NamedParams& out, const std::string& prefix = "pdm") const {
    gamma_fc_.params(out, prefix + ".gamma_fc");
    c1_.params(out, prefix + ".c1");
    c2_.params(out, prefix + ".c2");
    c3_.params(out, prefix + ".c3");
  }

  // Trainable parameter access for pretraining; throws once frozen.
  NamedParams trainable_params() {
    if (frozen_)
      throw ContractError("ToyDenoiser: gradient update attempted on frozen weights");
    NamedParams p;
    params(p);
    return p;
  }

  int64_t gamma_len() const { return gamma_len_; }

  // FNV-1a over the exact parameter bytes; pinned after pretraining.
  uint64_t checksum() const {
    NamedParams p;
    params(p);
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : p) {
      for (char c : name) h = (h ^ static_cast<uint8_t>(c)) * 1099511628211ull;
      for (double v : t.values()) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i)
          h = (h ^ ((bits >> (8 * i)) & 0xff)) * 1099511628211ull;
      }
    }
    return h;
  }

 private:
  int64_t gamma_len_ = 0;
  FcLayer gamma_fc_;
  ConvLayer c1_, c2_, c3_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// SDS gradient. Returns a scalar loss whose gradient w.r.t. z is exactly
//   w(t) * sqrt(abar_t) * (eps_pred(z_t, t, gamma) - eps)
// with no gradient through the denoiser (the SDS estimator convention).

struct SdsResult {
  Tensor loss;      // scalar; backward() injects the gradient into z
  int64_t t = 0;
  double residual_norm = 0;
};

inline SdsResult sds_loss(const Tensor& z, const std::vector<double>& gamma,
                          const DiffusionSchedule& sched,
                          const DenoiserBackend& backend, Rng& rng,
                          double weight = 1.0) {
  check(backend.frozen(), "sds_loss: denoiser backend must be frozen");
  check(z.requires_grad(), "sds_loss: latent must require grad");
  int64_t t = rng.uniform_int(sched.t_min, sched.t_max);
  std::vector<double> eps(static_cast<size_t>(z.numel()));
  for (auto& e : eps) e = rng.normal();
  std::vector<double> z_t = forward_noise(z.values(), t, eps, sched);
  std::vector<double> pred = backend.predict_noise(z_t, t, gamma, sched);
  double sa = std::sqrt(sched.abar(t));
  std::vector<double> coef(eps.size());
  double rn = 0;
  for (size_t i = 0; i < eps.size(); ++i) {
    double r = pred[i] - eps[i];
    rn += r * r;
    coef[i] = weight * sa * r;
  }
  SdsResult res;
  res.t = t;
  res.residual_norm = std::sqrt(rn);
  res.loss = sum_all(mul(Tensor::from(z.shape(), coef), z));
  return res;
}

// ---------------------------------------------------------------------------
// Toy denoiser pretraining: standard epsilon-prediction MSE over a corpus of
// latent / conditioning pairs, then frozen.

struct PretrainStats {
  double initial_holdout_mse = 0;
  double final_holdout_mse = 0;
  uint64_t checksum = 0;
};

inline double denoiser_holdout_mse(const ToyDenoiser& d,
                                   const std::vector<std::vector<double>>& latents,
                                   const std::vector<std::vector<double>>& gammas,
                                   const DiffusionSchedule& sched, uint64_t seed) {
  Rng rng(seed);
  double acc = 0;
  int64_t count = 0;
  for (size_t i = 0; i < latents.size(); ++i) {
    int64_t t = rng.uniform_int(sched.t_min, sched.t_max);
    std::vector<double> eps(latents[i].size());
    for (auto& e : eps) e = rng.normal();
    auto z_t = forward_noise(latents[i], t, eps, sched);
    auto pred = d.predict_noise(z_t, t, gammas[i], sched);
    for (size_t k = 0; k < eps.size(); ++k) {
      double r = pred[k] - eps[k];
      acc += r * r;
      ++count;
    }
  }
  return acc / static_cast<double>(std::max<int64_t>(count, 1));
}

// Defined in trainer.hpp (needs the optimizer); declared here so the CLI can
// include either header first.
inline PretrainStats pretrain_toy_denoiser(ToyDenoiser& denoiser,
                                    const std::vector<std::vector<double>>& latents,
                                    const std::vector<std::vector<double>>& gammas,
                                    const DiffusionSchedule& sched,
                                    int64_t epochs, double lr, uint64_t seed);

}  // namespace idnerf
