#pragma once

// Central finite-difference gradient checking. The loss closure must be
// deterministic: it is replayed twice per probed element.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

struct GradCheckResult {
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::string worst_param;
  int64_t checked = 0;
};

// rel = |a - n| / max(|a|, |n|, 1): relative where gradients are large,
// absolute where they vanish.
inline double grad_rel_err(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
}

// Checks d loss / d p for every tensor in params. stride > 1 probes every
// stride-th element (deterministic coverage at lower cost).
inline GradCheckResult gradcheck(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, Tensor>>& params,
    double eps = 1e-5, int64_t stride = 1) {
  check(eps > 0 && stride >= 1, "gradcheck: bad eps or stride");
  for (const auto& [name, t] : params) {
    Tensor p = t;
    p.zero_grad();
  }
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  GradCheckResult res;
  for (const auto& [name, t] : params) {
    Tensor p = t;
    for (int64_t i = 0; i < p.numel(); i += stride) {
      double saved = p.values()[static_cast<size_t>(i)];
      p.values()[static_cast<size_t>(i)] = saved + eps;
      double up = loss_fn().item();
      p.values()[static_cast<size_t>(i)] = saved - eps;
      double dn = loss_fn().item();
      p.values()[static_cast<size_t>(i)] = saved;
      double numeric = (up - dn) / (2 * eps);
      double analytic =
          p.has_grad() ? p.grad()[static_cast<size_t>(i)] : 0.0;
      double rel = grad_rel_err(analytic, numeric);
      double abs = std::fabs(analytic - numeric);
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name + "[" + std::to_string(i) + "]";
      }
      res.max_abs_err = std::max(res.max_abs_err, abs);
      ++res.checked;
    }
    p.zero_grad();
  }
  return res;
}

}  // namespace idnerf
