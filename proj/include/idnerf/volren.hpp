#pragma once

// Differentiable volume rendering: per-point densities and colors composited
// into ray colors, expected depths, and weights.
//
//   C(r)  = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i
//   T_i   = exp(-sum_{j<i} sigma_j delta_j)
//   delta_i = t_{i+1} - t_i, with the last interval far - t_m.

#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

struct RenderOutput {
  Tensor color;    // [R,3]
  Tensor weights;  // [R,m]
  Tensor opacity;  // [R]
  Tensor depth;    // [R], weight-normalized expected depth
};

// sigma: [R,m] nonnegative (activation applied upstream), color: [R,m,3] in
// [0,1], depths: per ray strictly increasing sample depths.
inline RenderOutput composite_rays(const Tensor& sigma, const Tensor& color,
                                   const std::vector<std::vector<double>>& depths,
                                   double far, double depth_eps = 1e-10) {
  check(sigma.rank() == 2, "composite_rays: sigma must be [R,m]");
  int64_t R = sigma.shape()[0], m = sigma.shape()[1];
  check(color.rank() == 3 && color.shape()[0] == R && color.shape()[1] == m &&
            color.shape()[2] == 3,
        "composite_rays: color must be [R,m,3], got " + shape_str(color.shape()));
  check(static_cast<int64_t>(depths.size()) == R,
        "composite_rays: depth rows do not match ray count");

  std::vector<double> delta_v(static_cast<size_t>(R * m));
  std::vector<double> t_v(static_cast<size_t>(R * m));
  for (int64_t r = 0; r < R; ++r) {
    const auto& t = depths[static_cast<size_t>(r)];
    check(static_cast<int64_t>(t.size()) == m,
          "composite_rays: ragged depth row");
    for (int64_t i = 0; i + 1 < m; ++i)
      check(t[i] < t[i + 1], "composite_rays: depths must be strictly increasing");
    for (int64_t i = 0; i < m; ++i) {
      t_v[static_cast<size_t>(r * m + i)] = t[static_cast<size_t>(i)];
      double d = (i + 1 < m) ? t[static_cast<size_t>(i + 1)] - t[static_cast<size_t>(i)]
                             : far - t[static_cast<size_t>(m - 1)];
      delta_v[static_cast<size_t>(r * m + i)] = d;
    }
  }
  Tensor delta = Tensor::from({R, m}, delta_v);
  Tensor tdep = Tensor::from({R, m}, t_v);

  Tensor sd = mul(sigma, delta);                         // sigma_i * delta_i
  Tensor trans = exp(neg(cumsum_exclusive(sd, 1)));      // T_i
  Tensor alpha = sub(Tensor::full({R, m}, 1.0), exp(neg(sd)));
  Tensor w = mul(trans, alpha);                          // [R,m]

  RenderOutput out;
  out.weights = w;
  out.opacity = reduce_sum(w, 1);
  Tensor w3 = reshape(w, {R, m, 1});
  out.color = reduce_sum(mul(w3, color), 1);             // [R,3]
  Tensor wt = reduce_sum(mul(w, tdep), 1);
  out.depth = div(wt, clamp_min(out.opacity, depth_eps));
  return out;
}

inline RenderOutput render_ray(const Tensor& sigma, const Tensor& color,
                               const std::vector<double>& depths, double far) {
  int64_t m = sigma.numel();
  return composite_rays(reshape(sigma, {1, m}), reshape(color, {1, m, 3}),
                        {depths}, far);
}

}  // namespace idnerf
