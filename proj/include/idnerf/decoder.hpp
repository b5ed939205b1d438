#pragma once

// Conditional NeRF decoder: (x, d, f_c) -> (sigma, c). Two-stage MLP, the
// density head blind to view direction by construction.

#include <cmath>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/featrepro.hpp"
#include "idnerf/geometry.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

// concat(v, sin(2^k pi v), cos(2^k pi v)) for k = 0..L-1; length 3 + 6L.
inline std::vector<double> positional_encode(const Vec3& v, int64_t L) {
  check(L >= 0, "positional_encode: L must be >= 0");
  std::vector<double> out;
  out.reserve(static_cast<size_t>(3 + 6 * L));
  out.push_back(v.x);
  out.push_back(v.y);
  out.push_back(v.z);
  for (int64_t k = 0; k < L; ++k) {
    double f = std::ldexp(M_PI, static_cast<int>(k));  // 2^k * pi
    for (double c : {v.x, v.y, v.z}) out.push_back(std::sin(f * c));
    for (double c : {v.x, v.y, v.z}) out.push_back(std::cos(f * c));
  }
  return out;
}

struct DecoderConfig {
  int64_t freq_x = 6;   // L_x
  int64_t freq_d = 2;   // L_d
  int64_t cond_dim = 8;
  int64_t trunk_width = 128;
  int64_t trunk_depth = 4;
  int64_t color_width = 64;

  int64_t x_enc_dim() const { return 3 + 6 * freq_x; }
  int64_t d_enc_dim() const { return 3 + 6 * freq_d; }
};

struct DecoderOutput {
  Tensor sigma;  // [B], >= 0 (softplus)
  Tensor color;  // [B,3], in (0,1) (sigmoid)
};

struct NerfDecoder {
  DecoderConfig cfg;
  std::vector<FcLayer> trunk;
  FcLayer sigma_head;
  FcLayer color_hidden, color_out;

  NerfDecoder() = default;
  NerfDecoder(const DecoderConfig& c, Rng& rng, DType dt = DType::f64) : cfg(c) {
    int64_t in = c.x_enc_dim() + c.cond_dim;
    for (int64_t i = 0; i < c.trunk_depth; ++i) {
      trunk.emplace_back(i == 0 ? in : c.trunk_width, c.trunk_width, rng, dt);
    }
    sigma_head = FcLayer(c.trunk_width, 1, rng, dt);
    color_hidden = FcLayer(c.trunk_width + c.d_enc_dim(), c.color_width, rng, dt);
    color_out = FcLayer(c.color_width, 3, rng, dt);
  }

  // x_enc [B, 3+6Lx] const, d_enc [B, 3+6Ld] const, cond [B, cond_dim] diff.
  DecoderOutput decode(const Tensor& x_enc, const Tensor& d_enc,
                       const Tensor& cond) const {
    check(x_enc.rank() == 2 && x_enc.shape()[1] == cfg.x_enc_dim(),
          "decode: x encoding width mismatch, got " + shape_str(x_enc.shape()));
    check(d_enc.rank() == 2 && d_enc.shape()[1] == cfg.d_enc_dim(),
          "decode: d encoding width mismatch, got " + shape_str(d_enc.shape()));
    check(cond.rank() == 2 && cond.shape()[1] == cfg.cond_dim,
          "decode: condition width mismatch, got " + shape_str(cond.shape()));
    Tensor h = concat({x_enc, cond}, 1);
    for (const auto& l : trunk) h = relu(l.forward(h));
    DecoderOutput out;
    out.sigma = reshape(softplus(sigma_head.forward(h)), {x_enc.shape()[0]});
    Tensor ch = relu(color_hidden.forward(concat({h, d_enc}, 1)));
    out.color = sigmoid(color_out.forward(ch));
    return out;
  }

  void params(NamedParams& out, const std::string& prefix = "decoder") const {
    for (size_t i = 0; i < trunk.size(); ++i)
      trunk[i].params(out, prefix + ".trunk" + std::to_string(i));
    sigma_head.params(out, prefix + ".sigma_head");
    color_hidden.params(out, prefix + ".color_hidden");
    color_out.params(out, prefix + ".color_out");
  }
};

inline Tensor encode_points(const std::vector<Vec3>& pts, int64_t L) {
  int64_t B = static_cast<int64_t>(pts.size());
  int64_t w = 3 + 6 * L;
  std::vector<double> v;
  v.reserve(static_cast<size_t>(B * w));
  for (const auto& p : pts) {
    auto e = positional_encode(p, L);
    v.insert(v.end(), e.begin(), e.end());
  }
  return Tensor::from({B, w}, v);
}

}  // namespace idnerf
