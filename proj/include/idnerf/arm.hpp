#pragma once

// Attention-based refinement: compress z_tv to a latent token f_tv, join it
// with the reprojected tokens, run m layers of multi-head self-attention,
// and pool to the refined condition feature f_c.

#include <cmath>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/featrepro.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

struct ArmConfig {
  int64_t token_width = 21;  // reprojected token width C_f + 5
  int64_t layers = 3;        // m
  int64_t dim = 8;           // d
  int64_t head_dim = 4;      // d_p
  int64_t heads = 4;         // h
  int64_t latent_hw = 64;    // z_tv spatial extent (input to the compressor)
  bool pre_norm = true;      // pre-norm + residual around each MSA layer
  bool literal_value_projection = false;  // audit mode: values via W_q
  bool pool_latent_token = false;  // pool = latent-token row instead of masked mean
};

struct MsaLayer {
  std::vector<Tensor> wq, wk, wv;  // per head, [d, d_p]
  Tensor wm;                       // [h*d_p, d]
  Tensor ln_gain, ln_bias;

  MsaLayer() = default;
  MsaLayer(const ArmConfig& cfg, Rng& rng, DType dt = DType::f64) {
    for (int64_t h = 0; h < cfg.heads; ++h) {
      wq.push_back(Tensor::rand_init({cfg.dim, cfg.head_dim}, cfg.dim, rng, dt)
                       .set_requires_grad());
      wk.push_back(Tensor::rand_init({cfg.dim, cfg.head_dim}, cfg.dim, rng, dt)
                       .set_requires_grad());
      wv.push_back(Tensor::rand_init({cfg.dim, cfg.head_dim}, cfg.dim, rng, dt)
                       .set_requires_grad());
    }
    wm = Tensor::rand_init({cfg.heads * cfg.head_dim, cfg.dim},
                           cfg.heads * cfg.head_dim, rng, dt)
             .set_requires_grad();
    ln_gain = Tensor::full({cfg.dim}, 1.0, dt).set_requires_grad();
    ln_bias = Tensor::zeros({cfg.dim}, dt).set_requires_grad();
  }

  void params(NamedParams& out, const std::string& prefix) const {
    for (size_t h = 0; h < wq.size(); ++h) {
      std::string hp = prefix + ".h" + std::to_string(h);
      out.emplace_back(hp + ".wq", wq[h]);
      out.emplace_back(hp + ".wk", wk[h]);
      out.emplace_back(hp + ".wv", wv[h]);
    }
    out.emplace_back(prefix + ".wm", wm);
    out.emplace_back(prefix + ".ln_gain", ln_gain);
    out.emplace_back(prefix + ".ln_bias", ln_bias);
  }
};

// One attention head over a batched token sequence x [B,T,d].
// key_bias [B,1,T] carries -inf (large negative) scores for masked keys.
inline Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                             const Tensor& wv, const Tensor& key_bias,
                             bool literal_value_projection = false) {
  check(x.rank() == 3, "self_attention: tokens must be [B,T,d]");
  int64_t B = x.shape()[0], T = x.shape()[1], d = x.shape()[2];
  check(wq.shape()[0] == d, "self_attention: W_q rows " +
                                std::to_string(wq.shape()[0]) +
                                " != token width " + std::to_string(d));
  int64_t dp = wq.shape()[1];
  Tensor xf = reshape(x, {B * T, d});
  Tensor q = reshape(matmul(xf, wq), {B, T, dp});
  Tensor k = reshape(matmul(xf, wk), {B, T, dp});
  Tensor v = literal_value_projection ? q : reshape(matmul(xf, wv), {B, T, dp});
  Tensor scores = scale(bmm(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dp)));
  scores = add(scores, key_bias);  // broadcast over query rows
  Tensor att = softmax(scores, 2);
  return bmm(att, v);  // [B,T,dp]
}

struct ArmModule {
  ArmConfig cfg;
  FcLayer compress1, compress2;  // z_tv flatten -> 256 -> d
  FcLayer token_proj;            // p_i (C_f+5) -> d
  std::vector<MsaLayer> layers;

  ArmModule() = default;
  ArmModule(const ArmConfig& c, Rng& rng, DType dt = DType::f64)
      : cfg(c),
        compress1(4 * c.latent_hw * c.latent_hw, 256, rng, dt),
        compress2(256, c.dim, rng, dt),
        token_proj(c.token_width, c.dim, rng, dt) {
    for (int64_t i = 0; i < c.layers; ++i) layers.emplace_back(c, rng, dt);
  }

  // z_tv [4,hw,hw] -> f_tv [d]
  Tensor compress_latent(const Tensor& z_tv) const {
    check(z_tv.rank() == 3 && z_tv.shape()[0] == 4 &&
              z_tv.shape()[1] == cfg.latent_hw && z_tv.shape()[2] == cfg.latent_hw,
          "compress_latent: expected [4," + std::to_string(cfg.latent_hw) + "," +
              std::to_string(cfg.latent_hw) + "], got " + shape_str(z_tv.shape()));
    Tensor h = reshape(z_tv, {1, z_tv.numel()});
    h = relu(compress1.forward(h));
    return reshape(compress2.forward(h), {cfg.dim});
  }

  // One MSA layer on [B,T,d] with masking; pre-norm + residual when enabled.
  Tensor msa_layer(const MsaLayer& layer, const Tensor& x, const Tensor& key_bias,
                   const Tensor& query_mask) const {
    Tensor h = cfg.pre_norm ? layer_norm(x, layer.ln_gain, layer.ln_bias) : x;
    std::vector<Tensor> heads;
    for (size_t hh = 0; hh < layer.wq.size(); ++hh)
      heads.push_back(self_attention(h, layer.wq[hh], layer.wk[hh], layer.wv[hh],
                                     key_bias, cfg.literal_value_projection));
    Tensor catd = concat(heads, 2);  // [B,T,h*dp]
    int64_t B = x.shape()[0], T = x.shape()[1];
    Tensor out = reshape(
        matmul(reshape(catd, {B * T, cfg.heads * cfg.head_dim}), layer.wm),
        {B, T, cfg.dim});
    out = mul(out, query_mask);  // masked queries output zeros
    return cfg.pre_norm ? add(x, out) : out;
  }

  // tokens [B,N,token_width] with per-token validity, latent token f_tv [d]
  // (undefined tensor => no latent pathway). Returns f_c [B,d].
  Tensor refine(const Tensor& tokens, const std::vector<double>& token_mask,
                const Tensor& f_tv) const {
    check(tokens.rank() == 3 && tokens.shape()[2] == cfg.token_width,
          "refine: tokens must be [B,N," + std::to_string(cfg.token_width) +
              "], got " + shape_str(tokens.shape()));
    int64_t B = tokens.shape()[0], N = tokens.shape()[1];
    check(static_cast<int64_t>(token_mask.size()) == B * N,
          "refine: token mask size mismatch");
    bool with_latent = f_tv.numel() > 0;
    int64_t T = N + (with_latent ? 1 : 0);

    Tensor proj = reshape(
        token_proj.forward(reshape(tokens, {B * N, cfg.token_width})),
        {B, N, cfg.dim});
    Tensor x;
    if (with_latent) {
      // Latent token at position 0, always valid.
      Tensor lat = mul(reshape(f_tv, {1, 1, cfg.dim}),
                       Tensor::full({B, 1, cfg.dim}, 1.0));
      x = concat({lat, proj}, 1);
    } else {
      x = proj;
    }

    std::vector<double> mask(static_cast<size_t>(B * T));
    for (int64_t b = 0; b < B; ++b) {
      int64_t off = with_latent ? 1 : 0;
      if (with_latent) mask[static_cast<size_t>(b * T)] = 1.0;
      for (int64_t n = 0; n < N; ++n)
        mask[static_cast<size_t>(b * T + off + n)] =
            token_mask[static_cast<size_t>(b * N + n)];
    }
    std::vector<double> bias_v(static_cast<size_t>(B * T));
    for (size_t i = 0; i < mask.size(); ++i)
      bias_v[i] = mask[i] > 0 ? 0.0 : -1e30;
    Tensor key_bias = Tensor::from({B, 1, T}, bias_v);
    Tensor query_mask = Tensor::from({B, T, 1}, mask);

    for (const auto& layer : layers) x = msa_layer(layer, x, key_bias, query_mask);

    if (cfg.pool_latent_token) {
      check(with_latent, "refine: latent-token pooling needs a latent token");
      return reshape(slice(x, 1, 0, 1), {B, cfg.dim});
    }
    // Validity-masked mean over tokens. With zero valid reprojected tokens
    // this degenerates to the transformed latent token alone.
    Tensor masked = mul(x, query_mask);
    std::vector<double> counts(static_cast<size_t>(B), 0.0);
    for (int64_t b = 0; b < B; ++b) {
      double c = 0;
      for (int64_t tix = 0; tix < T; ++tix)
        c += mask[static_cast<size_t>(b * T + tix)];
      counts[static_cast<size_t>(b)] = std::max(c, 1.0);
    }
    Tensor sum = reduce_sum(masked, 1);  // [B,d]
    return div(sum, Tensor::from({B, 1}, counts));
  }

  void params(NamedParams& out, const std::string& prefix = "arm") const {
    compress1.params(out, prefix + ".compress1");
    compress2.params(out, prefix + ".compress2");
    token_proj.params(out, prefix + ".token_proj");
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].params(out, prefix + ".msa" + std::to_string(i));
  }
};

}  // namespace idnerf
