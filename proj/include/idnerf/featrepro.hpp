#pragma once

// Backbone feature extraction over input views and per-3D-point reprojected
// token assembly: for each view, local feature f_i, local color c_i, mutual
// similarity s_i, and a validity mask, concatenated into one token.

#include <array>
#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/geometry.hpp"
#include "idnerf/random.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct ConvLayer {
  Tensor kernel, bias;
  int64_t stride = 1, padding = 1;

  ConvLayer() = default;
  ConvLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t pad,
            Rng& rng, DType dt = DType::f64)
      : kernel(Tensor::rand_init({cout, cin, k, k}, cin * k * k, rng, dt)),
        bias(Tensor::zeros({cout}, dt)),
        stride(stride_),
        padding(pad) {
    kernel.set_requires_grad();
    bias.set_requires_grad();
  }

  Tensor forward(const Tensor& x) const {
    Tensor y = conv2d(x, kernel, stride, padding);
    return add(y, reshape(bias, {bias.numel(), 1, 1}));
  }

  void params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".kernel", kernel);
    out.emplace_back(prefix + ".bias", bias);
  }
};

struct FcLayer {
  Tensor weight, bias;

  FcLayer() = default;
  FcLayer(int64_t in, int64_t out, Rng& rng, DType dt = DType::f64)
      : weight(Tensor::rand_init({in, out}, in, rng, dt)),
        bias(Tensor::zeros({out}, dt)) {
    weight.set_requires_grad();
    bias.set_requires_grad();
  }

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }

  void params(NamedParams& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

// Small trainable conv backbone standing in for a pretrained matching
// transformer: 3 -> 16 -> 16 -> 16, 3x3, stride 2/1/1 (spatial downscale x2).
struct FeatureEncoder {
  static constexpr int64_t kFeatureDim = 16;
  ConvLayer l1, l2, l3;

  FeatureEncoder() = default;
  explicit FeatureEncoder(Rng& rng, DType dt = DType::f64)
      : l1(3, 16, 3, 2, 1, rng, dt),
        l2(16, 16, 3, 1, 1, rng, dt),
        l3(16, 16, 3, 1, 1, rng, dt) {}

  // image [3,H,W] -> features [16,H/2,W/2]; last layer linear so features
  // stay signed for the cosine similarity.
  Tensor forward(const Tensor& image) const {
    Tensor h = relu(l1.forward(image));
    h = relu(l2.forward(h));
    return l3.forward(h);
  }

  void params(NamedParams& out, const std::string& prefix) const {
    l1.params(out, prefix + ".l1");
    l2.params(out, prefix + ".l2");
    l3.params(out, prefix + ".l3");
  }
};

struct FeaturePlane {
  Tensor features;     // [C_f, H_f, W_f]
  double scale = 0.5;  // feature coords per image pixel
};

inline std::vector<FeaturePlane> extract_features(const FeatureEncoder& enc,
                                                  const std::vector<Tensor>& views) {
  check(!views.empty(), "extract_features: no views");
  for (const auto& v : views)
    check(v.shape() == views[0].shape(),
          "extract_features: mismatched view extents " + shape_str(v.shape()) +
              " vs " + shape_str(views[0].shape()));
  std::vector<FeaturePlane> planes;
  for (const auto& v : views) {
    FeaturePlane p;
    p.features = enc.forward(v);
    p.scale = static_cast<double>(p.features.shape()[2]) /
              static_cast<double>(v.shape()[2]);
    planes.push_back(std::move(p));
  }
  return planes;
}

// Token layout per view: [f (C_f) | c (3) | s (1) | mask (1)], width C_f + 5.
struct ReprojectionResult {
  Tensor tokens;             // [B, N, C_f+5]
  std::vector<double> mask;  // B*N validity copies for downstream masking
  int64_t n_views = 0;
  int64_t token_width = 0;
};

inline ReprojectionResult reproject_points(
    const std::vector<Vec3>& points, const std::vector<Tensor>& view_images,
    const std::vector<FeaturePlane>& planes, const std::vector<Camera>& cameras) {
  int64_t N = static_cast<int64_t>(view_images.size());
  check(N >= 2, "reproject_points: need at least 2 views, got " +
                    std::to_string(N));
  check(planes.size() == view_images.size() && cameras.size() == view_images.size(),
        "reproject_points: views/planes/cameras size mismatch");
  int64_t B = static_cast<int64_t>(points.size());
  int64_t C = planes[0].features.shape()[0];

  // Per-view projections and validity (behind-camera or out-of-frame -> 0).
  std::vector<std::vector<std::array<double, 2>>> uv_img(static_cast<size_t>(N));
  std::vector<std::vector<double>> valid(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    auto& uvs = uv_img[static_cast<size_t>(i)];
    auto& va = valid[static_cast<size_t>(i)];
    uvs.resize(static_cast<size_t>(B));
    va.resize(static_cast<size_t>(B));
    const Camera& cam = cameras[static_cast<size_t>(i)];
    for (int64_t b = 0; b < B; ++b) {
      Projection pr = project(points[static_cast<size_t>(b)], cam);
      bool ok = pr.valid && pr.u >= 0 && pr.u <= static_cast<double>(cam.width) &&
                pr.v >= 0 && pr.v <= static_cast<double>(cam.height);
      va[static_cast<size_t>(b)] = ok ? 1.0 : 0.0;
      // Invalid samples are parked far outside the plane so they read zeros.
      uvs[static_cast<size_t>(b)] = ok ? std::array<double, 2>{pr.u, pr.v}
                                       : std::array<double, 2>{-1e6, -1e6};
    }
  }

  // Fewer than 2 valid views for a point masks the whole token sequence.
  for (int64_t b = 0; b < B; ++b) {
    int nvalid = 0;
    for (int64_t i = 0; i < N; ++i)
      nvalid += valid[static_cast<size_t>(i)][static_cast<size_t>(b)] > 0 ? 1 : 0;
    if (nvalid < 2)
      for (int64_t i = 0; i < N; ++i)
        valid[static_cast<size_t>(i)][static_cast<size_t>(b)] = 0.0;
  }

  std::vector<Tensor> feats(static_cast<size_t>(N)), colors(static_cast<size_t>(N));
  std::vector<Tensor> masks(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    std::vector<std::array<double, 2>> uv_feat = uv_img[static_cast<size_t>(i)];
    double sc = planes[static_cast<size_t>(i)].scale;
    for (auto& uv : uv_feat) {
      uv[0] *= sc;
      uv[1] *= sc;
    }
    Tensor m = Tensor::from({B, 1}, valid[static_cast<size_t>(i)]);
    masks[static_cast<size_t>(i)] = m;
    feats[static_cast<size_t>(i)] =
        mul(bilinear_sample(planes[static_cast<size_t>(i)].features, uv_feat), m);
    colors[static_cast<size_t>(i)] =
        mul(bilinear_sample(view_images[static_cast<size_t>(i)],
                            uv_img[static_cast<size_t>(i)]),
            m);
  }

  // Mutual similarity: mean pairwise cosine over valid partners.
  std::vector<Tensor> norms(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i)
    norms[static_cast<size_t>(i)] = sqrt(add_scalar(
        reduce_sum(mul(feats[static_cast<size_t>(i)], feats[static_cast<size_t>(i)]), 1,
                   true),
        1e-12));
  std::vector<Tensor> sims(static_cast<size_t>(N));
  for (int64_t i = 0; i < N; ++i) {
    Tensor acc = Tensor::zeros({B, 1});
    std::vector<double> cnt(static_cast<size_t>(B), 0.0);
    for (int64_t j = 0; j < N; ++j) {
      if (j == i) continue;
      std::vector<double> pairv(static_cast<size_t>(B));
      for (int64_t b = 0; b < B; ++b)
        pairv[static_cast<size_t>(b)] =
            valid[static_cast<size_t>(i)][static_cast<size_t>(b)] *
            valid[static_cast<size_t>(j)][static_cast<size_t>(b)];
      for (int64_t b = 0; b < B; ++b) cnt[static_cast<size_t>(b)] += pairv[static_cast<size_t>(b)];
      Tensor pv = Tensor::from({B, 1}, pairv);
      Tensor dot = reduce_sum(
          mul(feats[static_cast<size_t>(i)], feats[static_cast<size_t>(j)]), 1, true);
      Tensor cosv = div(dot, mul(norms[static_cast<size_t>(i)],
                                 norms[static_cast<size_t>(j)]));
      acc = add(acc, mul(cosv, pv));
    }
    for (auto& c : cnt) c = std::max(c, 1.0);
    sims[static_cast<size_t>(i)] = div(acc, Tensor::from({B, 1}, cnt));
  }

  std::vector<Tensor> view_tokens;
  for (int64_t i = 0; i < N; ++i) {
    Tensor tok = concat({feats[static_cast<size_t>(i)], colors[static_cast<size_t>(i)],
                         sims[static_cast<size_t>(i)], masks[static_cast<size_t>(i)]},
                        1);  // [B, C+5]
    view_tokens.push_back(reshape(tok, {B, 1, C + 5}));
  }
  ReprojectionResult res;
  res.tokens = concat(view_tokens, 1);  // [B, N, C+5]
  res.n_views = N;
  res.token_width = C + 5;
  res.mask.resize(static_cast<size_t>(B * N));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < N; ++i)
      res.mask[static_cast<size_t>(b * N + i)] =
          valid[static_cast<size_t>(i)][static_cast<size_t>(b)];
  return res;
}

}  // namespace idnerf
