#include "idnerf/volren.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "idnerf/gradcheck.hpp"

using namespace idnerf;

namespace {

std::vector<double> midpoints(double near, double far, int64_t m) {
  std::vector<double> t(static_cast<size_t>(m));
  double step = (far - near) / static_cast<double>(m);
  for (int64_t j = 0; j < m; ++j)
    t[static_cast<size_t>(j)] = near + (j + 0.5) * step;
  return t;
}

}  // namespace

TEST(Volren, EmptySpace) {
  int64_t m = 8;
  auto depths = midpoints(1, 3, m);
  Tensor sigma = Tensor::zeros({1, m});
  Tensor color = Tensor::full({1, m, 3}, 0.7);
  RenderOutput ro = composite_rays(sigma, color, {depths}, 3.0);
  for (double v : ro.color.values()) EXPECT_NEAR(v, 0, 1e-15);
  EXPECT_NEAR(ro.opacity.values()[0], 0, 1e-15);
  for (double w : ro.weights.values()) EXPECT_NEAR(w, 0, 1e-15);
}

TEST(Volren, HomogeneousMediumClosedForm) {
  // sigma constant, color constant: C -> c0 (1 - exp(-sigma (far - near))).
  const double sigma0 = 1.3, near = 1.0, far = 3.5;
  const int64_t m = 256;
  auto depths = midpoints(near, far, m);
  Tensor sigma = Tensor::full({1, m}, sigma0);
  Tensor color = Tensor::full({1, m, 3}, 0.6);
  RenderOutput ro = composite_rays(sigma, color, {depths}, far);
  double expect = 0.6 * (1 - std::exp(-sigma0 * (far - near)));
  for (double v : ro.color.values()) EXPECT_NEAR(v, expect, 1e-3);
}

TEST(Volren, OpaqueSampleDominates) {
  int64_t m = 8;
  auto depths = midpoints(1, 3, m);
  std::vector<double> sv(static_cast<size_t>(m), 0.0);
  sv[3] = 1e6;
  Tensor sigma = Tensor::from({1, m}, sv);
  std::vector<double> cv(static_cast<size_t>(m * 3), 0.2);
  cv[9] = 0.9; cv[10] = 0.4; cv[11] = 0.1;  // sample 3
  Tensor color = Tensor::from({1, m, 3}, cv);
  RenderOutput ro = composite_rays(sigma, color, {depths}, 3.0);
  EXPECT_NEAR(ro.color.values()[0], 0.9, 1e-9);
  EXPECT_NEAR(ro.color.values()[1], 0.4, 1e-9);
  EXPECT_NEAR(ro.color.values()[2], 0.1, 1e-9);
  EXPECT_NEAR(ro.depth.values()[0], depths[3], 1e-9);
  EXPECT_NEAR(ro.opacity.values()[0], 1.0, 1e-9);
}

TEST(Volren, WeightIdentityAndMonotoneTransmittance) {
  Rng rng(5);
  int64_t m = 24;
  auto depths = midpoints(0.5, 2.5, m);
  Tensor sigma = Tensor::zeros({1, m});
  for (double& v : sigma.values()) v = rng.uniform(0, 3);
  Tensor color = Tensor::zeros({1, m, 3});
  for (double& v : color.values()) v = rng.uniform(0, 1);
  RenderOutput ro = composite_rays(sigma, color, {depths}, 2.5);

  // Sum w_i = 1 - exp(-sum sigma_i delta_i), algebraic identity.
  double sd = 0;
  for (int64_t j = 0; j < m; ++j) {
    double delta = (j + 1 < m ? depths[static_cast<size_t>(j + 1)] : 2.5) -
                   depths[static_cast<size_t>(j)];
    sd += sigma.values()[static_cast<size_t>(j)] * delta;
  }
  double wsum = 0;
  for (double w : ro.weights.values()) {
    EXPECT_GE(w, 0);
    wsum += w;
  }
  EXPECT_NEAR(wsum, 1 - std::exp(-sd), 1e-12);
  EXPECT_NEAR(ro.opacity.values()[0], wsum, 1e-12);
  EXPECT_GE(ro.opacity.values()[0], 0);
  EXPECT_LE(ro.opacity.values()[0], 1);
  // Color bound: c in [0,1] implies C in [0,1].
  for (double v : ro.color.values()) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
  }
}

TEST(Volren, BatchEqualsPerRayBitExact) {
  Rng rng(11);
  int64_t m = 12;
  auto depths = midpoints(1, 4, m);
  Tensor sigma = Tensor::zeros({3, m});
  Tensor color = Tensor::zeros({3, m, 3});
  for (double& v : sigma.values()) v = rng.uniform(0, 2);
  for (double& v : color.values()) v = rng.uniform(0, 1);
  RenderOutput batch = composite_rays(sigma, color, {depths, depths, depths}, 4.0);
  for (int64_t r = 0; r < 3; ++r) {
    Tensor s1 = Tensor::from({1, m}, std::vector<double>(
        sigma.values().begin() + r * m, sigma.values().begin() + (r + 1) * m));
    Tensor c1 = Tensor::from({1, m, 3}, std::vector<double>(
        color.values().begin() + r * m * 3, color.values().begin() + (r + 1) * m * 3));
    RenderOutput one = composite_rays(s1, c1, {depths}, 4.0);
    for (int c = 0; c < 3; ++c)
      EXPECT_EQ(one.color.values()[static_cast<size_t>(c)],
                batch.color.values()[static_cast<size_t>(r * 3 + c)]);
    EXPECT_EQ(one.depth.values()[0], batch.depth.values()[static_cast<size_t>(r)]);
  }
}

TEST(Volren, IdenticalRaysIdenticalOutputs) {
  int64_t m = 6;
  auto depths = midpoints(1, 2, m);
  Rng rng(13);
  std::vector<double> sv(static_cast<size_t>(m));
  for (auto& v : sv) v = rng.uniform(0, 2);
  std::vector<double> cv(static_cast<size_t>(m * 3));
  for (auto& v : cv) v = rng.uniform(0, 1);
  std::vector<double> sv2 = sv, cv2 = cv;
  sv2.insert(sv2.end(), sv.begin(), sv.end());
  cv2.insert(cv2.end(), cv.begin(), cv.end());
  RenderOutput ro = composite_rays(Tensor::from({2, m}, sv2),
                                   Tensor::from({2, m, 3}, cv2),
                                   {depths, depths}, 2.0);
  for (int c = 0; c < 3; ++c)
    EXPECT_EQ(ro.color.values()[static_cast<size_t>(c)],
              ro.color.values()[static_cast<size_t>(3 + c)]);
}

TEST(Volren, NonIncreasingDepthsRejected) {
  Tensor sigma = Tensor::zeros({1, 3});
  Tensor color = Tensor::zeros({1, 3, 3});
  EXPECT_THROW(composite_rays(sigma, color, {{1.0, 0.9, 1.5}}, 2.0), ContractError);
}

TEST(Volren, Gradcheck) {
  Rng rng(17);
  int64_t m = 6;
  auto depths = midpoints(0.5, 2.0, m);
  Tensor sigma = Tensor::zeros({2, m}).set_requires_grad();
  Tensor color = Tensor::zeros({2, m, 3}).set_requires_grad();
  for (double& v : sigma.values()) v = rng.uniform(0.1, 2);
  for (double& v : color.values()) v = rng.uniform(0.1, 0.9);
  Tensor target = Tensor::zeros({2, 3});
  for (double& v : target.values()) v = rng.uniform(0, 1);
  auto loss_fn = [&]() {
    RenderOutput ro = composite_rays(sigma, color, {depths, depths}, 2.0);
    Tensor d = sub(ro.color, target);
    return sum_all(mul(d, d));
  };
  auto res = gradcheck(loss_fn, {{"sigma", sigma}, {"color", color}}, 1e-6);
  EXPECT_LT(res.max_rel_err, 1e-4);
}

TEST(Volren, RefinementUnderSubdivision) {
  // Smooth synthetic field: error vs a 4096-sample reference decreases with m.
  auto field_sigma = [](double t) { return 1.5 + std::sin(3 * t); };
  auto field_color = [](double t) { return 0.5 + 0.4 * std::cos(2 * t); };
  auto render_at = [&](int64_t m) {
    auto depths = midpoints(1, 3, m);
    Tensor sigma = Tensor::zeros({1, m});
    Tensor color = Tensor::zeros({1, m, 3});
    for (int64_t j = 0; j < m; ++j) {
      sigma.values()[static_cast<size_t>(j)] = field_sigma(depths[static_cast<size_t>(j)]);
      for (int c = 0; c < 3; ++c)
        color.values()[static_cast<size_t>(j * 3 + c)] = field_color(depths[static_cast<size_t>(j)]);
    }
    return composite_rays(sigma, color, {depths}, 3.0).color.values()[0];
  };
  double ref = render_at(4096);
  double e64 = std::fabs(render_at(64) - ref);
  double e128 = std::fabs(render_at(128) - ref);
  double e256 = std::fabs(render_at(256) - ref);
  EXPECT_LT(e128, e64);
  EXPECT_LT(e256, e128);
}
