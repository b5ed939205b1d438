#include "idnerf/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace idnerf;

namespace {

Camera simple_camera(int64_t hw = 4, double f = 2.0) {
  Camera cam;
  cam.height = cam.width = hw;
  cam.intrinsics(0, 0) = f;
  cam.intrinsics(1, 1) = f;
  cam.intrinsics(0, 2) = static_cast<double>(hw) / 2;
  cam.intrinsics(1, 2) = static_cast<double>(hw) / 2;
  cam.near = 0.5;
  cam.far = 6.0;
  return cam;
}

Mat3 rot_y(double a) {
  Mat3 r = Mat3::identity();
  r(0, 0) = std::cos(a);
  r(0, 2) = std::sin(a);
  r(2, 0) = -std::sin(a);
  r(2, 2) = std::cos(a);
  return r;
}

}  // namespace

TEST(Geometry, PrincipalAxisDirection) {
  Camera cam = simple_camera();
  Vec3 d = pixel_direction(cam, cam.cx(), cam.cy());
  EXPECT_NEAR(d.x, 0, 1e-15);
  EXPECT_NEAR(d.y, 0, 1e-15);
  EXPECT_NEAR(d.z, 1, 1e-15);
}

TEST(Geometry, SharedOriginAndUnitNorm) {
  Camera cam = simple_camera();
  cam.pose.t = {1.5, -2.0, 0.25};
  cam.pose.R = rot_y(0.7);
  RayBatch rb = generate_rays(cam);
  ASSERT_EQ(rb.size(), 16u);
  for (size_t i = 0; i < rb.size(); ++i) {
    EXPECT_DOUBLE_EQ(rb.origins[i].x, 1.5);
    EXPECT_DOUBLE_EQ(rb.origins[i].y, -2.0);
    EXPECT_DOUBLE_EQ(rb.origins[i].z, 0.25);
    EXPECT_NEAR(rb.directions[i].norm(), 1.0, 1e-9);
  }
}

TEST(Geometry, CornerPixelHandComputed) {
  // 4x4, fx=fy=2, cx=cy=2, pixel (0,0) center (0.5,0.5):
  // camera dir = ((0.5-2)/2, (0.5-2)/2, 1) = (-0.75, -0.75, 1), normalized.
  Camera cam = simple_camera();
  std::vector<std::array<int64_t, 2>> px = {{0, 0}};
  RayBatch rb = generate_rays(cam, &px);
  Vec3 expect = Vec3{-0.75, -0.75, 1.0}.normalized();
  EXPECT_NEAR(rb.directions[0].x, expect.x, 1e-12);
  EXPECT_NEAR(rb.directions[0].y, expect.y, 1e-12);
  EXPECT_NEAR(rb.directions[0].z, expect.z, 1e-12);
}

TEST(Geometry, OutOfBoundsPixelRejected) {
  Camera cam = simple_camera();
  std::vector<std::array<int64_t, 2>> px = {{4, 0}};
  EXPECT_THROW(generate_rays(cam, &px), ContractError);
}

TEST(Geometry, RayImageEqualsDirectionsAtOrigin) {
  Camera cam = simple_camera();
  RayImage ri = ray_image(cam);
  RayBatch rb = generate_rays(cam);
  int64_t hw = cam.height * cam.width;
  for (int64_t i = 0; i < hw; ++i) {
    EXPECT_DOUBLE_EQ(ri.values[static_cast<size_t>(i)], rb.directions[static_cast<size_t>(i)].x);
    EXPECT_DOUBLE_EQ(ri.values[static_cast<size_t>(hw + i)], rb.directions[static_cast<size_t>(i)].y);
    EXPECT_DOUBLE_EQ(ri.values[static_cast<size_t>(2 * hw + i)], rb.directions[static_cast<size_t>(i)].z);
  }
}

TEST(Geometry, RayImageTranslationSubtracts) {
  Camera cam = simple_camera();
  RayImage base = ray_image(cam);
  Vec3 t{0.3, -0.7, 1.1};
  cam.pose.t = t;
  RayImage moved = ray_image(cam);
  int64_t hw = cam.height * cam.width;
  for (int64_t i = 0; i < hw; ++i) {
    EXPECT_NEAR(moved.values[static_cast<size_t>(i)], base.values[static_cast<size_t>(i)] - t.x, 1e-12);
    EXPECT_NEAR(moved.values[static_cast<size_t>(hw + i)], base.values[static_cast<size_t>(hw + i)] - t.y, 1e-12);
    EXPECT_NEAR(moved.values[static_cast<size_t>(2 * hw + i)], base.values[static_cast<size_t>(2 * hw + i)] - t.z, 1e-12);
  }
}

TEST(Geometry, RayImageHandComputed2x2) {
  Camera cam;
  cam.height = cam.width = 2;
  cam.intrinsics(0, 0) = cam.intrinsics(1, 1) = 1;
  cam.intrinsics(0, 2) = cam.intrinsics(1, 2) = 1;
  cam.near = 0.1;
  cam.far = 1.0;
  RayImage ri = ray_image(cam);
  // Pixel (0,0) center (0.5,0.5): dir = (-0.5,-0.5,1)/sqrt(1.5).
  double n = std::sqrt(1.5);
  EXPECT_NEAR(ri.values[0], -0.5 / n, 1e-12);
  EXPECT_NEAR(ri.values[4], -0.5 / n, 1e-12);
  EXPECT_NEAR(ri.values[8], 1.0 / n, 1e-12);
}

TEST(Geometry, ProjectOnAxis) {
  Camera cam = simple_camera();
  Projection p = project({0, 0, 5}, cam);
  ASSERT_TRUE(p.valid);
  EXPECT_NEAR(p.u, cam.cx(), 1e-12);
  EXPECT_NEAR(p.v, cam.cy(), 1e-12);
  EXPECT_NEAR(p.depth, 5, 1e-12);
}

TEST(Geometry, BehindCameraInvalid) {
  Camera cam = simple_camera();
  Projection p = project({0, 0, -1}, cam);
  EXPECT_FALSE(p.valid);
}

TEST(Geometry, ProjectRayRoundTrip) {
  Camera cam = simple_camera(8, 5.0);
  cam.pose.R = rot_y(0.4);
  cam.pose.t = {0.2, 0.6, -1.0};
  RayBatch rb = generate_rays(cam);
  for (size_t k = 0; k < rb.size(); ++k) {
    for (double t : {cam.near + 0.1, 2.0, cam.far - 0.1}) {
      Vec3 x = rb.origins[k] + rb.directions[k] * t;
      Projection p = project(x, cam);
      ASSERT_TRUE(p.valid);
      EXPECT_NEAR(p.u, rb.pixels[k][0], 1e-6);
      EXPECT_NEAR(p.v, rb.pixels[k][1], 1e-6);
    }
  }
}

TEST(Geometry, ProjectMatchesHomogeneousOracle) {
  Rng rng(7);
  Camera cam = simple_camera(6, 3.0);
  cam.pose.R = rot_y(rng.uniform(-1, 1));
  cam.pose.t = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  for (int trial = 0; trial < 50; ++trial) {
    Vec3 x{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    // Independent homogeneous-coordinates pipeline: K [R^T | -R^T t] x.
    Vec3 xc = cam.pose.R.transposed() * (x - cam.pose.t);
    if (xc.z < 0.1) continue;
    Vec3 h = cam.intrinsics * xc;
    Projection p = project(x, cam);
    ASSERT_TRUE(p.valid);
    EXPECT_NEAR(p.u, h.x / h.z, 1e-9);
    EXPECT_NEAR(p.v, h.y / h.z, 1e-9);
    EXPECT_NEAR(p.depth, xc.z, 1e-9);
  }
}

TEST(Geometry, RotationInvarianceOfProjection) {
  // Rigidly move world points and the camera pose together: uv unchanged.
  Camera cam = simple_camera(6, 3.0);
  cam.pose.t = {0.5, 0.2, -0.4};
  Mat3 g = rot_y(1.1);
  Vec3 gt{2.0, -1.0, 0.5};
  Camera moved = cam;
  moved.pose.R = g * cam.pose.R;
  moved.pose.t = g * cam.pose.t + gt;
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    Vec3 x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 4)};
    Projection a = project(x, cam);
    Projection b = project(g * x + gt, moved);
    ASSERT_EQ(a.valid, b.valid);
    if (!a.valid) continue;
    EXPECT_NEAR(a.u, b.u, 1e-9);
    EXPECT_NEAR(a.v, b.v, 1e-9);
  }
}

TEST(Geometry, StratifiedMidpoints) {
  auto t = stratified_depths(0, 1, 4, nullptr);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_NEAR(t[0], 0.125, 1e-15);
  EXPECT_NEAR(t[1], 0.375, 1e-15);
  EXPECT_NEAR(t[2], 0.625, 1e-15);
  EXPECT_NEAR(t[3], 0.875, 1e-15);
}

TEST(Geometry, StratifiedStrictlyIncreasing) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto t = stratified_depths(1.5, 4.5, 16, &rng);
    for (size_t i = 1; i < t.size(); ++i) EXPECT_LT(t[i - 1], t[i]);
    EXPECT_GE(t.front(), 1.5);
    EXPECT_LE(t.back(), 4.5);
  }
  EXPECT_THROW(stratified_depths(0, 1, 1, nullptr), ContractError);
}

TEST(Geometry, StratifiedMeanMatchesStratumCenters) {
  // Mean of 1e5 draws per stratum vs the center, within 3 standard errors.
  const int64_t draws = 100000, m = 4;
  Rng rng(123);
  std::vector<double> acc(static_cast<size_t>(m), 0.0);
  for (int64_t d = 0; d < draws; ++d) {
    auto t = stratified_depths(0, 1, m, &rng);
    for (int64_t j = 0; j < m; ++j) acc[static_cast<size_t>(j)] += t[static_cast<size_t>(j)];
  }
  double width = 1.0 / m;
  double se = width / std::sqrt(12.0) / std::sqrt(static_cast<double>(draws));
  for (int64_t j = 0; j < m; ++j) {
    double mean = acc[static_cast<size_t>(j)] / draws;
    double center = (j + 0.5) * width;
    EXPECT_NEAR(mean, center, 3 * se);
  }
}

TEST(Geometry, CameraValidation) {
  Camera cam = simple_camera();
  EXPECT_NO_THROW(cam.validate());
  Camera bad_bounds = cam;
  bad_bounds.near = 2.0;
  bad_bounds.far = 1.0;
  EXPECT_THROW(bad_bounds.validate(), ContractError);
  Camera bad_rot = cam;
  bad_rot.pose.R(0, 0) = 2.0;
  EXPECT_THROW(bad_rot.validate(), ContractError);
  Camera mirror = cam;  // det = -1 reflection
  mirror.pose.R(0, 0) = -1.0;
  EXPECT_THROW(mirror.validate(), ContractError);
}

TEST(Geometry, CameraJsonRoundTrip) {
  Camera cam = simple_camera(8, 3.5);
  cam.pose.R = rot_y(0.33);
  cam.pose.t = {0.1, 0.2, 0.3};
  Camera back = camera_from_json(camera_to_json(cam));
  for (int i = 0; i < 9; ++i) {
    EXPECT_DOUBLE_EQ(back.intrinsics.m[static_cast<size_t>(i)], cam.intrinsics.m[static_cast<size_t>(i)]);
    EXPECT_DOUBLE_EQ(back.pose.R.m[static_cast<size_t>(i)], cam.pose.R.m[static_cast<size_t>(i)]);
  }
  EXPECT_DOUBLE_EQ(back.pose.t.x, cam.pose.t.x);
  EXPECT_DOUBLE_EQ(back.near, cam.near);
  EXPECT_DOUBLE_EQ(back.far, cam.far);
  EXPECT_EQ(back.height, cam.height);
}

TEST(Geometry, LookAtIsValidRotation) {
  Pose p = look_at({3, 1, -2}, {0, 0, 0});
  Camera cam = simple_camera();
  cam.pose = p;
  EXPECT_NO_THROW(cam.validate());
  // +z camera axis points at the target.
  Vec3 fwd = p.apply_dir({0, 0, 1});
  Vec3 expect = (Vec3{0, 0, 0} - Vec3{3, 1, -2}).normalized();
  EXPECT_NEAR(fwd.x, expect.x, 1e-12);
  EXPECT_NEAR(fwd.y, expect.y, 1e-12);
  EXPECT_NEAR(fwd.z, expect.z, 1e-12);
}
