#pragma once

// Pinhole camera model, ray generation, ray images, and projection.
// Convention: right-handed, +z forward in camera space, pixel origin top-left,
// half-pixel centers. Pose is camera-to-world.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idnerf/common.hpp"
#include "idnerf/random.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    double n = norm();
    check(n > 0, "Vec3::normalized: zero vector");
    return {x / n, y / n, z / n};
  }
};

struct Mat3 {
  std::array<double, 9> m{};  // row-major

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  double operator()(int i, int j) const { return m[i * 3 + j]; }
  double& operator()(int i, int j) { return m[i * 3 + j]; }
  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0;
        for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
        r(i, j) = acc;
      }
    return r;
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

// Rigid camera-to-world transform: rotation R plus translation t.
struct Pose {
  Mat3 R = Mat3::identity();
  Vec3 t;

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Vec3 apply_dir(const Vec3& d) const { return R * d; }
  // Inverse of a rigid transform: x_cam = R^T (x_world - t).
  Vec3 apply_inverse(const Vec3& p) const { return R.transposed() * (p - t); }
};

struct Camera {
  Mat3 intrinsics = Mat3::identity();  // fx, fy, cx, cy; zero skew
  Pose pose;                           // camera-to-world
  int64_t height = 0, width = 0;
  double near = 0.1, far = 10.0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  void validate() const {
    check(height > 0 && width > 0, "Camera: non-positive image extent");
    check(near > 0 && near < far, "Camera: requires 0 < near < far, got near=" +
                                      std::to_string(near) +
                                      " far=" + std::to_string(far));
    Mat3 rtr = pose.R.transposed() * pose.R;
    Mat3 eye = Mat3::identity();
    for (int i = 0; i < 9; ++i)
      check(std::fabs(rtr.m[i] - eye.m[i]) < 1e-9,
            "Camera: pose rotation is not orthonormal");
    check(std::fabs(pose.R.det() - 1.0) < 1e-9,
          "Camera: pose rotation has det != +1");
  }
};

struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;  // unit norm
  std::vector<std::array<double, 2>> pixels;  // (u, v) centers
  double near = 0, far = 0;

  size_t size() const { return origins.size(); }
};

// Per-pixel R_d - R_o field, shape 3xHxW, encoding pose as an image.
struct RayImage {
  int64_t height = 0, width = 0;
  std::vector<double> values;  // 3*H*W

  Tensor to_tensor() const {
    return Tensor::from({3, height, width}, values);
  }
};

// Direction through a pixel center (u+0.5, v+0.5) in world space, unit norm.
inline Vec3 pixel_direction(const Camera& cam, double u, double v) {
  Vec3 dc{(u - cam.cx()) / cam.fx(), (v - cam.cy()) / cam.fy(), 1.0};
  return cam.pose.apply_dir(dc).normalized();
}

inline RayBatch generate_rays(
    const Camera& cam,
    const std::vector<std::array<int64_t, 2>>* pixels = nullptr) {
  cam.validate();
  RayBatch rb;
  rb.near = cam.near;
  rb.far = cam.far;
  auto push = [&](int64_t px, int64_t py) {
    check(px >= 0 && px < cam.width && py >= 0 && py < cam.height,
          "generate_rays: pixel (" + std::to_string(px) + "," +
              std::to_string(py) + ") outside extent");
    double u = px + 0.5, v = py + 0.5;
    rb.origins.push_back(cam.pose.t);
    rb.directions.push_back(pixel_direction(cam, u, v));
    rb.pixels.push_back({u, v});
  };
  if (pixels) {
    for (const auto& p : *pixels) push(p[0], p[1]);
  } else {
    for (int64_t y = 0; y < cam.height; ++y)
      for (int64_t x = 0; x < cam.width; ++x) push(x, y);
  }
  return rb;
}

inline RayImage ray_image(const Camera& cam) {
  cam.validate();
  RayImage ri;
  ri.height = cam.height;
  ri.width = cam.width;
  ri.values.resize(static_cast<size_t>(3 * cam.height * cam.width));
  int64_t hw = cam.height * cam.width;
  for (int64_t y = 0; y < cam.height; ++y)
    for (int64_t x = 0; x < cam.width; ++x) {
      Vec3 d = pixel_direction(cam, x + 0.5, y + 0.5);
      Vec3 v = d - cam.pose.t;
      int64_t i = y * cam.width + x;
      ri.values[0 * hw + i] = v.x;
      ri.values[1 * hw + i] = v.y;
      ri.values[2 * hw + i] = v.z;
    }
  return ri;
}

struct Projection {
  double u = 0, v = 0;  // pixel coordinates
  double depth = 0;     // camera-space z
  bool valid = false;   // false when the point is behind the camera
};

inline Projection project(const Vec3& point, const Camera& cam) {
  constexpr double kEpsZ = 1e-6;
  Vec3 pc = cam.pose.apply_inverse(point);
  Projection pr;
  pr.depth = pc.z;
  if (pc.z <= kEpsZ) return pr;  // behind (or grazing) the camera
  pr.u = cam.fx() * pc.x / pc.z + cam.cx();
  pr.v = cam.fy() * pc.y / pc.z + cam.cy();
  pr.valid = true;
  return pr;
}

// Stratified depth sampling: one draw per stratum of [near, far], or the
// stratum midpoints in deterministic mode.
inline std::vector<double> stratified_depths(double near, double far,
                                             int64_t count, Rng* rng) {
  check(count >= 2, "stratified_depths: need count >= 2, got " +
                        std::to_string(count));
  std::vector<double> t(static_cast<size_t>(count));
  double step = (far - near) / static_cast<double>(count);
  for (int64_t j = 0; j < count; ++j) {
    double u = rng ? rng->uniform() : 0.5;
    t[static_cast<size_t>(j)] = near + (static_cast<double>(j) + u) * step;
  }
  return t;
}

inline std::vector<Vec3> points_along_ray(const Vec3& origin, const Vec3& dir,
                                          const std::vector<double>& depths) {
  std::vector<Vec3> pts;
  pts.reserve(depths.size());
  for (double t : depths) pts.push_back(origin + dir * t);
  return pts;
}

// --- Camera JSON (intrinsics row-major 9, pose row-major 16, extent, bounds)

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["intrinsics"] = cam.intrinsics.m;
  std::array<double, 16> p{};
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) p[i * 4 + k] = cam.pose.R(i, k);
    p[i * 4 + 3] = i == 0 ? cam.pose.t.x : (i == 1 ? cam.pose.t.y : cam.pose.t.z);
  }
  p[15] = 1.0;
  j["pose"] = p;
  j["height"] = cam.height;
  j["width"] = cam.width;
  j["near"] = cam.near;
  j["far"] = cam.far;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  auto k = j.at("intrinsics").get<std::array<double, 9>>();
  cam.intrinsics.m = k;
  auto p = j.at("pose").get<std::array<double, 16>>();
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) cam.pose.R(i, c) = p[i * 4 + c];
  cam.pose.t = {p[3], p[7], p[11]};
  cam.height = j.at("height").get<int64_t>();
  cam.width = j.at("width").get<int64_t>();
  cam.near = j.at("near").get<double>();
  cam.far = j.at("far").get<double>();
  cam.validate();
  return cam;
}

// Look-at pose: camera at eye, +z toward target, up approximately +y world.
inline Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = {0, 1, 0}) {
  Vec3 fwd = (target - eye).normalized();
  Vec3 right = up.cross(fwd);
  if (right.norm() < 1e-9) right = Vec3{1, 0, 0}.cross(fwd);
  right = right.normalized();
  Vec3 down = fwd.cross(right);  // completes a right-handed basis
  Pose p;
  // Columns of R are the camera axes expressed in world coordinates.
  p.R(0, 0) = right.x; p.R(1, 0) = right.y; p.R(2, 0) = right.z;
  p.R(0, 1) = down.x;  p.R(1, 1) = down.y;  p.R(2, 1) = down.z;
  p.R(0, 2) = fwd.x;   p.R(1, 2) = fwd.y;   p.R(2, 2) = fwd.z;
  p.t = eye;
  return p;
}

}  // namespace idnerf
