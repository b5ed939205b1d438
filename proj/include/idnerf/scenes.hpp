#pragma once

// Synthetic multi-view dataset generation with analytic ground truth.
// Primitives are smooth-falloff density shells so the differentiable
// renderer can fit them; the oracle renderer integrates the analytic field
// densely and is not differentiable.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idnerf/common.hpp"
#include "idnerf/geometry.hpp"
#include "idnerf/image.hpp"
#include "idnerf/random.hpp"

namespace idnerf {

struct Primitive {
  enum class Kind { Sphere, Box } kind = Kind::Sphere;
  Vec3 center;
  Vec3 extents;       // radius in .x for spheres; half-extents for boxes
  Vec3 albedo;        // base Lambertian color
  Vec3 shade;         // spatial albedo gradient (zero keeps the color flat)
  double density = 0; // peak density scale
  double softness = 0.05;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  Vec3 background{0.85, 0.85, 0.9};
  double rig_radius = 3.0;
  double near = 1.5, far = 4.5;
  int64_t image_size = 64;
  bool has_occluder = false;

  double sdf(const Primitive& p, const Vec3& x) const {
    if (p.kind == Primitive::Kind::Sphere)
      return (x - p.center).norm() - p.extents.x;
    Vec3 q{std::fabs(x.x - p.center.x) - p.extents.x,
           std::fabs(x.y - p.center.y) - p.extents.y,
           std::fabs(x.z - p.center.z) - p.extents.z};
    Vec3 qp{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
    return qp.norm() + std::min(std::max({q.x, q.y, q.z}), 0.0);
  }

  double density_at(const Vec3& x) const {
    double s = 0;
    for (const auto& p : primitives)
      s += p.density / (1.0 + std::exp(sdf(p, x) / p.softness));
    return s;
  }

  Vec3 color_at(const Vec3& x) const {
    double s = 0;
    Vec3 c;
    auto clamp01 = [](double v) { return std::min(1.0, std::max(0.02, v)); };
    for (const auto& p : primitives) {
      double d = p.density / (1.0 + std::exp(sdf(p, x) / p.softness));
      s += d;
      Vec3 off = x - p.center;
      Vec3 alb{clamp01(p.albedo.x + p.shade.x * off.x),
               clamp01(p.albedo.y + p.shade.y * off.y),
               clamp01(p.albedo.z + p.shade.z * off.z)};
      c = c + alb * d;
    }
    if (s < 1e-12) return background;
    return c * (1.0 / s);
  }
};

// Camera on the rig circle: azimuth/elevation in radians around the origin.
inline Camera rig_camera(const SceneSpec& spec, double azimuth, double elevation) {
  Camera cam;
  cam.height = cam.width = spec.image_size;
  double f = 1.2 * static_cast<double>(spec.image_size);  // ~45 deg fov
  cam.intrinsics(0, 0) = f;
  cam.intrinsics(1, 1) = f;
  cam.intrinsics(0, 2) = static_cast<double>(spec.image_size) / 2.0;
  cam.intrinsics(1, 2) = static_cast<double>(spec.image_size) / 2.0;
  Vec3 eye{spec.rig_radius * std::cos(elevation) * std::sin(azimuth),
           spec.rig_radius * std::sin(elevation),
           -spec.rig_radius * std::cos(elevation) * std::cos(azimuth)};
  cam.pose = look_at(eye, {0, 0, 0});
  cam.near = spec.near;
  cam.far = spec.far;
  cam.validate();
  return cam;
}

struct GroundTruth {
  Image image;
  std::vector<double> depth;  // H*W; far value where no surface (T >= 0.5)
};

// Dense midpoint integration of the analytic field (default m = 512).
inline GroundTruth render_ground_truth(const SceneSpec& spec, const Camera& cam,
                                       int64_t samples = 512) {
  GroundTruth gt;
  gt.image = Image(cam.height, cam.width);
  gt.depth.assign(static_cast<size_t>(cam.height * cam.width), cam.far);
  double step = (cam.far - cam.near) / static_cast<double>(samples);
  for (int64_t py = 0; py < cam.height; ++py)
    for (int64_t px = 0; px < cam.width; ++px) {
      Vec3 dir = pixel_direction(cam, px + 0.5, py + 0.5);
      Vec3 org = cam.pose.t;
      double trans = 1.0;
      Vec3 c;
      bool surface_found = false;
      for (int64_t i = 0; i < samples; ++i) {
        double t = cam.near + (static_cast<double>(i) + 0.5) * step;
        Vec3 x = org + dir * t;
        double sg = spec.density_at(x);
        double a = 1.0 - std::exp(-sg * step);
        c = c + spec.color_at(x) * (trans * a);
        trans *= 1.0 - a;
        if (!surface_found && trans < 0.5) {
          gt.depth[static_cast<size_t>(py * cam.width + px)] = t;
          surface_found = true;
        }
        if (trans < 1e-6) break;
      }
      c = c + spec.background * trans;
      int64_t i = py * cam.width + px;
      gt.image.data[static_cast<size_t>(0 * cam.height * cam.width + i)] = c.x;
      gt.image.data[static_cast<size_t>(1 * cam.height * cam.width + i)] = c.y;
      gt.image.data[static_cast<size_t>(2 * cam.height * cam.width + i)] = c.z;
    }
  return gt;
}

// Random desk-scale scene: 2-3 soft primitives, optionally with an occluder
// pair (a small object hidden from far-side views behind a larger one).
inline SceneSpec random_scene(Rng& rng, int64_t image_size, bool with_occluder) {
  SceneSpec spec;
  spec.image_size = image_size;
  spec.has_occluder = with_occluder;
  auto rand_color = [&rng]() {
    return Vec3{rng.uniform(0.15, 0.95), rng.uniform(0.15, 0.95),
                rng.uniform(0.15, 0.95)};
  };
  // Strong spatial color gradients break the appearance symmetry of the
  // primitives: a surface fetched from the wrong side reads a genuinely
  // wrong color, so wide-baseline reprojection degrades instead of acting
  // as a free depth cue.
  auto rand_shade = [&rng]() {
    auto g = [&rng]() {
      double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
      return s * rng.uniform(0.6, 1.1);
    };
    return Vec3{g(), g(), g()};
  };
  int64_t n = rng.uniform_int(3, 4);
  for (int64_t i = 0; i < n; ++i) {
    Primitive p;
    p.kind = rng.uniform() < 0.7 ? Primitive::Kind::Sphere : Primitive::Kind::Box;
    p.center = {rng.uniform(-0.4, 0.4), rng.uniform(-0.35, 0.35),
                rng.uniform(-0.4, 0.4)};
    double r = rng.uniform(0.28, 0.5);
    p.extents = {r, r * rng.uniform(0.7, 1.0), r * rng.uniform(0.7, 1.0)};
    p.albedo = rand_color();
    p.shade = rand_shade();
    p.density = rng.uniform(25.0, 60.0);
    p.softness = rng.uniform(0.03, 0.07);
    spec.primitives.push_back(p);
  }
  if (with_occluder) {
    // Target camera sits at azimuth 0 (looking along +z from -z side); the
    // small sphere hides behind the big one for far-azimuth input views.
    Primitive big;
    big.center = {0, 0, 0.25};
    big.extents = {0.45, 0.45, 0.45};
    big.albedo = rand_color();
    big.shade = rand_shade();
    big.density = 50.0;
    big.softness = 0.04;
    Primitive small;
    small.center = {0, 0, -0.55};
    small.extents = {0.16, 0.16, 0.16};
    small.albedo = rand_color();
    small.shade = rand_shade();
    small.density = 55.0;
    small.softness = 0.04;
    spec.primitives.push_back(big);
    spec.primitives.push_back(small);
  }
  return spec;
}

// View roster for one scene. Index 0 is the held-out target view; the next
// nine are the three sparsity triplets; the rest are training views.
struct SceneViews {
  std::vector<double> azimuths;    // radians
  std::vector<double> elevations;  // radians
  std::vector<std::array<int64_t, 3>> sparsity_triplets;
  std::vector<int64_t> train_views;
  int64_t target_view = 0;
};

inline SceneViews make_scene_views(Rng& rng, int64_t n_train_views = 10) {
  SceneViews sv;
  auto deg = [](double d) { return d * M_PI / 180.0; };
  sv.azimuths.push_back(0.0);
  sv.elevations.push_back(deg(12));
  // Each level clusters its three inputs on one side of the target view,
  // progressively farther away, so higher levels genuinely see less of the
  // target content instead of gaining coverage by surrounding the scene.
  const double triplets[3][3] = {
      {-25, 15, 35}, {55, 75, 95}, {115, 140, 165}};
  for (int lvl = 0; lvl < 3; ++lvl) {
    std::array<int64_t, 3> idx{};
    for (int k = 0; k < 3; ++k) {
      idx[static_cast<size_t>(k)] = static_cast<int64_t>(sv.azimuths.size());
      sv.azimuths.push_back(deg(triplets[lvl][k]) + deg(rng.uniform(-3, 3)));
      sv.elevations.push_back(deg(12) + deg(rng.uniform(-4, 4)));
    }
    sv.sparsity_triplets.push_back(idx);
  }
  for (int64_t i = 0; i < n_train_views; ++i) {
    sv.train_views.push_back(static_cast<int64_t>(sv.azimuths.size()));
    sv.azimuths.push_back(deg(rng.uniform(-170, 170)));
    sv.elevations.push_back(deg(rng.uniform(0, 25)));
  }
  return sv;
}

inline double angular_distance(double az_a, double el_a, double az_b, double el_b) {
  auto unit = [](double az, double el) {
    return Vec3{std::cos(el) * std::sin(az), std::sin(el),
                -std::cos(el) * std::cos(az)};
  };
  double d = std::clamp(unit(az_a, el_a).dot(unit(az_b, el_b)), -1.0, 1.0);
  return std::acos(d);
}

// Writes scenes/<id>/{views,cameras,depth}/..., splits.json, sparsity.json.
// Same seed => byte-identical tree.
inline void make_benchmark(const std::string& out_dir, uint64_t seed,
                           int64_t n_scenes, int64_t image_size = 64,
                           int64_t oracle_samples = 512) {
  namespace fs = std::filesystem;
  check(n_scenes >= 1, "make_benchmark: need at least one scene");
  Rng rng(seed);
  fs::create_directories(out_dir);
  for (int64_t s = 0; s < n_scenes; ++s) {
    bool occl = (s % 2 == 1);  // every other scene carries the occluder pair
    SceneSpec spec = random_scene(rng, image_size, occl);
    SceneViews sv = make_scene_views(rng);
    std::string sd = out_dir + "/scenes/scene_" + std::to_string(s);
    fs::create_directories(sd + "/views");
    fs::create_directories(sd + "/cameras");
    fs::create_directories(sd + "/depth");
    int64_t nviews = static_cast<int64_t>(sv.azimuths.size());
    for (int64_t v = 0; v < nviews; ++v) {
      Camera cam = rig_camera(spec, sv.azimuths[static_cast<size_t>(v)],
                              sv.elevations[static_cast<size_t>(v)]);
      GroundTruth gt = render_ground_truth(spec, cam, oracle_samples);
      std::string stem = sd + "/views/view_" + std::to_string(v);
      write_png(stem + ".png", gt.image);
      write_f32(stem + ".f32", gt.image.data);
      write_f32(sd + "/depth/view_" + std::to_string(v) + ".f32", gt.depth);
      std::ofstream cf(sd + "/cameras/view_" + std::to_string(v) + ".json");
      cf << camera_to_json(cam).dump(2) << "\n";
    }
    nlohmann::json splits;
    splits["target_view"] = sv.target_view;
    splits["train"] = sv.train_views;
    splits["test"] = {sv.target_view};
    {
      std::ofstream f(sd + "/splits.json");
      f << splits.dump(2) << "\n";
    }
    nlohmann::json sparsity = nlohmann::json::array();
    for (size_t lvl = 0; lvl < sv.sparsity_triplets.size(); ++lvl) {
      double mean_ang = 0;
      for (int64_t vi : sv.sparsity_triplets[lvl])
        mean_ang += angular_distance(
            sv.azimuths[static_cast<size_t>(vi)],
            sv.elevations[static_cast<size_t>(vi)],
            sv.azimuths[0], sv.elevations[0]);
      mean_ang /= 3.0;
      sparsity.push_back({{"level", lvl + 1},
                          {"views", sv.sparsity_triplets[lvl]},
                          {"mean_angular_distance", mean_ang}});
    }
    {
      std::ofstream f(sd + "/sparsity.json");
      f << sparsity.dump(2) << "\n";
    }
    nlohmann::json meta;
    meta["image_size"] = image_size;
    meta["near"] = spec.near;
    meta["far"] = spec.far;
    meta["has_occluder"] = spec.has_occluder;
    meta["n_views"] = nviews;
    {
      std::ofstream f(sd + "/scene.json");
      f << meta.dump(2) << "\n";
    }
  }
  nlohmann::json root;
  root["n_scenes"] = n_scenes;
  root["seed"] = seed;
  root["image_size"] = image_size;
  std::ofstream f(out_dir + "/dataset.json");
  f << root.dump(2) << "\n";
}

// --- Loading

struct LoadedScene {
  std::vector<Image> images;
  std::vector<Camera> cameras;
  std::vector<std::vector<double>> depths;
  std::vector<int64_t> train_views;
  int64_t target_view = 0;
  std::vector<std::array<int64_t, 3>> sparsity_triplets;
  bool has_occluder = false;
  double near = 0, far = 0;
  int64_t image_size = 0;
};

inline LoadedScene load_scene(const std::string& scene_dir) {
  LoadedScene ls;
  std::ifstream mf(scene_dir + "/scene.json");
  if (!mf) throw IoError("load_scene: missing " + scene_dir + "/scene.json");
  nlohmann::json meta = nlohmann::json::parse(mf);
  ls.image_size = meta.at("image_size").get<int64_t>();
  ls.near = meta.at("near").get<double>();
  ls.far = meta.at("far").get<double>();
  ls.has_occluder = meta.at("has_occluder").get<bool>();
  int64_t nviews = meta.at("n_views").get<int64_t>();
  for (int64_t v = 0; v < nviews; ++v) {
    std::string stem = scene_dir + "/views/view_" + std::to_string(v);
    ls.images.push_back(read_image_f32(stem + ".f32", ls.image_size, ls.image_size));
    std::ifstream cf(scene_dir + "/cameras/view_" + std::to_string(v) + ".json");
    if (!cf) throw IoError("load_scene: missing camera for view " + std::to_string(v));
    ls.cameras.push_back(camera_from_json(nlohmann::json::parse(cf)));
    ls.depths.push_back(read_f32(scene_dir + "/depth/view_" + std::to_string(v) + ".f32"));
  }
  std::ifstream sf(scene_dir + "/splits.json");
  nlohmann::json splits = nlohmann::json::parse(sf);
  ls.target_view = splits.at("target_view").get<int64_t>();
  ls.train_views = splits.at("train").get<std::vector<int64_t>>();
  std::ifstream pf(scene_dir + "/sparsity.json");
  nlohmann::json sp = nlohmann::json::parse(pf);
  for (const auto& lvl : sp) {
    auto v = lvl.at("views").get<std::vector<int64_t>>();
    ls.sparsity_triplets.push_back({v[0], v[1], v[2]});
  }
  return ls;
}

inline std::vector<std::string> list_scene_dirs(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> dirs;
  std::string root = dataset_dir + "/scenes";
  if (!fs::exists(root)) throw IoError("dataset: missing " + root);
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace idnerf
