#pragma once

// The assembled pipeline: input views -> reprojected tokens + inferred latent
// -> attention refinement -> conditional decoder -> volume rendering.

#include <memory>
#include <string>
#include <vector>

#include "idnerf/arm.hpp"
#include "idnerf/decoder.hpp"
#include "idnerf/diffusion.hpp"
#include "idnerf/featrepro.hpp"
#include "idnerf/geometry.hpp"
#include "idnerf/image.hpp"
#include "idnerf/latent.hpp"
#include "idnerf/tensor.hpp"
#include "idnerf/volren.hpp"

namespace idnerf {

enum class GuidanceMode { Indirect, SceneLatent, NoLatent, DirectSds };

inline const char* mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::Indirect: return "indirect";
    case GuidanceMode::SceneLatent: return "scene-latent";
    case GuidanceMode::NoLatent: return "no-latent";
    case GuidanceMode::DirectSds: return "direct-sds";
  }
  return "?";
}

inline GuidanceMode mode_from_name(const std::string& s) {
  if (s == "indirect") return GuidanceMode::Indirect;
  if (s == "scene-latent") return GuidanceMode::SceneLatent;
  if (s == "no-latent") return GuidanceMode::NoLatent;
  if (s == "direct-sds") return GuidanceMode::DirectSds;
  throw ContractError("unknown mode '" + s + "'");
}

struct ModelConfig {
  int64_t n_views = 3;
  int64_t samples_per_ray = 64;  // m, exposed as config; recorded per run
  GuidanceMode mode = GuidanceMode::Indirect;
  LatentConfig latent;
  ArmConfig arm;
  DecoderConfig decoder;
};

struct Model {
  ModelConfig cfg;
  FeatureEncoder backbone;
  LatentModule latent;
  ConditionEncoder cond;
  ArmModule arm;
  NerfDecoder decoder;
  ConvLayer scene_proj;  // 1x1 conv 32->4 turning z_s into a diffusable code

  Model() = default;
  Model(const ModelConfig& c, Rng& rng, DType dt = DType::f64)
      : cfg(synced(c)),
        backbone(rng, dt),
        latent(cfg.latent, rng, dt),
        cond(rng, dt),
        arm(cfg.arm, rng, dt),
        decoder(cfg.decoder, rng, dt),
        scene_proj(32, 4, 1, 1, 0, rng, dt) {}

  // The view latent's extent is a single knob; the compressor must agree.
  static ModelConfig synced(ModelConfig c) {
    c.latent.latent_hw = c.arm.latent_hw;
    c.latent.n_views = c.n_views;
    return c;
  }

  void params(NamedParams& out) const {
    backbone.params(out, "backbone");
    latent.params(out, "latent");
    cond.params(out, "cond");
    arm.params(out, "arm");
    decoder.params(out, "decoder");
    scene_proj.params(out, "latent.scene_proj");
  }
};

// Per-forward inputs prepared once per (scene, input-triplet) pair.
struct SceneInputs {
  std::vector<Tensor> view_images;  // [3,H,W] constants
  std::vector<Tensor> ray_images;   // [3,H,W] constants
  std::vector<Camera> cameras;
};

inline SceneInputs make_scene_inputs(const std::vector<Image>& images,
                                     const std::vector<Camera>& cameras) {
  check(images.size() == cameras.size(), "make_scene_inputs: size mismatch");
  SceneInputs si;
  si.cameras = cameras;
  for (size_t i = 0; i < images.size(); ++i) {
    si.view_images.push_back(images[i].to_tensor());
    si.ray_images.push_back(ray_image(cameras[i]).to_tensor());
  }
  return si;
}

struct ForwardResult {
  RenderOutput render;
  Tensor z_code;              // latent receiving SDS; undefined in no-latent mode
  std::vector<double> gamma;  // conditioning for the frozen denoiser
};

// Renders the given pixel rays of target_cam. When rng is null, depth
// sampling uses deterministic stratum midpoints.
inline ForwardResult forward_rays(const Model& model, const SceneInputs& inputs,
                                  const Camera& target_cam,
                                  const std::vector<std::array<int64_t, 2>>& pixels,
                                  Rng* depth_rng) {
  const ModelConfig& cfg = model.cfg;
  RayBatch rays = generate_rays(target_cam, &pixels);
  int64_t R = static_cast<int64_t>(rays.size());
  int64_t m = cfg.samples_per_ray;

  std::vector<std::vector<double>> depths(static_cast<size_t>(R));
  std::vector<Vec3> points;
  std::vector<Vec3> dirs;
  points.reserve(static_cast<size_t>(R * m));
  dirs.reserve(static_cast<size_t>(R * m));
  for (int64_t r = 0; r < R; ++r) {
    depths[static_cast<size_t>(r)] =
        stratified_depths(rays.near, rays.far, m, depth_rng);
    for (double t : depths[static_cast<size_t>(r)]) {
      points.push_back(rays.origins[static_cast<size_t>(r)] +
                       rays.directions[static_cast<size_t>(r)] * t);
      dirs.push_back(rays.directions[static_cast<size_t>(r)]);
    }
  }

  auto planes = extract_features(model.backbone, inputs.view_images);
  ReprojectionResult repro =
      reproject_points(points, inputs.view_images, planes, inputs.cameras);

  ForwardResult out;
  Tensor f_tv;  // stays undefined in no-latent / direct-sds modes
  if (cfg.mode == GuidanceMode::Indirect || cfg.mode == GuidanceMode::SceneLatent) {
    Tensor z_s = model.latent.infer_scene_latent(inputs.view_images, inputs.ray_images);
    if (cfg.mode == GuidanceMode::Indirect) {
      Tensor target_ri = ray_image(target_cam).to_tensor();
      out.z_code = model.latent.infer_view_latent(z_s, target_ri);
    } else {
      out.z_code = resize_bilinear(model.scene_proj.forward(z_s),
                                   cfg.arm.latent_hw, cfg.arm.latent_hw);
    }
    f_tv = model.arm.compress_latent(out.z_code);
  }
  if (cfg.mode != GuidanceMode::NoLatent) {
    // Conditioning never receives gradient (the SDS estimator does not
    // differentiate the denoiser), so evaluate it on a throwaway tape.
    Tape off;
    Tape::Scope scope(off);
    out.gamma = model.cond.embed(inputs.view_images, inputs.ray_images).values();
  }

  Tensor f_c = model.arm.refine(repro.tokens, repro.mask, f_tv);  // [B,d]
  Tensor x_enc = encode_points(points, cfg.decoder.freq_x);
  Tensor d_enc = encode_points(dirs, cfg.decoder.freq_d);
  DecoderOutput dec = model.decoder.decode(x_enc, d_enc, f_c);

  Tensor sigma = reshape(dec.sigma, {R, m});
  Tensor color = reshape(dec.color, {R, m, 3});
  out.render = composite_rays(sigma, color, depths, rays.far);
  return out;
}

// Full-image render in row chunks (inference path, no tape).
inline Image render_image(const Model& model, const SceneInputs& inputs,
                          const Camera& target_cam, int64_t chunk_rows = 8) {
  Image im(target_cam.height, target_cam.width);
  for (int64_t y0 = 0; y0 < target_cam.height; y0 += chunk_rows) {
    int64_t y1 = std::min(y0 + chunk_rows, target_cam.height);
    std::vector<std::array<int64_t, 2>> pix;
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = 0; x < target_cam.width; ++x) pix.push_back({x, y});
    ForwardResult fr = forward_rays(model, inputs, target_cam, pix, nullptr);
    const auto& cv = fr.render.color.values();
    int64_t k = 0;
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = 0; x < target_cam.width; ++x) {
        for (int c = 0; c < 3; ++c) im.at(c, y, x) = cv[static_cast<size_t>(k * 3 + c)];
        ++k;
      }
  }
  return im;
}

}  // namespace idnerf
