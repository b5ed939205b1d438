#pragma once

// Two-stage latent inference: pose-augmented views -> scene-level latent z_s
// -> view-level latent z_tv (4x64x64).
//
// Conv stack (in, out, stride):
//   Block 1 (per view, weight-shared): (6,16,2) (16,32,1) (32,32,1)
//   Block 2 (after channel concat):    (32N,64,2) (64,64,2) (64,32,1)
//   Block 3 (on z'_s ++ target ray):   (35,32,2) (32,32,2) (32,16,2) (16,16,1)
// followed by a per-pixel FC 16 -> 4. ReLU after every layer except each
// block's last, so latents stay signed.

#include <string>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/featrepro.hpp"
#include "idnerf/geometry.hpp"
#include "idnerf/tensor.hpp"

namespace idnerf {

struct LatentConfig {
  int64_t n_views = 3;
  int64_t latent_hw = 64;  // z_tv spatial extent, fixed independent of input
};

struct LatentModule {
  LatentConfig cfg;
  ConvLayer b1_1, b1_2, b1_3;
  ConvLayer b2_1, b2_2, b2_3;
  ConvLayer b3_1, b3_2, b3_3, b3_4;
  FcLayer fc_reduce;  // per-pixel 16 -> 4

  LatentModule() = default;
  LatentModule(const LatentConfig& c, Rng& rng, DType dt = DType::f64)
      : cfg(c),
        b1_1(6, 16, 3, 2, 1, rng, dt),
        b1_2(16, 32, 3, 1, 1, rng, dt),
        b1_3(32, 32, 3, 1, 1, rng, dt),
        b2_1(32 * c.n_views, 64, 3, 2, 1, rng, dt),
        b2_2(64, 64, 3, 2, 1, rng, dt),
        b2_3(64, 32, 3, 1, 1, rng, dt),
        b3_1(35, 32, 3, 2, 1, rng, dt),
        b3_2(32, 32, 3, 2, 1, rng, dt),
        b3_3(32, 16, 3, 2, 1, rng, dt),
        b3_4(16, 16, 3, 1, 1, rng, dt),
        fc_reduce(16, 4, rng, dt) {}

  // Block 1 on one pose-augmented view [6,H,W] -> [32,H/2,W/2].
  Tensor encode_view(const Tensor& view6) const {
    check(view6.rank() == 3 && view6.shape()[0] == 6,
          "LatentModule: per-view input must be [6,H,W], got " +
              shape_str(view6.shape()));
    Tensor h = relu(b1_1.forward(view6));
    h = relu(b1_2.forward(h));
    return b1_3.forward(h);
  }

  // views/ray_images aligned per view; returns z_s [32, H/8, W/8].
  Tensor infer_scene_latent(const std::vector<Tensor>& views,
                            const std::vector<Tensor>& ray_images) const {
    check(views.size() == ray_images.size(),
          "infer_scene_latent: views and ray images must align");
    check(static_cast<int64_t>(views.size()) == cfg.n_views,
          "infer_scene_latent: module built for " + std::to_string(cfg.n_views) +
              " views, got " + std::to_string(views.size()) +
              " (Block 2 in-channels are 32*N)");
    std::vector<Tensor> per_view;
    for (size_t i = 0; i < views.size(); ++i)
      per_view.push_back(encode_view(concat({views[i], ray_images[i]}, 0)));
    Tensor h = concat(per_view, 0);
    h = relu(b2_1.forward(h));
    h = relu(b2_2.forward(h));
    return b2_3.forward(h);
  }

  // z_s + target ray image [3,Ht,Wt] -> z_tv [4, latent_hw, latent_hw].
  Tensor infer_view_latent(const Tensor& z_s, const Tensor& target_ray_image) const {
    check(z_s.rank() == 3 && z_s.shape()[0] == 32,
          "infer_view_latent: z_s must be [32,h,w], got " + shape_str(z_s.shape()));
    check(target_ray_image.rank() == 3 && target_ray_image.shape()[0] == 3,
          "infer_view_latent: ray image must be [3,H,W]");
    int64_t Ht = target_ray_image.shape()[1], Wt = target_ray_image.shape()[2];
    Tensor zs_r = resize_bilinear(z_s, Ht, Wt);          // z'_s
    Tensor h = concat({zs_r, target_ray_image}, 0);      // 35 channels
    h = relu(b3_1.forward(h));
    h = relu(b3_2.forward(h));
    h = relu(b3_3.forward(h));
    h = b3_4.forward(h);                                 // z'_tv, 16 channels
    int64_t hh = h.shape()[1], ww = h.shape()[2];
    Tensor flat = transpose(reshape(h, {16, hh * ww}));  // [hw,16]
    Tensor red = fc_reduce.forward(flat);                // [hw,4]
    Tensor ztv = reshape(transpose(red), {4, hh, ww});
    return resize_bilinear(ztv, cfg.latent_hw, cfg.latent_hw);
  }

  void params(NamedParams& out, const std::string& prefix = "latent") const {
    b1_1.params(out, prefix + ".b1_1");
    b1_2.params(out, prefix + ".b1_2");
    b1_3.params(out, prefix + ".b1_3");
    b2_1.params(out, prefix + ".b2_1");
    b2_2.params(out, prefix + ".b2_2");
    b2_3.params(out, prefix + ".b2_3");
    b3_1.params(out, prefix + ".b3_1");
    b3_2.params(out, prefix + ".b3_2");
    b3_3.params(out, prefix + ".b3_3");
    b3_4.params(out, prefix + ".b3_4");
    fc_reduce.params(out, prefix + ".fc_reduce");
  }
};

}  // namespace idnerf
