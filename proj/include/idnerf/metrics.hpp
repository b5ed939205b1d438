#pragma once

// PSNR and SSIM on [0,1] float images (always the float sidecars, never the
// quantized PNGs).

#include <cmath>
#include <vector>

#include "idnerf/common.hpp"
#include "idnerf/image.hpp"

namespace idnerf {

constexpr double kPsnrCap = 99.0;

inline double psnr(const Image& a, const Image& b) {
  check(a.height == b.height && a.width == b.width,
        "psnr: extent mismatch " + std::to_string(a.height) + "x" +
            std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
            std::to_string(b.width));
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> to_luma(const Image& im) {
  std::vector<double> y(static_cast<size_t>(im.height * im.width));
  for (int64_t p = 0; p < im.height * im.width; ++p)
    y[static_cast<size_t>(p)] = 0.299 * im.data[static_cast<size_t>(p)] +
                                0.587 * im.data[static_cast<size_t>(im.height * im.width + p)] +
                                0.114 * im.data[static_cast<size_t>(2 * im.height * im.width + p)];
  return y;
}

inline std::vector<double> gaussian_window(int64_t size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size));
  double sum = 0;
  for (int64_t i = 0; i < size; ++i) {
    double x = static_cast<double>(i) - static_cast<double>(size - 1) / 2.0;
    w[static_cast<size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace detail

// Standard SSIM: 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03, computed
// on luma, mean over the valid (fully-covered) region.
inline double ssim(const Image& a, const Image& b) {
  check(a.height == b.height && a.width == b.width, "ssim: extent mismatch");
  constexpr int64_t kWin = 11;
  check(a.height >= kWin && a.width >= kWin,
        "ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto ya = detail::to_luma(a);
  auto yb = detail::to_luma(b);
  auto w = detail::gaussian_window(kWin, 1.5);
  int64_t H = a.height, W = a.width;
  double acc = 0;
  int64_t count = 0;
  for (int64_t y = 0; y + kWin <= H; ++y)
    for (int64_t x = 0; x + kWin <= W; ++x) {
      double mua = 0, mub = 0, va = 0, vb = 0, cov = 0;
      for (int64_t i = 0; i < kWin; ++i)
        for (int64_t j = 0; j < kWin; ++j) {
          double wij = w[static_cast<size_t>(i)] * w[static_cast<size_t>(j)];
          double pa = ya[static_cast<size_t>((y + i) * W + (x + j))];
          double pb = yb[static_cast<size_t>((y + i) * W + (x + j))];
          mua += wij * pa;
          mub += wij * pb;
          va += wij * pa * pa;
          vb += wij * pb * pb;
          cov += wij * pa * pb;
        }
      va -= mua * mua;
      vb -= mub * mub;
      cov -= mua * mub;
      double s = ((2 * mua * mub + c1) * (2 * cov + c2)) /
                 ((mua * mua + mub * mub + c1) * (va + vb + c2));
      acc += s;
      ++count;
    }
  return acc / static_cast<double>(count);
}

}  // namespace idnerf
