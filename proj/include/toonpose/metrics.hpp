#pragma once

// SSIM over the foreground of RGBA renders, and head angle error.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "toonpose/errors.hpp"
#include "toonpose/image.hpp"

namespace toonpose {

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;

  void check() const {
    if (window < 1 || window % 2 == 0) throw UsageError("SSIM window must be odd and positive");
    if (!(sigma > 0.0)) throw UsageError("SSIM sigma must be positive");
    if (!(dynamic_range > 0.0)) throw UsageError("SSIM dynamic range must be positive");
  }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    w[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Rec. 601 luma of an RGB(A) or gray image, as doubles.
inline std::vector<double> luma(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
      out[i] = img.channels >= 3 ? 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2)
                                 : static_cast<double>(img.at(x, y, 0));
    }
  return out;
}

namespace detail {

// Separable filter, "valid" region only: output is (w-k+1) x (h-k+1).
inline std::vector<double> filter_valid(const std::vector<double>& in, int w, int h, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * in[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM over windows whose centre pixel is foreground
/// (alpha > 0) in either image. Images without alpha are all foreground.
inline double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  cfg.check();
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw UsageError("SSIM needs images of identical size and channel count (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " + std::to_string(b.width) +
                     "x" + std::to_string(b.height) + "x" + std::to_string(b.channels) + ")");
  if (a.width < cfg.window || a.height < cfg.window) throw UsageError("image smaller than the SSIM window");

  const int w = a.width, h = a.height;
  const auto k = gaussian_window(cfg.window, cfg.sigma);
  const auto la = luma(a), lb = luma(b);
  std::vector<double> aa(la.size()), bb(la.size()), ab(la.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    aa[i] = la[i] * la[i];
    bb[i] = lb[i] * lb[i];
    ab[i] = la[i] * lb[i];
  }
  const auto mu_a = detail::filter_valid(la, w, h, k);
  const auto mu_b = detail::filter_valid(lb, w, h, k);
  const auto e_aa = detail::filter_valid(aa, w, h, k);
  const auto e_bb = detail::filter_valid(bb, w, h, k);
  const auto e_ab = detail::filter_valid(ab, w, h, k);

  const double c1 = cfg.c1(), c2 = cfg.c2();
  const int r = cfg.window / 2;
  const int ow = w - cfg.window + 1, oh = h - cfg.window + 1;
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      if (a.has_alpha() && a.at(x + r, y + r, 3) == 0 && b.at(x + r, y + r, 3) == 0) continue;
      const std::size_t i = static_cast<std::size_t>(y) * ow + x;
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma;
      const double vb = e_bb[i] - mb * mb;
      const double cov = e_ab[i] - ma * mb;
      sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  if (n == 0) throw UsageError("no foreground pixels to compare");
  return sum / static_cast<double>(n);
}

/// Mean absolute per-axis difference in degrees.
inline double head_angle_error(const std::array<double, 3>& predicted_deg, const std::array<double, 3>& target_deg) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(predicted_deg[static_cast<std::size_t>(i)]) || !std::isfinite(target_deg[static_cast<std::size_t>(i)]))
      throw UsageError("head angles must be finite");
    s += std::abs(predicted_deg[static_cast<std::size_t>(i)] - target_deg[static_cast<std::size_t>(i)]);
  }
  return s / 3.0;
}

}  // namespace toonpose
