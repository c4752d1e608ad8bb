#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "splatgraph/core_math.hpp"
#include "splatgraph/losses.hpp"

namespace splatgraph {

inline constexpr double kPsnrCap = 100.0;  // dB, reported for near-zero MSE

// Peak signal-to-noise ratio in dB for unit-range images, capped at kPsnrCap.
inline double psnr(const std::vector<double>& pred, const std::vector<double>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("psnr: size mismatch or empty");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - gt[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.size());
  if (mse <= 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

// PSNR restricted to pixels whose mask exceeds 0.5; `pred`/`gt` are
// pixel-major RGB, `mask` has one entry per pixel. Returns the cap when the
// mask selects nothing.
inline double psnr_masked(const std::vector<double>& pred,
                          const std::vector<double>& gt,
                          const std::vector<double>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size() * 3)
    throw std::invalid_argument("psnr_masked: size mismatch");
  double mse = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] <= 0.5) continue;
    for (int ch = 0; ch < 3; ++ch) {
      double d = pred[p * 3 + ch] - gt[p * 3 + ch];
      mse += d * d;
    }
    n += 3;
  }
  if (n == 0) return kPsnrCap;
  mse /= static_cast<double>(n);
  if (mse <= 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

// Mean SSIM over all pixels and channels (1 is a perfect match).
inline double ssim_metric(const std::vector<double>& pred,
                          const std::vector<double>& gt, int width, int height) {
  std::vector<double> map = ssim_map(pred, gt, width, height);
  double sum = 0.0;
  for (double v : map) sum += v;
  return sum / static_cast<double>(map.size());
}

// Root-mean-square depth error over pixels with a usable reference
// (finite and positive). Returns 0 when nothing is valid.
inline double depth_rmse(const std::vector<double>& pred,
                         const std::vector<double>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("depth_rmse: size mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(std::isfinite(gt[i]) && gt[i] > 0.0)) continue;
    double d = pred[i] - gt[i];
    sum += d * d;
    ++n;
  }
  return n == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(n));
}

// Symmetric chamfer distance, brute force: mean nearest-neighbor distance
// from a into b plus the reverse.
inline double chamfer_distance(const std::vector<Vec3>& a,
                               const std::vector<Vec3>& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("chamfer_distance: empty point set");
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).norm());
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

}  // namespace splatgraph
