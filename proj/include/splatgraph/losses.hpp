#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "splatgraph/articulated.hpp"
#include "splatgraph/core_math.hpp"

namespace splatgraph {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kInvDepthFloor = 0.1;  // meters
inline constexpr double kOpacityLossEps = 1e-6;

struct LossWeights {
  double lambda_r = 0.2;        // SSIM share of the reconstruction term
  double lambda_depth = 0.1;
  double lambda_opacity = 0.05;
  double lambda_pose = 0.01;
  double dynamic_weight = 5.0;  // reconstruction boost inside dynamic regions
};

struct LossReport {
  double l1 = 0.0;
  double ssim = 0.0;  // 1 - mean SSIM, so 0 is perfect
  double depth = 0.0;
  double opacity = 0.0;
  double pose = 0.0;

  double total(const LossWeights& w) const {
    return (1.0 - w.lambda_r) * l1 + w.lambda_r * ssim + w.lambda_depth * depth +
           w.lambda_opacity * opacity + w.lambda_pose * pose;
  }
};

// Per-pixel reconstruction weights: `dynamic_weight` where the rendered
// dynamic mask is on, 1 elsewhere. Treated as constants by the backward.
inline std::vector<double> dynamic_pixel_weights(const std::vector<double>& dynamic_mask,
                                                 double dynamic_weight) {
  std::vector<double> w(dynamic_mask.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = dynamic_mask[i] > 0.5 ? dynamic_weight : 1.0;
  return w;
}

// Weighted mean absolute error; `pred`/`gt` are pixel-major with `channels`
// interleaved values per pixel, `weight` has one entry per pixel.
inline double weighted_l1(const std::vector<double>& pred, const std::vector<double>& gt,
                          const std::vector<double>& weight, int channels,
                          std::vector<double>* d_pred = nullptr) {
  std::size_t np = weight.size();
  if (pred.size() != np * channels || gt.size() != pred.size())
    throw std::invalid_argument("weighted_l1: size mismatch");
  double wsum = 0.0;
  for (double w : weight) wsum += w;
  if (wsum <= 0.0) throw std::invalid_argument("weighted_l1: non-positive weight sum");
  double norm = 1.0 / (wsum * channels);
  double loss = 0.0;
  for (std::size_t p = 0; p < np; ++p)
    for (int ch = 0; ch < channels; ++ch) {
      std::size_t i = p * channels + ch;
      double diff = pred[i] - gt[i];
      loss += weight[p] * std::abs(diff);
      if (d_pred)
        (*d_pred)[i] += weight[p] * norm * (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0);
    }
  return loss * norm;
}

namespace loss_detail {

inline const std::array<double, kSsimWindow>& ssim_kernel() {
  static const std::array<double, kSsimWindow> k = [] {
    std::array<double, kSsimWindow> v{};
    double sum = 0.0;
    int half = kSsimWindow / 2;
    for (int i = 0; i < kSsimWindow; ++i) {
      double d = i - half;
      v[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      sum += v[i];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return k;
}

// Zero-padded separable correlation with the SSIM window. The kernel is
// symmetric, so the same routine serves forward and transposed passes.
inline void blur(const std::vector<double>& in, int width, int height,
                 std::vector<double>& tmp, std::vector<double>& out) {
  const auto& k = ssim_kernel();
  int half = kSsimWindow / 2;
  tmp.assign(in.size(), 0.0);
  out.assign(in.size(), 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        int xx = x + j;
        if (xx < 0 || xx >= width) continue;
        acc += k[j + half] * in[static_cast<std::size_t>(y) * width + xx];
      }
      tmp[static_cast<std::size_t>(y) * width + x] = acc;
    }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        int yy = y + j;
        if (yy < 0 || yy >= height) continue;
        acc += k[j + half] * tmp[static_cast<std::size_t>(yy) * width + x];
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
}

}  // namespace loss_detail

// Per-pixel-per-channel SSIM map (pixel-major, 3 channels interleaved) of two
// RGB images, 11x11 Gaussian window, zero padding.
inline std::vector<double> ssim_map(const std::vector<double>& pred,
                                    const std::vector<double>& gt, int width,
                                    int height) {
  std::size_t np = static_cast<std::size_t>(width) * height;
  if (pred.size() != np * 3 || gt.size() != np * 3)
    throw std::invalid_argument("ssim_map: size mismatch");
  std::vector<double> map(np * 3);
  std::vector<double> x(np), y(np), x2(np), y2(np), xy(np);
  std::vector<double> mx, my, ex2, ey2, exy, tmp;
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < np; ++p) {
      x[p] = pred[p * 3 + ch];
      y[p] = gt[p * 3 + ch];
      x2[p] = x[p] * x[p];
      y2[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    loss_detail::blur(x, width, height, tmp, mx);
    loss_detail::blur(y, width, height, tmp, my);
    loss_detail::blur(x2, width, height, tmp, ex2);
    loss_detail::blur(y2, width, height, tmp, ey2);
    loss_detail::blur(xy, width, height, tmp, exy);
    for (std::size_t p = 0; p < np; ++p) {
      double sx2 = ex2[p] - mx[p] * mx[p];
      double sy2 = ey2[p] - my[p] * my[p];
      double sxy = exy[p] - mx[p] * my[p];
      double n1 = 2 * mx[p] * my[p] + kSsimC1;
      double n2 = 2 * sxy + kSsimC2;
      double d1 = mx[p] * mx[p] + my[p] * my[p] + kSsimC1;
      double d2 = sx2 + sy2 + kSsimC2;
      map[p * 3 + ch] = n1 * n2 / (d1 * d2);
    }
  }
  return map;
}

// Weighted structural dissimilarity: sum_p w_p (1 - ssim_p) / (3 sum_p w_p).
// Optionally accumulates dL/dpred through the window statistics.
inline double weighted_ssim_loss(const std::vector<double>& pred,
                                 const std::vector<double>& gt,
                                 const std::vector<double>& weight, int width,
                                 int height, std::vector<double>* d_pred = nullptr) {
  std::size_t np = static_cast<std::size_t>(width) * height;
  if (pred.size() != np * 3 || gt.size() != pred.size() || weight.size() != np)
    throw std::invalid_argument("weighted_ssim_loss: size mismatch");
  double wsum = 0.0;
  for (double w : weight) wsum += w;
  if (wsum <= 0.0)
    throw std::invalid_argument("weighted_ssim_loss: non-positive weight sum");
  double norm = 1.0 / (3.0 * wsum);

  std::vector<double> x(np), y(np), x2(np), y2(np), xy(np);
  std::vector<double> mx, my, ex2, ey2, exy, tmp;
  std::vector<double> g_mx(np), g_ex2(np), g_exy(np), b_mx, b_ex2, b_exy;
  double loss = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < np; ++p) {
      x[p] = pred[p * 3 + ch];
      y[p] = gt[p * 3 + ch];
      x2[p] = x[p] * x[p];
      y2[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    loss_detail::blur(x, width, height, tmp, mx);
    loss_detail::blur(y, width, height, tmp, my);
    loss_detail::blur(x2, width, height, tmp, ex2);
    loss_detail::blur(y2, width, height, tmp, ey2);
    loss_detail::blur(xy, width, height, tmp, exy);
    for (std::size_t p = 0; p < np; ++p) {
      double sx2 = ex2[p] - mx[p] * mx[p];
      double sy2 = ey2[p] - my[p] * my[p];
      double sxy = exy[p] - mx[p] * my[p];
      double n1 = 2 * mx[p] * my[p] + kSsimC1;
      double n2 = 2 * sxy + kSsimC2;
      double d1 = mx[p] * mx[p] + my[p] * my[p] + kSsimC1;
      double d2 = sx2 + sy2 + kSsimC2;
      double s = n1 * n2 / (d1 * d2);
      loss += weight[p] * (1.0 - s);
      if (d_pred) {
        double g = -weight[p] * norm;  // d loss / d ssim_p
        double ds_dmx = 2 * my[p] * (n2 - n1) / (d1 * d2) -
                        2 * mx[p] * s * (1.0 / d1 - 1.0 / d2);
        g_mx[p] = g * ds_dmx;
        g_ex2[p] = g * (-s / d2);
        g_exy[p] = g * (2 * n1 / (d1 * d2));
      }
    }
    if (d_pred) {
      loss_detail::blur(g_mx, width, height, tmp, b_mx);
      loss_detail::blur(g_ex2, width, height, tmp, b_ex2);
      loss_detail::blur(g_exy, width, height, tmp, b_exy);
      for (std::size_t p = 0; p < np; ++p)
        (*d_pred)[p * 3 + ch] += b_mx[p] + 2 * x[p] * b_ex2[p] + y[p] * b_exy[p];
    }
  }
  return loss * norm;
}

// L1 between inverse depths, floored at kInvDepthFloor so near-zero depths
// cannot blow up. Pixels without a reference depth (gt <= 0 or non-finite)
// contribute zero; the mean runs over every pixel either way.
inline double inverse_depth_l1(const std::vector<double>& pred,
                               const std::vector<double>& gt,
                               std::vector<double>* d_pred = nullptr) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("inverse_depth_l1: size mismatch");
  if (gt.empty()) return 0.0;
  double norm = 1.0 / static_cast<double>(gt.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!(std::isfinite(gt[i]) && gt[i] > 0.0)) continue;
    double dp = std::max(pred[i], kInvDepthFloor);
    double dg = std::max(gt[i], kInvDepthFloor);
    double diff = 1.0 / dp - 1.0 / dg;
    loss += std::abs(diff);
    if (d_pred && pred[i] > kInvDepthFloor) {
      double sign = diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0;
      (*d_pred)[i] += sign * (-1.0 / (dp * dp)) * norm;
    }
  }
  return loss * norm;
}

// Pushes accumulated opacity toward {0, 1} everywhere and toward 0 where the
// sky mask is on: -(1/n) sum[O log O + M log(1 - O)].
inline double sky_opacity_loss(const std::vector<double>& opacity,
                               const std::vector<double>& sky_mask,
                               std::vector<double>* d_opacity = nullptr) {
  if (opacity.size() != sky_mask.size())
    throw std::invalid_argument("sky_opacity_loss: size mismatch");
  std::size_t n = opacity.size();
  if (n == 0) return 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double o = std::clamp(opacity[i], kOpacityLossEps, 1.0 - kOpacityLossEps);
    double m = sky_mask[i] > 0.5 ? 1.0 : 0.0;
    loss -= o * std::log(o) + m * std::log1p(-o);
    if (d_opacity && opacity[i] > kOpacityLossEps &&
        opacity[i] < 1.0 - kOpacityLossEps)
      (*d_opacity)[i] += -(std::log(o) + 1.0 - m / (1.0 - o)) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

// Grads feeding three frames of a body pose sequence.
struct PoseSmoothGrads {
  int frames[3] = {-1, -1, -1};  // t - delta, t, t + delta
  std::vector<Vec4> d_theta[3];
};

// Second-difference smoothness of joint rotations:
// 0.5 * || theta(t-d) + theta(t+d) - 2 theta(t) ||_1 over raw components.
// Returns 0 when the window does not fit the sequence.
inline double pose_smoothness(const BodyPoseSequence& body, int t, int delta,
                              PoseSmoothGrads* grads = nullptr) {
  int t0 = t - delta, t2 = t + delta;
  if (delta <= 0 || t0 < 0 || t2 >= static_cast<int>(body.n_frames())) return 0.0;
  double loss = 0.0;
  if (grads) {
    grads->frames[0] = t0;
    grads->frames[1] = t;
    grads->frames[2] = t2;
    for (auto& g : grads->d_theta) g.assign(body.n_joints, Vec4::Zero());
  }
  for (int k = 0; k < body.n_joints; ++k) {
    Vec4 u = body.theta[t0][k] + body.theta[t2][k] - 2.0 * body.theta[t][k];
    for (int c = 0; c < 4; ++c) {
      loss += 0.5 * std::abs(u[c]);
      if (grads) {
        double s = u[c] > 0 ? 0.5 : u[c] < 0 ? -0.5 : 0.0;
        grads->d_theta[0][k][c] += s;
        grads->d_theta[2][k][c] += s;
        grads->d_theta[1][k][c] += -2.0 * s;
      }
    }
  }
  return loss;
}

}  // namespace splatgraph
