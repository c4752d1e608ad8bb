#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "splatgraph/core_math.hpp"

namespace splatgraph {

// Real spherical harmonics basis up to degree 3, evaluated on unit directions.
// Coefficient layout per blob: (degree+1)^2 basis entries, 3 channels each,
// interleaved as sh[l * 3 + channel]; entry 0 is DC.

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

namespace sh_detail {
inline constexpr double kC0 = 0.28209479177387814;
inline constexpr double kC1 = 0.4886025119029199;
inline constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792,
                                  0.31539156525252005, -1.0925484305920792,
                                  0.5462742152960396};
inline constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,
                                  -0.4570457994644658, 0.3731763325901154,
                                  -0.4570457994644658, 1.445305721320277,
                                  -0.5900435899266435};
}  // namespace sh_detail

// Basis values for a unit direction d; entries beyond the degree stay zero.
inline std::array<double, 16> eval_sh_basis(int degree, const Vec3& d) {
  using namespace sh_detail;
  std::array<double, 16> b{};
  double x = d[0], y = d[1], z = d[2];
  b[0] = kC0;
  if (degree < 1) return b;
  b[1] = -kC1 * y;
  b[2] = kC1 * z;
  b[3] = -kC1 * x;
  if (degree < 2) return b;
  double xx = x * x, yy = y * y, zz = z * z;
  double xy = x * y, yz = y * z, xz = x * z;
  b[4] = kC2[0] * xy;
  b[5] = kC2[1] * yz;
  b[6] = kC2[2] * (2 * zz - xx - yy);
  b[7] = kC2[3] * xz;
  b[8] = kC2[4] * (xx - yy);
  if (degree < 3) return b;
  b[9] = kC3[0] * y * (3 * xx - yy);
  b[10] = kC3[1] * xy * z;
  b[11] = kC3[2] * y * (4 * zz - xx - yy);
  b[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  b[13] = kC3[4] * x * (4 * zz - xx - yy);
  b[14] = kC3[5] * z * (xx - yy);
  b[15] = kC3[6] * x * (xx - 3 * yy);
  return b;
}

// Gradient of each basis entry with respect to the (unit) direction.
inline std::array<Vec3, 16> eval_sh_basis_grad(int degree, const Vec3& d) {
  using namespace sh_detail;
  std::array<Vec3, 16> g{};
  for (auto& v : g) v.setZero();
  double x = d[0], y = d[1], z = d[2];
  if (degree < 1) return g;
  g[1] = Vec3(0, -kC1, 0);
  g[2] = Vec3(0, 0, kC1);
  g[3] = Vec3(-kC1, 0, 0);
  if (degree < 2) return g;
  g[4] = kC2[0] * Vec3(y, x, 0);
  g[5] = kC2[1] * Vec3(0, z, y);
  g[6] = kC2[2] * Vec3(-2 * x, -2 * y, 4 * z);
  g[7] = kC2[3] * Vec3(z, 0, x);
  g[8] = kC2[4] * Vec3(2 * x, -2 * y, 0);
  if (degree < 3) return g;
  double xx = x * x, yy = y * y, zz = z * z;
  g[9] = kC3[0] * Vec3(6 * x * y, 3 * xx - 3 * yy, 0);
  g[10] = kC3[1] * Vec3(y * z, x * z, x * y);
  g[11] = kC3[2] * Vec3(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
  g[12] = kC3[3] * Vec3(-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy);
  g[13] = kC3[4] * Vec3(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
  g[14] = kC3[5] * Vec3(2 * x * z, -2 * y * z, xx - yy);
  g[15] = kC3[6] * Vec3(3 * xx - 3 * yy, -6 * x * y, 0);
  return g;
}

// Color from SH coefficients for a unit view direction. The raw value is
// basis . coeffs + 0.5 per channel; the returned color clamps at zero.
// coeffs points at n_coeffs * 3 doubles, layout sh[l * 3 + channel].
inline Vec3 eval_sh_color(int degree, const double* coeffs, const Vec3& dir) {
  auto b = eval_sh_basis(degree, dir);
  int n = sh_coeff_count(degree);
  Vec3 c(0.5, 0.5, 0.5);
  for (int l = 0; l < n; ++l)
    for (int ch = 0; ch < 3; ++ch) c[ch] += b[l] * coeffs[l * 3 + ch];
  return c.cwiseMax(0.0);
}

// Checked variant over an owned coefficient block.
inline Vec3 eval_sh(const std::vector<double>& color_block, const Vec3& view_dir,
                    int degree) {
  if (degree < 0 || degree > 3)
    throw std::invalid_argument("eval_sh: degree must be in 0..3");
  if (static_cast<int>(color_block.size()) != sh_coeff_count(degree) * 3)
    throw std::invalid_argument("eval_sh: coefficient block length mismatch");
  return eval_sh_color(degree, color_block.data(), view_dir);
}

// Backward of eval_sh_color. dcolor is dL/d(clamped color); accumulates
// dL/dcoeffs into coeff_grad (same layout) and returns dL/ddir (unit-dir
// domain, caller chains the normalization). The zero-clamp gates gradients.
inline Vec3 eval_sh_color_backward(int degree, const double* coeffs, const Vec3& dir,
                                   const Vec3& dcolor, double* coeff_grad) {
  auto b = eval_sh_basis(degree, dir);
  auto bg = eval_sh_basis_grad(degree, dir);
  int n = sh_coeff_count(degree);
  Vec3 raw(0.5, 0.5, 0.5);
  for (int l = 0; l < n; ++l)
    for (int ch = 0; ch < 3; ++ch) raw[ch] += b[l] * coeffs[l * 3 + ch];
  Vec3 gate;
  for (int ch = 0; ch < 3; ++ch) gate[ch] = raw[ch] > 0.0 ? dcolor[ch] : 0.0;
  Vec3 ddir = Vec3::Zero();
  for (int l = 0; l < n; ++l) {
    double gb = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
      coeff_grad[l * 3 + ch] += gate[ch] * b[l];
      gb += gate[ch] * coeffs[l * 3 + ch];
    }
    ddir += gb * bg[l];
  }
  return ddir;
}

}  // namespace splatgraph
