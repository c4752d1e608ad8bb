#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "splatgraph/gaussian.hpp"
#include "splatgraph/sky.hpp"

namespace splatgraph {

inline constexpr int kTileSize = 16;
inline constexpr double kLowPass = 0.3;        // px^2 added to 2D covariance
inline constexpr double kAlphaClamp = 0.99;    // per-blob alpha ceiling
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmitEps = 1e-15;  // early termination threshold
inline constexpr double kOpacityEps = 1e-4;    // expected-depth validity floor

// Screen-space footprint of one blob after projection.
struct ProjectedBlob {
  bool visible = false;
  Vec2 mean2d = Vec2::Zero();
  double z = 0.0;          // camera-frame depth
  Mat2 cov2d = Mat2::Zero();
  Mat2 conic = Mat2::Zero();
  double radius = 0.0;     // 3 sigma of the major axis, pixels
  Vec3 color = Vec3::Zero();
  double alpha_base = 0.0;  // activated opacity
  // cached for the backward pass
  Vec3 p_cam = Vec3::Zero();
  double txtz = 0.0, tytz = 0.0;
  bool clamped_x = false, clamped_y = false;
};

struct RenderOptions {
  const EnvironmentMap* sky = nullptr;
  // Per-blob flags; when set, render fills dynamic_opacity.
  const std::vector<std::uint8_t>* dynamic_flags = nullptr;
  int num_threads = 1;  // tile parallelism; output is thread-count independent
};

struct RenderOutput {
  int width = 0, height = 0;
  std::vector<double> color;            // H*W*3
  std::vector<double> depth;            // H*W, far plane where opacity <= 1e-4
  std::vector<double> opacity;          // H*W, 1 - prod(1 - alpha)
  std::vector<double> dynamic_opacity;  // H*W; empty unless dynamic_flags given
  std::vector<int> tile_counts;         // blobs listed per tile
  std::size_t n_projected = 0;
  std::size_t n_pairs = 0;
};

struct RenderAdjoints {
  const std::vector<double>* d_color = nullptr;    // H*W*3
  const std::vector<double>* d_depth = nullptr;    // H*W
  const std::vector<double>* d_opacity = nullptr;  // H*W
};

// Gradients in the raw parameter domain of the rendered set, plus the
// screen-space absolute-gradient statistics densification feeds on.
struct RasterGrads {
  std::vector<Vec3> d_mean;
  std::vector<Vec4> d_rot;
  std::vector<Vec3> d_log_scale;
  std::vector<double> d_opacity_raw;
  std::vector<double> d_sh;          // count * sh_stride
  std::vector<double> abs_grad_x;    // sum over pixels of |per-pixel d mean2d|
  std::vector<double> abs_grad_y;
  std::vector<std::uint8_t> visible;
  std::vector<double> sky_texel_grad;  // raw-texel domain; empty without sky
};

namespace raster_detail {

inline void parallel_for(int n, int num_threads, const auto& fn) {
  if (num_threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  int workers = std::min(num_threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : pool) t.join();
}

struct TileGrid {
  int tiles_x = 0, tiles_y = 0;
  // Per tile: blob indices sorted by (depth, blob index).
  std::vector<std::vector<int>> lists;
};

inline TileGrid bin_tiles(const Camera& cam, const std::vector<ProjectedBlob>& proj) {
  TileGrid g;
  g.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  g.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  g.lists.resize(static_cast<std::size_t>(g.tiles_x) * g.tiles_y);
  for (int i = 0; i < static_cast<int>(proj.size()); ++i) {
    const auto& p = proj[i];
    if (!p.visible) continue;
    int x0 = std::max(0, static_cast<int>(std::floor((p.mean2d[0] - p.radius) / kTileSize)));
    int x1 = std::min(g.tiles_x - 1,
                      static_cast<int>(std::floor((p.mean2d[0] + p.radius) / kTileSize)));
    int y0 = std::max(0, static_cast<int>(std::floor((p.mean2d[1] - p.radius) / kTileSize)));
    int y1 = std::min(g.tiles_y - 1,
                      static_cast<int>(std::floor((p.mean2d[1] + p.radius) / kTileSize)));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        g.lists[static_cast<std::size_t>(ty) * g.tiles_x + tx].push_back(i);
  }
  for (auto& list : g.lists)
    std::sort(list.begin(), list.end(), [&](int a, int b) {
      if (proj[a].z != proj[b].z) return proj[a].z < proj[b].z;
      return a < b;
    });
  return g;
}

}  // namespace raster_detail

// Project every blob into the camera. Blobs behind the near plane or with a
// degenerate screen footprint come back invisible.
inline std::vector<ProjectedBlob> project_blobs(const Camera& cam,
                                                const GaussianSet& set) {
  std::vector<ProjectedBlob> out(set.size());
  const Mat3& w_mat = cam.cam_from_world.R;
  Vec3 cam_center = cam.center_world();
  double lim_x = 1.3 * (0.5 * cam.width / cam.fx);
  double lim_y = 1.3 * (0.5 * cam.height / cam.fy);
  for (std::size_t i = 0; i < set.size(); ++i) {
    ProjectedBlob& p = out[i];
    Vec3 t = cam.to_camera(set.mean[i]);
    if (!(t[2] > cam.near_clip)) continue;
    p.p_cam = t;
    p.z = t[2];
    p.mean2d = Vec2(cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy);

    Mat3 sigma = build_covariance(set.log_scale[i], set.rot[i]);
    double xz = t[0] / t[2], yz = t[1] / t[2];
    p.clamped_x = xz < -lim_x || xz > lim_x;
    p.clamped_y = yz < -lim_y || yz > lim_y;
    p.txtz = std::clamp(xz, -lim_x, lim_x);
    p.tytz = std::clamp(yz, -lim_y, lim_y);
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / t[2], 0, -cam.fx * p.txtz / t[2],
           0, cam.fy / t[2], -cam.fy * p.tytz / t[2];
    Eigen::Matrix<double, 2, 3> a = jac * w_mat;
    p.cov2d = a * sigma * a.transpose();
    p.cov2d(0, 0) += kLowPass;
    p.cov2d(1, 1) += kLowPass;
    double det = p.cov2d.determinant();
    if (!(det > 1e-300) || !p.cov2d.allFinite()) continue;
    p.conic << p.cov2d(1, 1) / det, -p.cov2d(0, 1) / det,
               -p.cov2d(0, 1) / det, p.cov2d(0, 0) / det;
    double mid = 0.5 * (p.cov2d(0, 0) + p.cov2d(1, 1));
    double disc = std::sqrt(std::max(0.0, mid * mid - det));
    p.radius = std::ceil(3.0 * std::sqrt(std::max(1e-12, mid + disc)));
    if (p.mean2d[0] + p.radius < 0 || p.mean2d[0] - p.radius > cam.width ||
        p.mean2d[1] + p.radius < 0 || p.mean2d[1] - p.radius > cam.height)
      continue;
    p.alpha_base = set.opacity(i);
    Vec3 view = set.mean[i] - cam_center;
    double vn = view.norm();
    p.color = vn > 1e-12 ? eval_sh_color(set.sh_degree, set.sh_ptr(i), view / vn)
                         : eval_sh_color(set.sh_degree, set.sh_ptr(i), Vec3(0, 0, 1));
    p.visible = true;
  }
  return out;
}

inline RenderOutput render(const Camera& cam, const GaussianSet& set,
                           const RenderOptions& opt = {}) {
  using namespace raster_detail;
  RenderOutput out;
  out.width = cam.width;
  out.height = cam.height;
  std::size_t np = static_cast<std::size_t>(cam.width) * cam.height;
  out.color.assign(np * 3, 0.0);
  out.depth.assign(np, cam.far_clip);
  out.opacity.assign(np, 0.0);
  bool want_dynamic = opt.dynamic_flags != nullptr;
  if (want_dynamic) {
    if (opt.dynamic_flags->size() != set.size())
      throw std::invalid_argument("render: dynamic flag count mismatch");
    out.dynamic_opacity.assign(np, 0.0);
  }

  auto proj = project_blobs(cam, set);
  for (const auto& p : proj)
    if (p.visible) ++out.n_projected;
  TileGrid grid = bin_tiles(cam, proj);
  out.tile_counts.resize(grid.lists.size());
  for (std::size_t t = 0; t < grid.lists.size(); ++t) {
    out.tile_counts[t] = static_cast<int>(grid.lists[t].size());
    out.n_pairs += grid.lists[t].size();
  }

  int n_tiles = grid.tiles_x * grid.tiles_y;
  parallel_for(n_tiles, opt.num_threads, [&](int tile) {
    int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const auto& list = grid.lists[tile];
    int px0 = tx * kTileSize, py0 = ty * kTileSize;
    int px1 = std::min(px0 + kTileSize, cam.width);
    int py1 = std::min(py0 + kTileSize, cam.height);
    for (int py = py0; py < py1; ++py) {
      for (int px = px0; px < px1; ++px) {
        Vec2 pix(px + 0.5, py + 0.5);
        double trans = 1.0, trans_dyn = 1.0;
        Vec3 c_acc = Vec3::Zero();
        double d_acc = 0.0;
        for (int idx : list) {
          const ProjectedBlob& p = proj[idx];
          Vec2 d = pix - p.mean2d;
          double power = -0.5 * d.dot(p.conic * d);
          if (power > 0.0) continue;
          double alpha = std::min(kAlphaClamp, p.alpha_base * std::exp(power));
          if (alpha < kAlphaSkip) continue;
          c_acc += p.color * (alpha * trans);
          d_acc += p.z * (alpha * trans);
          if (want_dynamic && (*opt.dynamic_flags)[idx]) trans_dyn *= 1.0 - alpha;
          trans *= 1.0 - alpha;
          if (trans < kTransmitEps) break;
        }
        std::size_t pi = static_cast<std::size_t>(py) * cam.width + px;
        double opac = 1.0 - trans;
        out.opacity[pi] = opac;
        out.depth[pi] = opac > kOpacityEps ? d_acc / opac : cam.far_clip;
        Vec3 c = c_acc;
        if (opt.sky) c += trans * opt.sky->query(cam.pixel_ray_dir(pix[0], pix[1]));
        for (int ch = 0; ch < 3; ++ch) out.color[pi * 3 + ch] = c[ch];
        if (want_dynamic) out.dynamic_opacity[pi] = 1.0 - trans_dyn;
      }
    }
  });
  return out;
}

inline std::vector<double> render_dynamic_mask(const Camera& cam, const GaussianSet& set,
                                               const std::vector<std::uint8_t>& flags,
                                               int num_threads = 1) {
  RenderOptions opt;
  opt.dynamic_flags = &flags;
  opt.num_threads = num_threads;
  return render(cam, set, opt).dynamic_opacity;
}

// Reverse-mode pass. Recomputes the forward internally, walks each pixel's
// blob list back to front with suffix accumulators, then backpropagates the
// projection per blob. Per-tile partial gradients are reduced in fixed tile
// order, so results do not depend on the thread count.
inline RasterGrads render_backward(const Camera& cam, const GaussianSet& set,
                                   const RenderAdjoints& adj,
                                   const RenderOptions& opt = {}) {
  using namespace raster_detail;
  std::size_t n = set.size();
  std::size_t np = static_cast<std::size_t>(cam.width) * cam.height;
  RasterGrads g;
  g.d_mean.assign(n, Vec3::Zero());
  g.d_rot.assign(n, Vec4::Zero());
  g.d_log_scale.assign(n, Vec3::Zero());
  g.d_opacity_raw.assign(n, 0.0);
  g.d_sh.assign(n * set.sh_stride(), 0.0);
  g.abs_grad_x.assign(n, 0.0);
  g.abs_grad_y.assign(n, 0.0);
  g.visible.assign(n, 0);
  if (opt.sky) g.sky_texel_grad.assign(opt.sky->texels().size(), 0.0);

  auto proj = project_blobs(cam, set);
  TileGrid grid = bin_tiles(cam, proj);
  for (std::size_t i = 0; i < n; ++i)
    if (proj[i].visible) g.visible[i] = 1;

  // Internal forward: per-pixel transmittance, raw depth sum, contributor count.
  std::vector<double> trans_final(np, 1.0), draw(np, 0.0);
  std::vector<int> n_contrib(np, 0);
  int n_tiles = grid.tiles_x * grid.tiles_y;
  parallel_for(n_tiles, opt.num_threads, [&](int tile) {
    int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const auto& list = grid.lists[tile];
    int px0 = tx * kTileSize, py0 = ty * kTileSize;
    int px1 = std::min(px0 + kTileSize, cam.width);
    int py1 = std::min(py0 + kTileSize, cam.height);
    for (int py = py0; py < py1; ++py)
      for (int px = px0; px < px1; ++px) {
        Vec2 pix(px + 0.5, py + 0.5);
        double trans = 1.0, d_acc = 0.0;
        int contrib = 0;
        for (std::size_t k = 0; k < list.size(); ++k) {
          const ProjectedBlob& p = proj[list[k]];
          Vec2 d = pix - p.mean2d;
          double power = -0.5 * d.dot(p.conic * d);
          if (power > 0.0) {
            contrib = static_cast<int>(k) + 1;
            continue;
          }
          double alpha = std::min(kAlphaClamp, p.alpha_base * std::exp(power));
          if (alpha < kAlphaSkip) {
            contrib = static_cast<int>(k) + 1;
            continue;
          }
          d_acc += p.z * (alpha * trans);
          trans *= 1.0 - alpha;
          contrib = static_cast<int>(k) + 1;
          if (trans < kTransmitEps) break;
        }
        std::size_t pi = static_cast<std::size_t>(py) * cam.width + px;
        trans_final[pi] = trans;
        draw[pi] = d_acc;
        n_contrib[pi] = contrib;
      }
  });

  // Per-blob screen-space accumulators, filled tile by tile.
  struct BlobAcc {
    Vec2 d_mean2d = Vec2::Zero();
    Mat2 d_conic = Mat2::Zero();
    double d_alpha_base = 0.0;
    Vec3 d_color = Vec3::Zero();
    double d_z = 0.0;
    double abs_x = 0.0, abs_y = 0.0;
  };
  std::vector<std::vector<BlobAcc>> tile_acc(n_tiles);

  parallel_for(n_tiles, opt.num_threads, [&](int tile) {
    int tx = tile % grid.tiles_x, ty = tile / grid.tiles_x;
    const auto& list = grid.lists[tile];
    if (list.empty()) return;
    auto& acc = tile_acc[tile];
    acc.assign(list.size(), BlobAcc{});
    int px0 = tx * kTileSize, py0 = ty * kTileSize;
    int px1 = std::min(px0 + kTileSize, cam.width);
    int py1 = std::min(py0 + kTileSize, cam.height);
    for (int py = py0; py < py1; ++py)
      for (int px = px0; px < px1; ++px) {
        std::size_t pi = static_cast<std::size_t>(py) * cam.width + px;
        Vec2 pix(px + 0.5, py + 0.5);
        Vec3 dC = Vec3::Zero();
        if (adj.d_color)
          dC = Vec3((*adj.d_color)[pi * 3], (*adj.d_color)[pi * 3 + 1],
                    (*adj.d_color)[pi * 3 + 2]);
        double t_fin = trans_final[pi];
        double opac = 1.0 - t_fin;
        double d_draw = 0.0;
        double d_trans_final = 0.0;
        if (adj.d_opacity) d_trans_final -= (*adj.d_opacity)[pi];
        if (adj.d_depth && opac > kOpacityEps) {
          double dd = (*adj.d_depth)[pi];
          d_draw = dd / opac;
          // depth = draw / (1 - T): d/dT = draw / (1-T)^2
          d_trans_final += dd * draw[pi] / (opac * opac);
        }
        if (opt.sky) {
          Vec3 c_sky = opt.sky->query(cam.pixel_ray_dir(pix[0], pix[1]));
          d_trans_final += dC.dot(c_sky);
        }
        if (dC.isZero(0.0) && d_draw == 0.0 && d_trans_final == 0.0) continue;

        // Reverse walk with suffix sums; recomputes the same alphas as the
        // forward, so skipped blobs skip again.
        double t_cur = t_fin;
        Vec3 suffix_c = Vec3::Zero();
        double suffix_z = 0.0;
        for (int k = n_contrib[pi] - 1; k >= 0; --k) {
          const ProjectedBlob& p = proj[list[k]];
          Vec2 d = pix - p.mean2d;
          double power = -0.5 * d.dot(p.conic * d);
          if (power > 0.0) continue;
          double gval = std::exp(power);
          double alpha_unclamped = p.alpha_base * gval;
          double alpha = std::min(kAlphaClamp, alpha_unclamped);
          if (alpha < kAlphaSkip) continue;
          double om = 1.0 - alpha;
          double t_at = t_cur / om;  // transmittance in front of this blob
          double d_alpha = dC.dot(p.color * t_at - suffix_c / om) +
                           d_draw * (p.z * t_at - suffix_z / om) -
                           d_trans_final * (t_fin / om);
          BlobAcc& a = acc[k];
          a.d_color += dC * (alpha * t_at);
          a.d_z += d_draw * alpha * t_at;
          if (alpha_unclamped < kAlphaClamp) {
            a.d_alpha_base += d_alpha * gval;
            double d_power = d_alpha * p.alpha_base * gval;
            Vec2 qd = p.conic * d;
            Vec2 dm2d = d_power * qd;
            a.d_mean2d += dm2d;
            a.abs_x += std::abs(dm2d[0]);
            a.abs_y += std::abs(dm2d[1]);
            a.d_conic += -0.5 * d_power * (d * d.transpose());
          }
          suffix_c += p.color * (alpha * t_at);
          suffix_z += p.z * (alpha * t_at);
          t_cur = t_at;
        }
      }
  });

  // Deterministic reduction over tiles in index order.
  std::vector<BlobAcc> blob_acc(n);
  for (int tile = 0; tile < n_tiles; ++tile) {
    const auto& list = grid.lists[tile];
    const auto& acc = tile_acc[tile];
    for (std::size_t k = 0; k < acc.size(); ++k) {
      BlobAcc& dst = blob_acc[list[k]];
      const BlobAcc& src = acc[k];
      dst.d_mean2d += src.d_mean2d;
      dst.d_conic += src.d_conic;
      dst.d_alpha_base += src.d_alpha_base;
      dst.d_color += src.d_color;
      dst.d_z += src.d_z;
      dst.abs_x += src.abs_x;
      dst.abs_y += src.abs_y;
    }
  }

  // Sky texel gradients: one sequential pixel pass using the stored
  // transmittance (the sky path is independent of blob ordering).
  if (opt.sky && adj.d_color) {
    for (int py = 0; py < cam.height; ++py)
      for (int px = 0; px < cam.width; ++px) {
        std::size_t pi = static_cast<std::size_t>(py) * cam.width + px;
        double t_fin = trans_final[pi];
        if (t_fin <= 0.0) continue;
        Vec3 dC((*adj.d_color)[pi * 3], (*adj.d_color)[pi * 3 + 1],
                (*adj.d_color)[pi * 3 + 2]);
        if (dC.isZero(0.0)) continue;
        opt.sky->query_backward(cam.pixel_ray_dir(px + 0.5, py + 0.5), t_fin * dC,
                                g.sky_texel_grad);
      }
  }

  // Projection backward per blob.
  const Mat3& w_mat = cam.cam_from_world.R;
  Vec3 cam_center = cam.center_world();
  for (std::size_t i = 0; i < n; ++i) {
    const ProjectedBlob& p = proj[i];
    if (!p.visible) continue;
    const BlobAcc& a = blob_acc[i];
    g.abs_grad_x[i] = a.abs_x;
    g.abs_grad_y[i] = a.abs_y;

    // alpha_base = sigmoid(opacity_raw)
    g.d_opacity_raw[i] += a.d_alpha_base * p.alpha_base * (1.0 - p.alpha_base);

    // conic = inverse(cov2d): dV = -Q dQ Q
    Mat2 d_cov = -p.conic * a.d_conic * p.conic;
    d_cov = 0.5 * (d_cov + d_cov.transpose());

    // cov2d = A Sigma A^T + lowpass, A = J W
    Mat3 sigma = build_covariance(set.log_scale[i], set.rot[i]);
    double z = p.p_cam[2];
    Eigen::Matrix<double, 2, 3> jac;
    jac << cam.fx / z, 0, -cam.fx * p.txtz / z,
           0, cam.fy / z, -cam.fy * p.tytz / z;
    Eigen::Matrix<double, 2, 3> amat = jac * w_mat;
    Mat3 d_sigma = amat.transpose() * d_cov * amat;
    build_covariance_backward(set.log_scale[i], set.rot[i], d_sigma,
                              g.d_log_scale[i], g.d_rot[i]);
    Eigen::Matrix<double, 2, 3> d_a = 2.0 * d_cov * amat * sigma;
    Eigen::Matrix<double, 2, 3> d_jac = d_a * w_mat.transpose();

    Vec3 d_pcam = Vec3::Zero();
    double x = p.p_cam[0], y = p.p_cam[1];
    d_pcam[2] += d_jac(0, 0) * (-cam.fx / (z * z));
    d_pcam[2] += d_jac(1, 1) * (-cam.fy / (z * z));
    if (!p.clamped_x) {
      d_pcam[0] += d_jac(0, 2) * (-cam.fx / (z * z));
      d_pcam[2] += d_jac(0, 2) * (2.0 * cam.fx * x / (z * z * z));
    } else {
      d_pcam[2] += d_jac(0, 2) * (cam.fx * p.txtz / (z * z));
    }
    if (!p.clamped_y) {
      d_pcam[1] += d_jac(1, 2) * (-cam.fy / (z * z));
      d_pcam[2] += d_jac(1, 2) * (2.0 * cam.fy * y / (z * z * z));
    } else {
      d_pcam[2] += d_jac(1, 2) * (cam.fy * p.tytz / (z * z));
    }

    // mean2d = (fx x / z + cx, fy y / z + cy)
    d_pcam[0] += a.d_mean2d[0] * cam.fx / z;
    d_pcam[1] += a.d_mean2d[1] * cam.fy / z;
    d_pcam[2] += -a.d_mean2d[0] * cam.fx * x / (z * z) -
                 a.d_mean2d[1] * cam.fy * y / (z * z);

    // compositing depth term
    d_pcam[2] += a.d_z;

    g.d_mean[i] += w_mat.transpose() * d_pcam;

    // SH color; the view direction also moves with the mean.
    Vec3 view = set.mean[i] - cam_center;
    double vn = view.norm();
    if (vn > 1e-12) {
      Vec3 dir = view / vn;
      Vec3 d_dir = eval_sh_color_backward(set.sh_degree, set.sh_ptr(i), dir,
                                          a.d_color, g.d_sh.data() + i * set.sh_stride());
      g.d_mean[i] += (Mat3::Identity() - dir * dir.transpose()) / vn * d_dir;
    }
  }
  return g;
}

}  // namespace splatgraph
