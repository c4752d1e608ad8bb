#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splatgraph/dataset.hpp"
#include "splatgraph/checkpoint.hpp"
#include "splatgraph/pose_pipeline.hpp"
#include "splatgraph/rasterizer.hpp"
#include "splatgraph/rng.hpp"
#include "splatgraph/scene_graph.hpp"

namespace splatgraph {

inline constexpr double deg_to_rad(double d) { return d * M_PI / 180.0; }

// Everything the generator needs; the whole output is a pure function of this.
struct SyntheticSpec {
  std::uint64_t seed = 7;
  int n_frames = 60;
  int width = 96;
  int height = 64;
  int n_cameras = 3;
  int n_background = 3000;
  double focal = 70.0;
  double budget_scale = 0.005;
  // corruption injected into the stored annotations (ground truth stays exact
  // in the *_gt files); zero everything for a clean dataset
  double box_noise_t = 0.1;                    // meters
  double box_noise_yaw = deg_to_rad(2.0);
  double theta_noise = deg_to_rad(5.0);
  double detection_drop = 0.3;
  double pose_drop = 0.5;
  double lidar_fraction = 0.02;
};

struct SyntheticResult {
  Dataset dataset;    // metadata only; root unset until written
  SceneGraph scene;   // exact scene the images are rendered from
  std::vector<Tracklet3d> tracklets_gt;
  std::vector<AssociationRecord> associations;
};

namespace synth_detail {

inline void set_dc(GaussianSet& set, std::size_t i, const Vec3& color) {
  double* sh = set.sh_ptr(i);
  for (int ch = 0; ch < 3; ++ch) sh[ch] = (color[ch] - 0.5) / sh_detail::kC0;
}

inline Vec3 clamp01(const Vec3& c) {
  return Vec3(std::clamp(c[0], 0.02, 0.98), std::clamp(c[1], 0.02, 0.98),
              std::clamp(c[2], 0.02, 0.98));
}

// Ground / wall / clutter palette, smooth in position so it is learnable.
inline Vec3 ground_color(const Vec3& p) {
  return clamp01(Vec3(0.42 + 0.18 * std::sin(0.7 * p[0]) + 0.08 * std::cos(0.33 * p[2]),
                      0.45 + 0.14 * std::sin(0.5 * p[2] + 1.1),
                      0.34 + 0.10 * std::cos(0.4 * p[0] - 0.7)));
}

inline Vec3 wall_color(const Vec3& p) {
  double h = std::clamp((1.2 - p[1]) / 7.0, 0.0, 1.0);  // 0 at ground, 1 high up
  return clamp01(Vec3(0.30 + 0.10 * h + 0.05 * std::sin(0.25 * p[0]),
                      0.33 + 0.12 * h,
                      0.40 + 0.16 * h));
}

inline GaussianSet build_background(Rng& rng, int n) {
  GaussianSet set;
  set.sh_degree = 1;
  set.reserve(n);
  int n_ground = n * 55 / 100;
  int n_wall = n * 30 / 100;
  int n_clutter = n - n_ground - n_wall;
  auto push = [&](const Vec3& mean, const Vec3& scale, const Vec3& color) {
    Gaussian g;
    g.mean = mean;
    g.rot = quat_normalize(Vec4(rng.normal(), 0.3 * rng.normal(),
                                0.3 * rng.normal(), 0.3 * rng.normal()));
    g.log_scale = Vec3(std::log(scale[0]), std::log(scale[1]), std::log(scale[2]));
    g.opacity_raw = rng.uniform(1.6, 3.5);
    g.sh.assign(12, 0.0);
    for (int k = 3; k < 12; ++k) g.sh[k] = 0.02 * rng.normal();
    g.source = BlobSource::kBackground;
    set.push_back(g);
    set_dc(set, set.size() - 1, color);
  };
  for (int i = 0; i < n_ground; ++i) {
    Vec3 p(rng.uniform(-14.0, 14.0), 1.2 + rng.uniform(-0.02, 0.02),
           rng.uniform(2.0, 34.0));
    double s = rng.uniform(0.12, 0.38);
    push(p, Vec3(s, 0.25 * s, s), ground_color(p));
  }
  for (int i = 0; i < n_wall; ++i) {
    Vec3 p(rng.uniform(-20.0, 20.0), rng.uniform(-6.0, 1.2),
           rng.uniform(30.0, 36.0));
    double s = rng.uniform(0.5, 1.2);
    push(p, Vec3(s, s, 0.4 * s), wall_color(p));
  }
  int n_groups = std::max(1, n_clutter / 40);
  for (int gidx = 0; gidx < n_groups; ++gidx) {
    Vec3 center(rng.uniform(-9.0, 9.0), 0.0, rng.uniform(6.0, 26.0));
    Vec3 tint = clamp01(Vec3(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                             rng.uniform(0.2, 0.8)));
    int count = gidx + 1 < n_groups ? n_clutter / n_groups
                                    : n_clutter - (n_groups - 1) * (n_clutter / n_groups);
    for (int i = 0; i < count; ++i) {
      Vec3 p = center + Vec3(0.5 * rng.normal(), rng.uniform(0.15, 1.1),
                             0.5 * rng.normal());
      p[1] = std::min(p[1], 1.15);
      double s = rng.uniform(0.08, 0.22);
      push(p, Vec3(s, s, s),
           clamp01(tint + Vec3(0.06 * rng.normal(), 0.06 * rng.normal(),
                               0.06 * rng.normal())));
    }
  }
  return set;
}

inline void paint_sky(EnvironmentMap& sky) {
  for (int row = 0; row < sky.height(); ++row) {
    double t = static_cast<double>(row) / (sky.height() - 1);
    for (int col = 0; col < sky.width(); ++col) {
      Vec3 c = (1 - t) * Vec3(0.62, 0.66, 0.84) + t * Vec3(0.10, 0.12, 0.22);
      c[0] += 0.05 * std::sin(2.0 * M_PI * col / sky.width());
      sky.set_color(row, col, clamp01(c));
    }
  }
}

// --- cart -------------------------------------------------------------------

inline GaussianSet build_cart(Rng& rng) {
  GaussianSet set;
  set.sh_degree = 1;
  auto push = [&](const Vec3& mean, double scale, const Vec3& color) {
    Gaussian g;
    g.mean = mean;
    g.rot = quat_normalize(Vec4(1.0, 0.2 * rng.normal(), 0.2 * rng.normal(),
                                0.2 * rng.normal()));
    double s = std::log(scale);
    g.log_scale = Vec3(s, s, s);
    g.opacity_raw = rng.uniform(2.0, 3.2);
    g.sh.assign(12, 0.0);
    g.source = BlobSource::kRigid;
    set.push_back(g);
    set_dc(set, set.size() - 1, color);
  };
  // body: box half extents (0.75, 0.37, 1.25), center slightly above box middle
  const Vec3 half(0.75, 0.37, 1.25);
  const Vec3 center(0.0, 0.02, 0.0);
  struct Face {
    int axis;
    double sign;
    double area;
  };
  std::array<Face, 6> faces = {{{0, -1, half[1] * half[2]},
                                {0, 1, half[1] * half[2]},
                                {1, -1, half[0] * half[2]},
                                {1, 1, half[0] * half[2]},
                                {2, -1, half[0] * half[1]},
                                {2, 1, half[0] * half[1]}}};
  double total_area = 0;
  for (const Face& f : faces) total_area += f.area;
  for (const Face& f : faces) {
    int count = static_cast<int>(std::lround(190.0 * f.area / total_area));
    for (int i = 0; i < count; ++i) {
      Vec3 p;
      p[f.axis] = f.sign * half[f.axis];
      int a = (f.axis + 1) % 3, b = (f.axis + 2) % 3;
      p[a] = rng.uniform(-half[a], half[a]);
      p[b] = rng.uniform(-half[b], half[b]);
      p += center;
      Vec3 c = p[2] > 0.2 ? Vec3(0.72, 0.26, 0.22) : Vec3(0.80, 0.74, 0.58);
      if (f.axis == 1 && f.sign < 0) c *= 0.7;  // roof darker
      push(p, rng.uniform(0.05, 0.09), clamp01(c));
    }
  }
  for (double sx : {-0.62, 0.62})
    for (double sz : {-0.85, 0.85})
      for (int i = 0; i < 10; ++i) {
        double phi = 2.0 * M_PI * i / 10.0;
        push(Vec3(sx, 0.30 + 0.16 * std::cos(phi), sz + 0.16 * std::sin(phi)),
             0.05, Vec3(0.08, 0.08, 0.09));
      }
  return set;
}

// --- biped ------------------------------------------------------------------

enum BipedPart { kSkin = 0, kShirt = 1, kPants = 2, kShoe = 3 };

struct BipedBuild {
  ArticulatedTemplate tmpl;
  std::vector<int> part;  // per vertex
};

// Per-vertex skinning source: blend from j_from toward j_to along the tube.
struct VertexWeight {
  int j_from = 0;
  int j_to = -1;
  double w_to = 0.0;
};

inline void add_tube(BipedBuild& b, std::vector<VertexWeight>& weights,
                     const Vec3& p0, const Vec3& p1, double r0, double r1,
                     int n_rings, int j_from, int j_to, double blend_max,
                     int part) {
  Vec3 dir = (p1 - p0).normalized();
  Vec3 pick = std::abs(dir[0]) < 0.8 ? Vec3(1, 0, 0) : Vec3(0, 0, 1);
  Vec3 n1 = dir.cross(pick).normalized();
  Vec3 n2 = dir.cross(n1);
  int base = static_cast<int>(b.tmpl.vertices.size());
  for (int r = 0; r < n_rings; ++r) {
    double s = n_rings > 1 ? static_cast<double>(r) / (n_rings - 1) : 0.0;
    Vec3 c = (1 - s) * p0 + s * p1;
    double rad = (1 - s) * r0 + s * r1;
    for (int k = 0; k < 6; ++k) {
      double phi = 2.0 * M_PI * k / 6.0 + 0.3 * s;
      b.tmpl.vertices.push_back(c + rad * (std::cos(phi) * n1 + std::sin(phi) * n2));
      b.part.push_back(part);
      weights.push_back({j_from, j_to, j_to >= 0 ? blend_max * s : 0.0});
    }
    if (r > 0)
      for (int k = 0; k < 6; ++k) {
        int a0 = base + (r - 1) * 6 + k, a1 = base + (r - 1) * 6 + (k + 1) % 6;
        int b0 = base + r * 6 + k, b1 = base + r * 6 + (k + 1) % 6;
        b.tmpl.faces.push_back({a0, a1, b1});
        b.tmpl.faces.push_back({a0, b1, b0});
      }
  }
}

inline BipedBuild build_biped() {
  BipedBuild b;
  b.tmpl.joints = {Vec3(0, 0, 0),          Vec3(0, -0.18, 0),
                   Vec3(0, -0.36, 0),      Vec3(0, -0.55, 0),
                   Vec3(-0.19, -0.48, 0),  Vec3(-0.45, -0.44, 0),
                   Vec3(0.19, -0.48, 0),   Vec3(0.45, -0.44, 0),
                   Vec3(-0.10, 0.03, 0),   Vec3(-0.12, 0.42, 0),
                   Vec3(0.10, 0.03, 0),    Vec3(0.12, 0.42, 0)};
  b.tmpl.parent = {-1, 0, 1, 2, 2, 4, 2, 6, 0, 8, 0, 10};

  std::vector<VertexWeight> weights;
  const Vec3& pelvis = b.tmpl.joints[0];
  const Vec3& spine = b.tmpl.joints[1];
  const Vec3& chest = b.tmpl.joints[2];
  const Vec3& head = b.tmpl.joints[3];
  add_tube(b, weights, pelvis, spine, 0.150, 0.155, 3, 0, 1, 0.55, kShirt);
  add_tube(b, weights, spine, chest, 0.155, 0.145, 3, 1, 2, 0.55, kShirt);
  add_tube(b, weights, chest, head, 0.130, 0.070, 3, 2, 3, 0.55, kShirt);
  for (double y : {-0.57, -0.64, -0.71}) {
    double rad = y == -0.64 ? 0.085 : 0.055;
    add_tube(b, weights, Vec3(0, y, -rad * 0.1), Vec3(0, y - 0.001, rad * 0.1),
             rad, rad, 1, 3, -1, 0.0, kSkin);
  }
  for (int side = 0; side < 2; ++side) {
    int sho = side == 0 ? 4 : 6, elb = side == 0 ? 5 : 7;
    int hip = side == 0 ? 8 : 10, kne = side == 0 ? 9 : 11;
    double sg = side == 0 ? -1.0 : 1.0;
    add_tube(b, weights, b.tmpl.joints[sho], b.tmpl.joints[elb], 0.050, 0.042, 3,
             sho, elb, 0.5, kShirt);
    add_tube(b, weights, b.tmpl.joints[elb],
             b.tmpl.joints[elb] + Vec3(sg * 0.23, 0.04, 0), 0.040, 0.030, 3, elb,
             -1, 0.0, kSkin);
    add_tube(b, weights, b.tmpl.joints[hip], b.tmpl.joints[kne], 0.075, 0.060, 3,
             hip, kne, 0.5, kPants);
    add_tube(b, weights, b.tmpl.joints[kne],
             b.tmpl.joints[kne] + Vec3(sg * 0.01, 0.38, 0.02), 0.050, 0.038, 4,
             kne, -1, 0.0, kPants);
    for (int k = 1; k <= 6; ++k)  // last ring of the shank is the shoe
      b.part[b.part.size() - k] = kShoe;
  }

  std::size_t nv = b.tmpl.vertices.size();
  std::size_t nk = b.tmpl.joints.size();
  b.tmpl.skinning.assign(nk * nv, 0.0);
  for (std::size_t i = 0; i < nv; ++i) {
    const VertexWeight& w = weights[i];
    b.tmpl.skinning[static_cast<std::size_t>(w.j_from) * nv + i] = 1.0 - w.w_to;
    if (w.j_to >= 0 && w.w_to > 0)
      b.tmpl.skinning[static_cast<std::size_t>(w.j_to) * nv + i] = w.w_to;
  }
  b.tmpl.n_shapes = 1;
  b.tmpl.shape_basis.resize(nv);
  for (std::size_t i = 0; i < nv; ++i)
    b.tmpl.shape_basis[i] = 0.02 * b.tmpl.vertices[i];
  b.tmpl.validate();
  return b;
}

inline void paint_biped(GaussianSet& set, const std::vector<int>& part, Rng& rng) {
  static const Vec3 palette[4] = {Vec3(0.80, 0.62, 0.50), Vec3(0.24, 0.44, 0.70),
                                  Vec3(0.26, 0.23, 0.21), Vec3(0.55, 0.12, 0.12)};
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.opacity_raw[i] = rng.uniform(2.2, 3.0);
    Vec3 c = palette[part[i]] + Vec3(0.025 * rng.normal(), 0.025 * rng.normal(),
                                     0.025 * rng.normal());
    set_dc(set, i, clamp01(c));
  }
}

// Quaternions for every joint at a walk-cycle time (seconds).
inline std::vector<Vec4> walk_theta(double t_sec) {
  const double w = 2.0 * M_PI / 1.2;
  double s1 = std::sin(w * t_sec), s2 = std::sin(2.0 * w * t_sec);
  std::vector<Vec4> theta(12, quat_identity());
  auto rx = [](double a) { return exp_so3_quat(Vec3(a, 0, 0)); };
  theta[1] = exp_so3_quat(Vec3(0, 0, 0.05 * s2));
  theta[2] = exp_so3_quat(Vec3(0, 0, 0.04 * std::sin(2.0 * w * t_sec + 0.4)));
  theta[3] = exp_so3_quat(Vec3(0, 0.05 * s1, 0));
  theta[4] = rx(-0.32 * s1);
  theta[5] = rx(0.25 + 0.10 * s1);
  theta[6] = rx(0.32 * s1);
  theta[7] = rx(0.25 - 0.10 * s1);
  theta[8] = rx(0.45 * s1);
  theta[9] = rx(0.10 + 0.45 * std::max(0.0, -s1));
  theta[10] = rx(-0.45 * s1);
  theta[11] = rx(0.10 + 0.45 * std::max(0.0, s1));
  return theta;
}

// --- creature ---------------------------------------------------------------

inline GaussianSet build_creature(Rng& rng) {
  GaussianSet set;
  set.sh_degree = 1;
  auto push = [&](const Vec3& mean, double scale, const Vec3& color) {
    Gaussian g;
    g.mean = mean;
    g.rot = quat_normalize(Vec4(1.0, 0.3 * rng.normal(), 0.3 * rng.normal(),
                                0.3 * rng.normal()));
    double s = std::log(scale);
    g.log_scale = Vec3(s, s, s);
    g.opacity_raw = rng.uniform(2.0, 3.0);
    g.sh.assign(12, 0.0);
    g.source = BlobSource::kDeformable;
    set.push_back(g);
    set_dc(set, set.size() - 1, color);
  };
  for (int i = 0; i < 170; ++i) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    d.normalize();
    double azim = std::atan2(d[2], d[0]);
    double r = 0.42 * (1.0 + 0.10 * std::sin(3.0 * azim) * d[1]);
    Vec3 p = r * d;
    double u = std::clamp((p[1] / 0.42 + 1.0) / 2.0, 0.0, 1.0);
    Vec3 c = (1 - u) * Vec3(0.20, 0.66, 0.60) + u * Vec3(0.70, 0.28, 0.58);
    push(p, rng.uniform(0.045, 0.075),
         clamp01(c + Vec3(0.03 * rng.normal(), 0.03 * rng.normal(),
                          0.03 * rng.normal())));
  }
  for (int i = 0; i < 22; ++i) {
    double s = static_cast<double>(i) / 21.0;
    Vec3 p(0.05 * std::sin(6.0 * s), -0.12 * s, 0.40 + 0.34 * s);
    p += Vec3(0.02 * rng.normal(), 0.02 * rng.normal(), 0.02 * rng.normal());
    push(p, 0.05 * (1.0 - 0.5 * s), Vec3(0.25, 0.60, 0.55));
  }
  return set;
}

// Give the deformation head deterministic weights scaled so the position
// deltas have a target RMS over the node's blobs and the timeline.
inline void calibrate_teacher(DeformationNet& net, const SceneNode& node,
                              double target_rms, Rng& rng) {
  Eigen::MatrixXd& head = net.weight(DeformationNet::kLayers - 1);
  for (Eigen::Index j = 0; j < head.size(); ++j)
    head.data()[j] = 0.02 * rng.normal();
  std::vector<Vec3> norm_means(node.canonical.size());
  for (std::size_t i = 0; i < node.canonical.size(); ++i)
    norm_means[i] = node.norm_box.normalize(node.canonical.mean[i]);
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (int ti = 0; ti < 9; ++ti) {
    DeformDeltas d =
        deform_query(net, norm_means, node.embed, ti / 8.0, nullptr);
    for (const Vec3& dm : d.d_mean) {
      sum_sq += dm.squaredNorm();
      ++count;
    }
  }
  double rms = std::sqrt(sum_sq / std::max<std::size_t>(1, count));
  if (rms > 1e-12) head *= target_rms / rms;
}

// Camera rig at frame f: three forward cameras on a slowly dollying bar.
inline SE3 rig_world_from_cam(int cam_index, int f, int n_frames) {
  double u = static_cast<double>(f) / std::max(1, n_frames - 1);
  SE3 world_from_cam = SE3::identity();
  world_from_cam.t = Vec3(0.6 * (cam_index - 1) + 0.15 * std::sin(2.0 * M_PI * u),
                          0.0, 1.8 * u);
  return world_from_cam;
}

inline Vec4 heading_yaw(double tx, double tz) {
  return exp_so3_quat(Vec3(0, std::atan2(tx, tz), 0));
}

}  // namespace synth_detail

inline SyntheticResult generate_synthetic(const SyntheticSpec& spec) {
  using namespace synth_detail;
  if (spec.n_frames < 10) throw std::invalid_argument("synthetic: need >= 10 frames");
  if (spec.n_cameras < 1) throw std::invalid_argument("synthetic: need a camera");
  Rng root_rng(spec.seed);

  SyntheticResult out;
  Dataset& ds = out.dataset;
  SceneGraph& scene = out.scene;

  ds.name = "synthetic";
  ds.n_frames = spec.n_frames;
  ds.budget_scale = spec.budget_scale;
  for (int f = 0; f < spec.n_frames; ++f) ds.timestamps.push_back(0.1 * f);
  scene.timestamps = ds.timestamps;

  for (int c = 0; c < spec.n_cameras; ++c) {
    DatasetCamera cam;
    cam.intrinsics.id = c;
    cam.intrinsics.width = spec.width;
    cam.intrinsics.height = spec.height;
    cam.intrinsics.fx = spec.focal;
    cam.intrinsics.fy = spec.focal;
    cam.intrinsics.cx = 0.5 * spec.width;
    cam.intrinsics.cy = 0.5 * spec.height;
    cam.intrinsics.near_clip = 0.1;
    cam.intrinsics.far_clip = 200.0;
    for (int f = 0; f < spec.n_frames; ++f)
      cam.cam_from_world.push_back(
          rig_world_from_cam(c, f, spec.n_frames).inverse());
    ds.cameras.push_back(std::move(cam));
  }

  Rng bg_rng = root_rng.fork(1);
  scene.background = build_background(bg_rng, spec.n_background);
  scene.sky = EnvironmentMap(64, 128);
  paint_sky(scene.sky);

  // --- cart (rigid) ---------------------------------------------------------
  {
    SceneNode node;
    node.id = 1;
    node.class_label = "vehicle";
    node.kind = NodeKind::kRigid;
    Rng r = root_rng.fork(2);
    node.canonical = build_cart(r);
    node.box_dims = Vec3(1.6, 1.0, 2.6);
    for (int f = 0; f < spec.n_frames; ++f) {
      double u = static_cast<double>(f) / (spec.n_frames - 1);
      Vec3 t(-3.2 + 6.0 * u, 0.70, 9.5 + 0.8 * std::sin(M_PI * u));
      double tz = 0.8 * M_PI * std::cos(M_PI * u) / (spec.n_frames - 1);
      Vec4 yaw = heading_yaw(6.0 / (spec.n_frames - 1), tz);
      node.pose.base.push_back({yaw, t});
      node.pose.valid.push_back(1);
    }
    node.pose.init_residuals();
    scene.nodes.push_back(std::move(node));
  }

  // --- biped (articulated) --------------------------------------------------
  {
    SceneNode node;
    node.id = 2;
    node.class_label = "pedestrian";
    node.kind = NodeKind::kArticulated;
    BipedBuild biped = build_biped();
    auto [set, skin] = tessellate_template(biped.tmpl, {0.0});
    Rng r = root_rng.fork(3);
    paint_biped(set, biped.part, r);
    node.canonical = std::move(set);
    node.skin = std::move(skin);
    node.tmpl = biped.tmpl;
    node.box_dims = Vec3(0.9, 1.9, 0.9);
    node.body.n_joints = 12;
    for (int f = 0; f < spec.n_frames; ++f) {
      double u = static_cast<double>(f) / (spec.n_frames - 1);
      double t_sec = 0.1 * f;
      Vec3 t(2.2 - 4.5 * u, 0.40 + 0.015 * std::sin(2.0 * 2.0 * M_PI / 1.2 * t_sec),
             6.2 + 0.3 * std::sin(2.0 * M_PI * u));
      double tz = 0.3 * 2.0 * M_PI * std::cos(2.0 * M_PI * u) / (spec.n_frames - 1);
      node.pose.base.push_back({heading_yaw(-4.5 / (spec.n_frames - 1), tz), t});
      node.pose.valid.push_back(1);
      node.body.theta.push_back(walk_theta(t_sec));
      node.body.valid.push_back(1);
      node.body.provenance.push_back(
          static_cast<std::uint8_t>(PoseProvenance::kDetected));
    }
    node.pose.init_residuals();
    scene.nodes.push_back(std::move(node));
  }

  // --- creature (deformable) ------------------------------------------------
  {
    SceneNode node;
    node.id = 3;
    node.class_label = "misc";
    node.kind = NodeKind::kDeformable;
    Rng r = root_rng.fork(4);
    node.canonical = build_creature(r);
    node.box_dims = Vec3(1.1, 1.1, 1.3);
    node.norm_box.center = Vec3::Zero();
    node.norm_box.half = Vec3(0.6, 0.6, 0.8);
    node.embed = Eigen::VectorXd::Zero(kDeformEmbedDim);
    Rng er = root_rng.fork(5);
    for (int j = 0; j < kDeformEmbedDim; ++j) node.embed[j] = 0.3 * er.normal();
    for (int f = 0; f < spec.n_frames; ++f) {
      double u = static_cast<double>(f) / (spec.n_frames - 1);
      Vec3 t(1.3 - 2.2 * u, 0.64 + 0.04 * std::sin(4.0 * M_PI * u),
             5.2 + 0.6 * std::sin(M_PI * u));
      Vec4 yaw = exp_so3_quat(Vec3(0, 0.4 * std::sin(2.0 * M_PI * u), 0));
      node.pose.base.push_back({yaw, t});
      node.pose.valid.push_back(1);
    }
    node.pose.init_residuals();
    scene.nodes.push_back(std::move(node));
  }

  Rng net_rng = root_rng.fork(6);
  scene.deform_net.init_weights(net_rng);
  calibrate_teacher(scene.deform_net, scene.nodes[2], 0.12, net_rng);
  scene.validate();

  // --- frustum coverage -----------------------------------------------------
  for (const SceneNode& node : scene.nodes) {
    int visible = 0;
    for (int f = 0; f < spec.n_frames; ++f) {
      bool seen = false;
      for (int c = 0; c < spec.n_cameras && !seen; ++c)
        seen = project_box(ds.camera_at(c, f), node.pose.base[f], node.box_dims)
                   .has_value();
      visible += seen;
    }
    if (visible < (spec.n_frames * 8 + 9) / 10)
      throw std::runtime_error("synthetic: node " + std::to_string(node.id) +
                               " in frustum only " + std::to_string(visible) +
                               "/" + std::to_string(spec.n_frames) + " frames");
  }

  // --- exact tracklets, then the noisy stored copies -------------------------
  for (const SceneNode& node : scene.nodes) {
    Tracklet3d t;
    t.id = node.id;
    t.class_label = node.class_label;
    t.kind = node.kind;
    t.dims = node.box_dims;
    t.pose = node.pose.base;
    t.valid = node.pose.valid;
    out.tracklets_gt.push_back(std::move(t));
  }
  Rng box_rng = root_rng.fork(7);
  for (const Tracklet3d& gt : out.tracklets_gt) {
    Tracklet3d noisy = gt;
    for (std::size_t f = 0; f < noisy.pose.size(); ++f) {
      noisy.pose[f].t += Vec3(box_rng.normal(0, spec.box_noise_t),
                              box_rng.normal(0, spec.box_noise_t),
                              box_rng.normal(0, spec.box_noise_t));
      noisy.pose[f].q = quat_mul(
          noisy.pose[f].q,
          exp_so3_quat(Vec3(0, box_rng.normal(0, spec.box_noise_yaw), 0)));
    }
    ds.tracklets.push_back(std::move(noisy));
  }

  // --- detections + association bookkeeping ---------------------------------
  Rng det_rng = root_rng.fork(8);
  int n_actors = static_cast<int>(scene.nodes.size());
  for (int c = 0; c < spec.n_cameras; ++c) {
    std::vector<int> local(n_actors);
    for (int i = 0; i < n_actors; ++i) local[i] = i;
    for (int i = n_actors - 1; i > 0; --i)
      std::swap(local[i], local[det_rng.uniform_int(i + 1)]);
    for (int a = 0; a < n_actors; ++a) {
      const SceneNode& node = scene.nodes[a];
      Track2d tr;
      tr.cam_id = c;
      tr.local_id = local[a];
      for (int f = 0; f < spec.n_frames; ++f) {
        auto box = project_box(ds.camera_at(c, f), node.pose.base[f], node.box_dims);
        bool keep = box.has_value() && det_rng.uniform() >= spec.detection_drop;
        BoundingBox2d noisy{};
        if (box) {
          noisy = *box;
          noisy.x0 += det_rng.normal(0, 0.5);
          noisy.y0 += det_rng.normal(0, 0.5);
          noisy.x1 += det_rng.normal(0, 0.5);
          noisy.y1 += det_rng.normal(0, 0.5);
          if (noisy.x1 <= noisy.x0 || noisy.y1 <= noisy.y0) keep = false;
        }
        tr.valid.push_back(keep ? 1 : 0);
        tr.box.push_back(noisy);
      }
      ds.tracks2d.push_back(std::move(tr));
      out.associations.push_back({c, local[a], node.id});
    }
  }

  // --- body pose detections for the biped ------------------------------------
  const SceneNode& biped_node = *scene.find_node(2);
  Rng pose_rng = root_rng.fork(9);
  for (int c = 0; c < spec.n_cameras; ++c) {
    int local = -1;
    for (const AssociationRecord& a : out.associations)
      if (a.cam_id == c && a.tracklet_id == 2) local = a.local_id;
    BodyPoseInit init;
    init.cam_id = c;
    init.local_id = local;
    init.body.n_joints = 12;
    const Track2d* track = nullptr;
    for (const Track2d& tr : ds.tracks2d)
      if (tr.cam_id == c && tr.local_id == local) track = &tr;
    for (int f = 0; f < spec.n_frames; ++f) {
      std::vector<Vec4> theta = biped_node.body.theta[f];
      for (Vec4& q : theta) {
        Vec3 axis(pose_rng.normal(), pose_rng.normal(), pose_rng.normal());
        double n = axis.norm();
        if (n > 1e-12) axis /= n;
        q = quat_mul(q, exp_so3_quat(axis * pose_rng.normal(0, spec.theta_noise)));
      }
      bool keep = track && track->valid[f] && pose_rng.uniform() >= spec.pose_drop;
      init.body.theta.push_back(std::move(theta));
      init.body.valid.push_back(keep ? 1 : 0);
      init.body.provenance.push_back(
          static_cast<std::uint8_t>(PoseProvenance::kDetected));
    }
    ds.poses_init.push_back(std::move(init));
  }

  ds.human_template = biped_node.tmpl;
  ds.has_template = true;
  ds.template_name = "biped";
  ds.test_frames = nvs_split(spec.n_frames);
  return out;
}

struct SynthSummary {
  int n_frames = 0;
  int n_cameras = 0;
  std::size_t bg_blobs = 0;
  std::size_t node_blobs = 0;
  std::size_t lidar_points = 0;
};

// Render every frame with the scene's own rasterizer and write the full
// dataset plus the ground-truth sidecar files.
inline SynthSummary write_synthetic(const SyntheticSpec& spec,
                                    const std::string& root) {
  SyntheticResult result = generate_synthetic(spec);
  Dataset& ds = result.dataset;
  ds.root = root;
  save_dataset_meta(ds);

  Rng root_rng(spec.seed);
  Rng lidar_rng = root_rng.fork(100);
  SynthSummary summary;
  summary.n_frames = spec.n_frames;
  summary.n_cameras = spec.n_cameras;
  summary.bg_blobs = result.scene.background.size();
  for (const SceneNode& n : result.scene.nodes) summary.node_blobs += n.canonical.size();

  std::size_t np = static_cast<std::size_t>(spec.width) * spec.height;
  for (int f = 0; f < spec.n_frames; ++f) {
    WorldAssembly world = assemble_world(result.scene, f);
    std::vector<Vec3> cloud;
    for (int c = 0; c < spec.n_cameras; ++c) {
      Camera cam = ds.camera_at(c, f);
      RenderOptions opt;
      opt.sky = &result.scene.sky;
      opt.dynamic_flags = &world.dynamic_flags;
      RenderOutput render_out = render(cam, world.world, opt);

      std::vector<double> img(np * 3);
      for (std::size_t i = 0; i < np * 3; ++i)
        img[i] = std::clamp(render_out.color[i], 0.0, 1.0);
      save_image(ds, c, f, img);

      std::vector<double> sky_mask(np);
      for (std::size_t i = 0; i < np; ++i)
        sky_mask[i] = render_out.opacity[i] < 0.01 ? 1.0 : 0.0;
      save_sky_mask(ds, c, f, sky_mask);

      SE3 world_from_cam = cam.cam_from_world.inverse();
      std::vector<DepthSample> samples;
      for (int py = 0; py < spec.height; ++py)
        for (int px = 0; px < spec.width; ++px) {
          std::size_t pix = static_cast<std::size_t>(py) * spec.width + px;
          if (lidar_rng.uniform() >= spec.lidar_fraction) continue;
          if (render_out.opacity[pix] <= 0.5) continue;
          double u = px + 0.5, v = py + 0.5;
          Vec3 dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
          double z = render_out.depth[pix];
          samples.push_back({u, v, z * dir_cam.norm()});
          cloud.push_back(world_from_cam.apply(z * dir_cam));
        }
      save_depth(ds, c, f, samples);
      summary.lidar_points += samples.size();
    }
    save_lidar(ds, f, cloud);
  }

  save_gt_tracklets(root, result.tracklets_gt);
  save_gt_associations(root, result.associations);
  save_scene(root + "/scene_gt.bin", result.scene);
  return summary;
}

}  // namespace splatgraph
