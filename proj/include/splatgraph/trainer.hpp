#pragma once

#include <algorithm>
#include <cmath>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "splatgraph/checkpoint.hpp"
#include "splatgraph/dataset.hpp"
#include "splatgraph/losses.hpp"
#include "splatgraph/optimizer.hpp"
#include "splatgraph/pose_pipeline.hpp"
#include "splatgraph/rasterizer.hpp"
#include "splatgraph/rng.hpp"
#include "splatgraph/scene_graph.hpp"

namespace splatgraph {

struct TrainConfig {
  // loss
  double lambda_r = 0.2;
  double lambda_depth = 0.1;
  double lambda_opacity = 0.05;
  double lambda_pose = 0.01;
  double dynamic_weight = 5.0;
  // schedule
  long long iterations = 30000;
  std::uint64_t seed = 1;
  long long log_interval = 100;
  long long checkpoint_interval = 0;  // 0: final checkpoint only
  // densification
  double densify_grad_threshold = 3e-4;
  double densify_scale_threshold = 3e-3;  // fraction of scene extent
  long long densify_interval = 100;
  long long densify_start = 500;
  double densify_stop_fraction = 0.6;
  long long opacity_reset_interval = 3000;
  double prune_opacity = 0.005;
  double split_factor = 1.6;
  double max_blobs = 2e6;  // scaled by dataset budget_scale
  // learning rates (position rates additionally scale by scene extent)
  double position_lr_init = 1.6e-4;
  double position_lr_final = 1.6e-6;
  double rot_lr_articulated = 5e-5;
  double rot_lr = 1e-5;
  double scale_lr = 5e-3;
  double opacity_lr = 0.05;
  double sh_dc_lr = 2.5e-3;
  double sh_rest_lr = 1.25e-4;
  double box_rot_lr_init = 1e-5;
  double box_rot_lr_final = 5e-6;
  double box_trans_lr_init = 5e-4;
  double box_trans_lr_final = 1e-4;
  double body_pose_lr_init = 5e-5;
  double body_pose_lr_final = 1e-5;
  double skin_lr = 1e-4;
  double net_lr = 8e-4;
  double embed_lr = 1e-3;
  double sky_lr = 5e-3;
  // structure
  int sh_degree = 3;              // background / rigid / deformable
  int sh_degree_articulated = 1;
  int sky_height = 64;
  int sky_width = 128;
  int num_threads = 1;
  // experiment switches
  bool optimize_boxes = true;
  bool optimize_body = true;
  bool enable_lbs = true;
  bool enable_deformation = true;
  std::string init_mode = "dataset";  // "dataset" or "gt_jitter"
  std::string gt_scene;               // scene file consumed by gt_jitter
  double gt_jitter_sigma = 0.05;

  void validate() const {
    if (lambda_r < 0 || lambda_depth < 0 || lambda_opacity < 0 || lambda_pose < 0)
      throw std::invalid_argument("config: loss weights must be non-negative");
    if (lambda_r > 1) throw std::invalid_argument("config: lambda_r must be <= 1");
    if (dynamic_weight <= 0)
      throw std::invalid_argument("config: dynamic_weight must be positive");
    if (iterations < 0) throw std::invalid_argument("config: iterations < 0");
    if (densify_grad_threshold <= 0 || densify_scale_threshold <= 0 ||
        densify_interval <= 0 || prune_opacity <= 0 || split_factor <= 1)
      throw std::invalid_argument("config: densification thresholds must be positive");
    if (densify_stop_fraction < 0 || densify_stop_fraction > 1)
      throw std::invalid_argument("config: densify_stop_fraction outside [0, 1]");
    auto check_schedule = [](double lo_init, double lo_final, const char* what) {
      if (lo_init < 0 || (lo_init > 0 && (lo_final <= 0 || lo_final > lo_init)))
        throw std::invalid_argument(std::string("config: bad schedule for ") + what);
    };
    check_schedule(position_lr_init, position_lr_final, "position lr");
    check_schedule(box_rot_lr_init, box_rot_lr_final, "box rotation lr");
    check_schedule(box_trans_lr_init, box_trans_lr_final, "box translation lr");
    check_schedule(body_pose_lr_init, body_pose_lr_final, "body pose lr");
    if (sh_degree < 0 || sh_degree > 3 || sh_degree_articulated < 0 ||
        sh_degree_articulated > 3)
      throw std::invalid_argument("config: SH degrees must lie in [0, 3]");
    if (sky_height < 1 || sky_width < 2)
      throw std::invalid_argument("config: sky map too small");
    if (init_mode != "dataset" && init_mode != "gt_jitter")
      throw std::invalid_argument("config: init_mode must be dataset or gt_jitter");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"lambda_r", lambda_r},
                          {"lambda_depth", lambda_depth},
                          {"lambda_opacity", lambda_opacity},
                          {"lambda_pose", lambda_pose},
                          {"dynamic_weight", dynamic_weight},
                          {"iterations", iterations},
                          {"seed", seed},
                          {"log_interval", log_interval},
                          {"checkpoint_interval", checkpoint_interval},
                          {"densify_grad_threshold", densify_grad_threshold},
                          {"densify_scale_threshold", densify_scale_threshold},
                          {"densify_interval", densify_interval},
                          {"densify_start", densify_start},
                          {"densify_stop_fraction", densify_stop_fraction},
                          {"opacity_reset_interval", opacity_reset_interval},
                          {"prune_opacity", prune_opacity},
                          {"split_factor", split_factor},
                          {"max_blobs", max_blobs},
                          {"position_lr_init", position_lr_init},
                          {"position_lr_final", position_lr_final},
                          {"rot_lr_articulated", rot_lr_articulated},
                          {"rot_lr", rot_lr},
                          {"scale_lr", scale_lr},
                          {"opacity_lr", opacity_lr},
                          {"sh_dc_lr", sh_dc_lr},
                          {"sh_rest_lr", sh_rest_lr},
                          {"box_rot_lr_init", box_rot_lr_init},
                          {"box_rot_lr_final", box_rot_lr_final},
                          {"box_trans_lr_init", box_trans_lr_init},
                          {"box_trans_lr_final", box_trans_lr_final},
                          {"body_pose_lr_init", body_pose_lr_init},
                          {"body_pose_lr_final", body_pose_lr_final},
                          {"skin_lr", skin_lr},
                          {"net_lr", net_lr},
                          {"embed_lr", embed_lr},
                          {"sky_lr", sky_lr},
                          {"sh_degree", sh_degree},
                          {"sh_degree_articulated", sh_degree_articulated},
                          {"sky_height", sky_height},
                          {"sky_width", sky_width},
                          {"num_threads", num_threads},
                          {"optimize_boxes", optimize_boxes},
                          {"optimize_body", optimize_body},
                          {"enable_lbs", enable_lbs},
                          {"enable_deformation", enable_deformation},
                          {"init_mode", init_mode},
                          {"gt_scene", gt_scene},
                          {"gt_jitter_sigma", gt_jitter_sigma}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    nlohmann::json known = cfg.to_json();
    for (const auto& item : j.items())
      if (!known.contains(item.key())) {
        std::string keys;
        for (const auto& k : known.items())
          keys += (keys.empty() ? "" : ", ") + k.key();
        throw std::invalid_argument("config: unknown key '" + item.key() +
                                    "'; valid keys: " + keys);
      }
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("lambda_r", cfg.lambda_r);
    get("lambda_depth", cfg.lambda_depth);
    get("lambda_opacity", cfg.lambda_opacity);
    get("lambda_pose", cfg.lambda_pose);
    get("dynamic_weight", cfg.dynamic_weight);
    get("iterations", cfg.iterations);
    get("seed", cfg.seed);
    get("log_interval", cfg.log_interval);
    get("checkpoint_interval", cfg.checkpoint_interval);
    get("densify_grad_threshold", cfg.densify_grad_threshold);
    get("densify_scale_threshold", cfg.densify_scale_threshold);
    get("densify_interval", cfg.densify_interval);
    get("densify_start", cfg.densify_start);
    get("densify_stop_fraction", cfg.densify_stop_fraction);
    get("opacity_reset_interval", cfg.opacity_reset_interval);
    get("prune_opacity", cfg.prune_opacity);
    get("split_factor", cfg.split_factor);
    get("max_blobs", cfg.max_blobs);
    get("position_lr_init", cfg.position_lr_init);
    get("position_lr_final", cfg.position_lr_final);
    get("rot_lr_articulated", cfg.rot_lr_articulated);
    get("rot_lr", cfg.rot_lr);
    get("scale_lr", cfg.scale_lr);
    get("opacity_lr", cfg.opacity_lr);
    get("sh_dc_lr", cfg.sh_dc_lr);
    get("sh_rest_lr", cfg.sh_rest_lr);
    get("box_rot_lr_init", cfg.box_rot_lr_init);
    get("box_rot_lr_final", cfg.box_rot_lr_final);
    get("box_trans_lr_init", cfg.box_trans_lr_init);
    get("box_trans_lr_final", cfg.box_trans_lr_final);
    get("body_pose_lr_init", cfg.body_pose_lr_init);
    get("body_pose_lr_final", cfg.body_pose_lr_final);
    get("skin_lr", cfg.skin_lr);
    get("net_lr", cfg.net_lr);
    get("embed_lr", cfg.embed_lr);
    get("sky_lr", cfg.sky_lr);
    get("sh_degree", cfg.sh_degree);
    get("sh_degree_articulated", cfg.sh_degree_articulated);
    get("sky_height", cfg.sky_height);
    get("sky_width", cfg.sky_width);
    get("num_threads", cfg.num_threads);
    get("optimize_boxes", cfg.optimize_boxes);
    get("optimize_body", cfg.optimize_body);
    get("enable_lbs", cfg.enable_lbs);
    get("enable_deformation", cfg.enable_deformation);
    get("init_mode", cfg.init_mode);
    get("gt_scene", cfg.gt_scene);
    get("gt_jitter_sigma", cfg.gt_jitter_sigma);
    cfg.validate();
    return cfg;
  }

  LossWeights loss_weights() const {
    return LossWeights{lambda_r, lambda_depth, lambda_opacity, lambda_pose,
                       dynamic_weight};
  }
};

// Ground truth for one camera-frame; depth and sky mask are optional (their
// loss terms vanish when the buffers are empty).
struct FrameTruth {
  std::vector<double> image;     // H*W*3
  std::vector<double> depth_z;   // H*W camera-z, 0 where no lidar sample fell
  std::vector<double> sky_mask;  // H*W
};

inline FrameTruth load_frame_truth(const Dataset& ds, int cam, int frame) {
  namespace fs = std::filesystem;
  FrameTruth truth;
  truth.image = ds.load_image(cam, frame);
  const Camera& c = ds.cameras.at(cam).intrinsics;
  if (fs::exists(ds.depth_path(cam, frame))) {
    truth.depth_z.assign(static_cast<std::size_t>(c.width) * c.height, 0.0);
    for (const DepthSample& s : ds.load_depth(cam, frame)) {
      int px = static_cast<int>(s.u), py = static_cast<int>(s.v);
      if (px < 0 || py < 0 || px >= c.width || py >= c.height) continue;
      Vec3 dir((s.u - c.cx) / c.fx, (s.v - c.cy) / c.fy, 1.0);
      truth.depth_z[static_cast<std::size_t>(py) * c.width + px] =
          s.range / dir.norm();
    }
  }
  if (fs::exists(ds.sky_path(cam, frame)))
    truth.sky_mask = ds.load_sky_mask(cam, frame);
  return truth;
}

// Densification inputs gathered from one backward pass, sliced per blob set.
struct SetStats {
  std::vector<double> abs_px;  // || pixel-scaled 2D mean gradient ||
  std::vector<std::uint8_t> visible;
};

// Total-loss gradients for every parameter group touched by one frame.
struct FrameGrads {
  SceneGrads scene;
  std::vector<PoseSmoothGrads> pose_smooth;  // per node; frames[0] < 0 if unused
  SetStats bg_stats;
  std::vector<SetStats> node_stats;

  explicit FrameGrads(const SceneGraph& s)
      : scene(s), pose_smooth(s.nodes.size()), node_stats(s.nodes.size()) {}
};

// Composite loss of one rendered frame. With `grads`, also backpropagates
// through the rasterizer and scene assembly, leaving gradients of the
// weighted total in `grads` (render-path theta grads land in grads->scene at
// the rendered frame; smoothness grads in grads->pose_smooth at t +- delta).
inline LossReport frame_loss(const SceneGraph& scene, const Camera& cam,
                             const FrameTruth& truth, int frame,
                             const LossWeights& w, int pose_delta,
                             FrameGrads* grads = nullptr, int num_threads = 1) {
  WorldAssembly world = assemble_world(scene, frame, grads != nullptr);
  RenderOptions opt;
  opt.sky = &scene.sky;
  opt.dynamic_flags = &world.dynamic_flags;
  opt.num_threads = num_threads;
  RenderOutput out = render(cam, world.world, opt);

  std::size_t np = static_cast<std::size_t>(cam.width) * cam.height;
  std::vector<double> weights = dynamic_pixel_weights(out.dynamic_opacity,
                                                      w.dynamic_weight);
  std::vector<double> d_l1, d_ssim, d_depth, d_opac;
  if (grads) {
    d_l1.assign(np * 3, 0.0);
    d_ssim.assign(np * 3, 0.0);
    d_depth.assign(np, 0.0);
    d_opac.assign(np, 0.0);
  }
  LossReport rep;
  rep.l1 = weighted_l1(out.color, truth.image, weights, 3,
                       grads ? &d_l1 : nullptr);
  rep.ssim = weighted_ssim_loss(out.color, truth.image, weights, cam.width,
                                cam.height, grads ? &d_ssim : nullptr);
  if (!truth.depth_z.empty())
    rep.depth = inverse_depth_l1(out.depth, truth.depth_z,
                                 grads ? &d_depth : nullptr);
  if (!truth.sky_mask.empty())
    rep.opacity = sky_opacity_loss(out.opacity, truth.sky_mask,
                                   grads ? &d_opac : nullptr);
  for (std::size_t i = 0; i < scene.nodes.size(); ++i) {
    const SceneNode& node = scene.nodes[i];
    if (node.kind != NodeKind::kArticulated || node.body.theta.empty()) continue;
    rep.pose += pose_smoothness(node.body, frame, pose_delta,
                                grads ? &grads->pose_smooth[i] : nullptr);
  }
  if (!grads) return rep;

  std::vector<double> d_color(np * 3);
  for (std::size_t i = 0; i < np * 3; ++i)
    d_color[i] = (1.0 - w.lambda_r) * d_l1[i] + w.lambda_r * d_ssim[i];
  for (std::size_t i = 0; i < np; ++i) {
    d_depth[i] *= w.lambda_depth;
    d_opac[i] *= w.lambda_opacity;
  }
  RenderAdjoints adj;
  adj.d_color = &d_color;
  adj.d_depth = &d_depth;
  adj.d_opacity = &d_opac;
  RasterGrads rg = render_backward(cam, world.world, adj, opt);
  assemble_world_backward(scene, world, rg.d_mean, rg.d_rot, rg.d_log_scale,
                          rg.d_opacity_raw, rg.d_sh, grads->scene);
  for (std::size_t k = 0; k < rg.sky_texel_grad.size(); ++k)
    grads->scene.d_sky_texels[k] += rg.sky_texel_grad[k];
  for (PoseSmoothGrads& pg : grads->pose_smooth)
    for (auto& frame_grads : pg.d_theta)
      for (Vec4& g : frame_grads) g *= w.lambda_pose;

  // screen-space gradient statistics, pixel-scaled as the densifier expects
  auto slice_stats = [&](SetStats& stats, std::size_t start, std::size_t count) {
    stats.abs_px.resize(count);
    stats.visible.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      double gx = rg.abs_grad_x[start + i] * (0.5 * cam.width);
      double gy = rg.abs_grad_y[start + i] * (0.5 * cam.height);
      stats.abs_px[i] = std::sqrt(gx * gx + gy * gy);
      stats.visible[i] = rg.visible[start + i];
    }
  };
  slice_stats(grads->bg_stats, 0, world.bg_count);
  for (const WorldEntry& entry : world.entries)
    slice_stats(grads->node_stats[entry.node_index], entry.start, entry.count);
  return rep;
}

inline double scene_extent(const GaussianSet& background) {
  if (background.size() == 0) return 1.0;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& m : background.mean) centroid += m;
  centroid /= static_cast<double>(background.size());
  double max_d = 0.0;
  for (const Vec3& m : background.mean)
    max_d = std::max(max_d, (m - centroid).norm());
  return std::clamp(max_d, 1.0, 500.0);
}

namespace train_detail {

inline Vec3 color_from_images(
    const Dataset& ds, const std::map<std::pair<int, int>, std::vector<double>>& images,
    const Vec3& p_world, int frame, Rng& rng) {
  for (std::size_t c = 0; c < ds.cameras.size(); ++c) {
    Camera cam = ds.camera_at(static_cast<int>(c), frame);
    Vec3 uvz = cam.project(p_world);
    if (uvz[2] <= cam.near_clip) continue;
    int px = static_cast<int>(uvz[0]), py = static_cast<int>(uvz[1]);
    if (px < 0 || py < 0 || px >= cam.width || py >= cam.height) continue;
    const std::vector<double>& img = images.at({static_cast<int>(c), frame});
    std::size_t pix = (static_cast<std::size_t>(py) * cam.width + px) * 3;
    return Vec3(img[pix], img[pix + 1], img[pix + 2]);
  }
  return Vec3(rng.uniform(), rng.uniform(), rng.uniform());
}

// Mean distance to the three nearest neighbors, the usual splat-size seed.
inline std::vector<double> knn_mean_dist(const std::vector<Vec3>& pts) {
  std::size_t n = pts.size();
  std::vector<double> out(n, 0.05);
  if (n < 2) return out;
  for (std::size_t i = 0; i < n; ++i) {
    double best[3] = {1e30, 1e30, 1e30};
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = (pts[i] - pts[j]).squaredNorm();
      if (d2 < best[0]) {
        best[2] = best[1];
        best[1] = best[0];
        best[0] = d2;
      } else if (d2 < best[1]) {
        best[2] = best[1];
        best[1] = d2;
      } else if (d2 < best[2]) {
        best[2] = d2;
      }
    }
    int k = n >= 4 ? 3 : static_cast<int>(n - 1);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) sum += std::sqrt(best[c]);
    out[i] = std::max(sum / k, 1e-4);
  }
  return out;
}

inline void push_point_blob(GaussianSet& set, const Vec3& mean, double scale,
                            const Vec3& color, BlobSource source) {
  Gaussian g;
  g.mean = mean;
  g.rot = quat_identity();
  double s = std::log(std::max(scale, 1e-4));
  g.log_scale = Vec3(s, s, s);
  g.opacity_raw = logit(0.1);
  g.sh.assign(3, 0.0);
  g.source = source;
  set.push_back(g);
  double* sh = set.sh_ptr(set.size() - 1);
  for (int ch = 0; ch < 3; ++ch) sh[ch] = (color[ch] - 0.5) / sh_detail::kC0;
}

inline bool inside_box(const Vec3& p_local, const Vec3& dims) {
  return std::abs(p_local[0]) <= 0.5 * dims[0] &&
         std::abs(p_local[1]) <= 0.5 * dims[1] &&
         std::abs(p_local[2]) <= 0.5 * dims[2];
}

inline void subsample(std::vector<std::size_t>& idx, std::size_t target, Rng& rng) {
  if (idx.size() <= target) return;
  for (std::size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
  idx.resize(target);
}

}  // namespace train_detail

// Builds the initial scene from the dataset annotations: lidar-seeded
// background plus near/far random filler, box-cropped lidar payloads for
// rigid/deformable nodes, template tessellation for articulated ones.
inline SceneGraph init_scene(const Dataset& ds, const TrainConfig& cfg, Rng& rng,
                             std::vector<std::string>* warnings = nullptr) {
  using namespace train_detail;
  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };
  SceneGraph scene;
  scene.timestamps = ds.timestamps;
  scene.sky = EnvironmentMap(cfg.sky_height, cfg.sky_width);
  scene.deform_net.init_weights(rng);

  // one pass over the lidar: keep world point + source frame
  std::vector<Vec3> cloud;
  std::vector<int> cloud_frame;
  for (int f = 0; f < ds.n_frames; ++f) {
    if (!std::filesystem::exists(ds.lidar_path(f))) continue;
    for (const Vec3& p : ds.load_lidar(f)) {
      cloud.push_back(p);
      cloud_frame.push_back(f);
    }
  }
  std::map<std::pair<int, int>, std::vector<double>> images;
  for (std::size_t c = 0; c < ds.cameras.size(); ++c)
    for (int f = 0; f < ds.n_frames; ++f)
      images[{static_cast<int>(c), f}] = ds.load_image(static_cast<int>(c), f);

  PosePipelineResult poses = prepare_body_poses(ds);

  // nodes first so background masking can reuse their box poses
  for (const Tracklet3d& tk : ds.tracklets) {
    SceneNode node;
    node.id = tk.id;
    node.class_label = tk.class_label;
    node.kind = tk.kind;
    node.box_dims = tk.dims;
    node.pose.base = tk.pose;
    node.pose.valid = tk.valid;
    node.pose.init_residuals();
    bool demoted = false;
    for (int d : poses.demoted) demoted |= d == tk.id;
    if (node.kind == NodeKind::kArticulated && (demoted || !cfg.enable_lbs)) {
      if (demoted) warn("node " + std::to_string(tk.id) + ": no body poses, kept rigid");
      node.kind = NodeKind::kRigid;
    }
    if (node.kind == NodeKind::kDeformable && !cfg.enable_deformation)
      node.kind = NodeKind::kRigid;

    if (node.kind == NodeKind::kArticulated) {
      if (!ds.has_template)
        throw std::runtime_error("init_scene: articulated node without a template");
      node.tmpl = ds.human_template;
      auto [set, skin] = tessellate_template(
          node.tmpl, std::vector<double>(node.tmpl.n_shapes, 0.0));
      node.canonical = std::move(set);
      node.skin = std::move(skin);
      node.body = poses.body.at(tk.id);
      for (std::size_t i = 0; i < node.canonical.size(); ++i) {
        double* sh = node.canonical.sh_ptr(i);
        for (int ch = 0; ch < 3; ++ch)
          sh[ch] = (rng.uniform(0.3, 0.7) - 0.5) / sh_detail::kC0;
      }
      if (cfg.sh_degree_articulated > node.canonical.sh_degree)
        node.canonical.promote_sh_degree(cfg.sh_degree_articulated);
    } else {
      // box-cropped lidar in the node frame, colors from the source frame
      std::vector<Vec3> local, world;
      std::vector<int> frames;
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        int f = cloud_frame[i];
        if (f >= static_cast<int>(node.pose.valid.size()) || !node.pose.valid[f])
          continue;
        QuatPose pose = node.pose.base[f];
        Vec3 p_local = quat_to_mat(quat_normalize(pose.q)).transpose() *
                       (cloud[i] - pose.t);
        if (!inside_box(p_local, node.box_dims)) continue;
        local.push_back(p_local);
        world.push_back(cloud[i]);
        frames.push_back(f);
      }
      std::vector<std::size_t> pick(local.size());
      for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
      subsample(pick, 4000, rng);
      node.canonical.sh_degree = 0;
      if (pick.empty()) {
        warn("node " + std::to_string(tk.id) +
             ": no lidar points in box, seeding 100 random blobs");
        for (int i = 0; i < 100; ++i) {
          Vec3 p(rng.uniform(-0.5, 0.5) * node.box_dims[0],
                 rng.uniform(-0.5, 0.5) * node.box_dims[1],
                 rng.uniform(-0.5, 0.5) * node.box_dims[2]);
          push_point_blob(node.canonical, p, 0.08 * node.box_dims.norm() / 3.0,
                          Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                          node.kind == NodeKind::kDeformable
                              ? BlobSource::kDeformable
                              : BlobSource::kRigid);
        }
      } else {
        std::vector<Vec3> pts;
        for (std::size_t i : pick) pts.push_back(local[i]);
        std::vector<double> nn = knn_mean_dist(pts);
        for (std::size_t k = 0; k < pick.size(); ++k) {
          std::size_t i = pick[k];
          Vec3 color = color_from_images(ds, images, world[i], frames[i], rng);
          push_point_blob(node.canonical, local[i], nn[k], color,
                          node.kind == NodeKind::kDeformable
                              ? BlobSource::kDeformable
                              : BlobSource::kRigid);
        }
      }
      if (cfg.sh_degree > 0) node.canonical.promote_sh_degree(cfg.sh_degree);
    }
    if (node.kind == NodeKind::kDeformable) {
      node.norm_box.center = Vec3::Zero();
      node.norm_box.half = 0.6 * node.box_dims;
      node.embed = Eigen::VectorXd::Zero(kDeformEmbedDim);
    }
    scene.nodes.push_back(std::move(node));
  }

  // background: lidar outside every dynamic box, plus near/far random filler
  long long n_lidar = std::llround(6e5 * ds.budget_scale);
  long long n_near = std::llround(2e5 * ds.budget_scale);
  long long n_far = std::llround(2e5 * ds.budget_scale);
  std::vector<std::size_t> bg_idx;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int f = cloud_frame[i];
    bool in_box = false;
    for (const SceneNode& node : scene.nodes) {
      if (f >= static_cast<int>(node.pose.valid.size()) || !node.pose.valid[f])
        continue;
      QuatPose pose = node.pose.base[f];
      Vec3 p_local =
          quat_to_mat(quat_normalize(pose.q)).transpose() * (cloud[i] - pose.t);
      if (inside_box(p_local, node.box_dims)) {
        in_box = true;
        break;
      }
    }
    if (!in_box) bg_idx.push_back(i);
  }
  subsample(bg_idx, static_cast<std::size_t>(std::max<long long>(n_lidar, 0)), rng);

  double r_max = 10.0;
  for (std::size_t i : bg_idx) r_max = std::max(r_max, cloud[i].norm());
  scene.background.sh_degree = 0;
  std::vector<Vec3> bg_pts;
  for (std::size_t i : bg_idx) bg_pts.push_back(cloud[i]);
  auto random_dir = [&rng]() {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    double n = d.norm();
    return n > 1e-9 ? Vec3(d / n) : Vec3(1, 0, 0);
  };
  std::vector<Vec3> filler;
  for (long long i = 0; i < n_near; ++i)
    filler.push_back(rng.uniform(1.0, r_max) * random_dir());
  for (long long i = 0; i < n_far; ++i) {
    double inv = rng.uniform(1.0 / (4.0 * r_max), 1.0 / r_max);
    filler.push_back((1.0 / inv) * random_dir());
  }
  std::vector<Vec3> all_pts = bg_pts;
  all_pts.insert(all_pts.end(), filler.begin(), filler.end());
  std::vector<double> nn = knn_mean_dist(all_pts);
  for (std::size_t k = 0; k < bg_idx.size(); ++k) {
    std::size_t i = bg_idx[k];
    Vec3 color = color_from_images(ds, images, cloud[i], cloud_frame[i], rng);
    push_point_blob(scene.background, cloud[i], nn[k], color,
                    BlobSource::kBackground);
  }
  for (std::size_t k = 0; k < filler.size(); ++k)
    push_point_blob(scene.background, filler[k], nn[bg_idx.size() + k],
                    Vec3(rng.uniform(), rng.uniform(), rng.uniform()),
                    BlobSource::kBackground);
  if (cfg.sh_degree > 0) scene.background.promote_sh_degree(cfg.sh_degree);
  scene.validate();
  return scene;
}

// Starts from a stored scene, jitters every blob mean, and swaps in the
// dataset's (noisy) box tracklets and detected body poses.
inline SceneGraph init_gt_jitter(const Dataset& ds, const TrainConfig& cfg,
                                 Rng& rng) {
  if (cfg.gt_scene.empty())
    throw std::invalid_argument("init_gt_jitter: config gt_scene path is empty");
  SceneGraph scene = load_scene(cfg.gt_scene);
  scene.timestamps = ds.timestamps;
  auto jitter = [&](GaussianSet& set) {
    for (Vec3& m : set.mean)
      m += cfg.gt_jitter_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
  };
  jitter(scene.background);
  PosePipelineResult poses = prepare_body_poses(ds);
  for (SceneNode& node : scene.nodes) {
    jitter(node.canonical);
    const Tracklet3d* tk = nullptr;
    for (const Tracklet3d& t : ds.tracklets)
      if (t.id == node.id) tk = &t;
    if (!tk)
      throw std::runtime_error("init_gt_jitter: node " + std::to_string(node.id) +
                               " missing from dataset tracklets");
    node.pose.base = tk->pose;
    node.pose.valid = tk->valid;
    node.pose.init_residuals();
    if (node.kind == NodeKind::kArticulated) {
      if (!cfg.enable_lbs) {
        node.kind = NodeKind::kRigid;
      } else if (poses.body.count(node.id)) {
        node.body = poses.body.at(node.id);
      }
    }
    if (node.kind == NodeKind::kDeformable && !cfg.enable_deformation)
      node.kind = NodeKind::kRigid;
  }
  scene.validate();
  return scene;
}

struct MetricsRow {
  long long iter = 0;
  LossReport report;
  double total = 0.0;
  std::size_t blobs = 0;
};

namespace train_detail {
inline volatile std::sig_atomic_t g_interrupt = 0;
inline void on_interrupt(int) { g_interrupt = 1; }
}  // namespace train_detail

class Trainer {
 public:
  Trainer(Dataset ds, TrainConfig cfg)
      : ds_(std::move(ds)), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    for (int f = 0; f < ds_.n_frames; ++f)
      if (!ds_.is_test_frame(f)) train_frames_.push_back(f);
    if (train_frames_.empty())
      throw std::invalid_argument("trainer: no training frames left");
    if (ds_.cameras.empty()) throw std::invalid_argument("trainer: no cameras");
  }

  void initialize() {
    scene_ = cfg_.init_mode == "dataset" ? init_scene(ds_, cfg_, rng_, &warnings_)
                                         : init_gt_jitter(ds_, cfg_, rng_);
    extent_ = scene_extent(scene_.background);
    reset_densify_stats();
  }

  // One optimizer iteration: render a camera-frame, backpropagate, update all
  // parameter groups, densify on schedule.
  LossReport step() {
    int n_cams = static_cast<int>(ds_.cameras.size());
    int cam_idx = static_cast<int>(iter_ % n_cams);
    int frame = train_frames_[(iter_ / n_cams) % train_frames_.size()];
    int delta = 1 + static_cast<int>(rng_.uniform_int(5));
    const FrameTruth& truth = truth_for(cam_idx, frame);
    Camera cam = ds_.camera_at(cam_idx, frame);
    FrameGrads grads(scene_);
    LossWeights w = cfg_.loss_weights();
    LossReport rep = frame_loss(scene_, cam, truth, frame, w, delta, &grads,
                                cfg_.num_threads);
    if (!std::isfinite(rep.total(w))) {
      warnings_.push_back("iter " + std::to_string(iter_) +
                          ": non-finite loss, step rejected");
      if (++reject_streak_ >= 3)
        throw std::runtime_error("trainer: non-finite loss three steps running");
      ++iter_;
      return rep;
    }
    reject_streak_ = 0;
    accumulate_densify_stats(grads);
    apply_updates(grads);
    long long stop = std::llround(cfg_.densify_stop_fraction * cfg_.iterations);
    if (iter_ >= cfg_.densify_start && iter_ < stop &&
        iter_ % cfg_.densify_interval == 0)
      densify_and_prune();
    if (cfg_.opacity_reset_interval > 0 && iter_ > 0 && iter_ < stop &&
        iter_ % cfg_.opacity_reset_interval == 0)
      reset_opacity();
    ++iter_;
    return rep;
  }

  // Full loop with periodic logging and checkpoints; a SIGINT finishes the
  // current step and writes the final checkpoint before returning.
  void run(const std::string& out_dir,
           const std::function<void(const MetricsRow&)>& on_log = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    auto prev = std::signal(SIGINT, train_detail::on_interrupt);
    LossWeights w = cfg_.loss_weights();
    while (iter_ < cfg_.iterations && !train_detail::g_interrupt) {
      LossReport rep = step();
      if ((iter_ - 1) % std::max<long long>(1, cfg_.log_interval) == 0 ||
          iter_ == cfg_.iterations) {
        metrics_.push_back({iter_ - 1, rep, rep.total(w), total_blobs()});
        if (on_log) on_log(metrics_.back());
      }
      if (cfg_.checkpoint_interval > 0 && iter_ % cfg_.checkpoint_interval == 0 &&
          iter_ < cfg_.iterations)
        save_checkpoint(checkpoint_path(out_dir, iter_));
    }
    save_checkpoint(checkpoint_path(out_dir, iter_));
    std::signal(SIGINT, prev);
    train_detail::g_interrupt = 0;
  }

  static std::string checkpoint_path(const std::string& out_dir, long long step) {
    return out_dir + "/checkpoints/" + std::to_string(step) + ".ckpt";
  }

  void save_checkpoint(const std::string& path) const {
    std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    SgbinWriter w(path);
    w.put_string("format", "ckpt/1");
    write_scene_records(w, scene_, "scene/");
    w.put_i64("iter", {iter_});
    w.put_i64("reject_streak", {reject_streak_});
    w.put_string("rng", rng_.serialize());
    w.put_f64("extent", {extent_});
    w.put_string("config", cfg_.to_json().dump());
    for (const auto& [name, adam] : adam_) {
      w.put_f64("adam/" + name + "/m", adam.m());
      w.put_f64("adam/" + name + "/v", adam.v());
      w.put_i64("adam/" + name + "/t", {adam.step_count()});
    }
    auto put_stats = [&w](const std::string& key, const DensifyStats& s) {
      w.put_f64("densify/" + key + "/score", s.score);
      std::vector<std::int64_t> hits(s.hits.begin(), s.hits.end());
      w.put_i64("densify/" + key + "/hits", hits);
    };
    put_stats("bg", bg_stats_);
    for (std::size_t i = 0; i < node_stats_.size(); ++i)
      put_stats("node" + std::to_string(i), node_stats_[i]);
    w.finish();
  }

  void resume(const std::string& path) {
    SgbinFile f = SgbinFile::load(path);
    if (f.str("format") != "ckpt/1")
      throw std::runtime_error("trainer: not a checkpoint: " + path);
    scene_ = read_scene_records(f, "scene/");
    iter_ = f.i64("iter").at(0);
    reject_streak_ = static_cast<int>(f.i64("reject_streak").at(0));
    rng_.deserialize(f.str("rng"));
    extent_ = f.f64("extent").at(0);
    adam_.clear();
    const std::string prefix = "adam/", m_suffix = "/m";
    for (const auto& [name, rec] : f.records) {
      if (name.rfind(prefix, 0) != 0 ||
          name.size() <= prefix.size() + m_suffix.size() ||
          name.compare(name.size() - m_suffix.size(), m_suffix.size(), m_suffix))
        continue;
      std::string key =
          name.substr(prefix.size(), name.size() - prefix.size() - m_suffix.size());
      AdamArray a;
      a.restore(f.f64(name), f.f64(prefix + key + "/v"),
                f.i64(prefix + key + "/t").at(0));
      adam_.emplace(key, std::move(a));
    }
    auto get_stats = [&f](const std::string& key, DensifyStats& s) {
      s.score = f.f64("densify/" + key + "/score");
      std::vector<std::int64_t> hits = f.i64("densify/" + key + "/hits");
      s.hits.assign(hits.begin(), hits.end());
    };
    node_stats_.assign(scene_.nodes.size(), {});
    get_stats("bg", bg_stats_);
    for (std::size_t i = 0; i < node_stats_.size(); ++i)
      get_stats("node" + std::to_string(i), node_stats_[i]);
  }

  const SceneGraph& scene() const { return scene_; }
  SceneGraph& scene() { return scene_; }
  long long iteration() const { return iter_; }
  double extent() const { return extent_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const TrainConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return ds_; }

  std::size_t total_blobs() const {
    std::size_t n = scene_.background.size();
    for (const SceneNode& node : scene_.nodes) n += node.canonical.size();
    return n;
  }

 private:
  struct DensifyStats {
    std::vector<double> score;
    std::vector<int> hits;
  };

  const FrameTruth& truth_for(int cam, int frame) {
    auto key = std::make_pair(cam, frame);
    auto it = truth_.find(key);
    if (it == truth_.end())
      it = truth_.emplace(key, load_frame_truth(ds_, cam, frame)).first;
    return it->second;
  }

  void reset_densify_stats() {
    bg_stats_.score.assign(scene_.background.size(), 0.0);
    bg_stats_.hits.assign(scene_.background.size(), 0);
    node_stats_.resize(scene_.nodes.size());
    for (std::size_t i = 0; i < scene_.nodes.size(); ++i) {
      node_stats_[i].score.assign(scene_.nodes[i].canonical.size(), 0.0);
      node_stats_[i].hits.assign(scene_.nodes[i].canonical.size(), 0);
    }
  }

  void accumulate_densify_stats(const FrameGrads& g) {
    auto add = [](DensifyStats& stats, const SetStats& s) {
      for (std::size_t i = 0; i < s.abs_px.size(); ++i) {
        if (!s.visible[i]) continue;
        stats.score[i] += s.abs_px[i];
        stats.hits[i] += 1;
      }
    };
    add(bg_stats_, g.bg_stats);
    for (std::size_t i = 0; i < node_stats_.size(); ++i)
      if (!g.node_stats[i].abs_px.empty()) add(node_stats_[i], g.node_stats[i]);
  }

  void step_array(const std::string& name, double* params, const double* grads,
                  std::size_t n, double lr) {
    if (lr <= 0.0 || n == 0) return;
    adam_[name].step(params, grads, n, lr);
  }

  double scheduled(double lr_init, double lr_final) const {
    if (lr_init <= 0.0) return 0.0;
    return exp_lr(lr_init, lr_final, iter_, cfg_.iterations);
  }

  void step_set(const std::string& key, GaussianSet& set, const SetGrads& g,
                bool articulated) {
    std::size_t n = set.size();
    if (n == 0) return;
    double lr_pos = scheduled(cfg_.position_lr_init * extent_,
                              cfg_.position_lr_final * extent_);
    step_array(key + "/mean", reinterpret_cast<double*>(set.mean.data()),
               reinterpret_cast<const double*>(g.d_mean.data()), n * 3, lr_pos);
    double lr_rot = articulated ? cfg_.rot_lr_articulated : cfg_.rot_lr;
    step_array(key + "/rot", reinterpret_cast<double*>(set.rot.data()),
               reinterpret_cast<const double*>(g.d_rot.data()), n * 4, lr_rot);
    if (lr_rot > 0.0)
      for (Vec4& q : set.rot) q = quat_normalize(q);
    step_array(key + "/scale", reinterpret_cast<double*>(set.log_scale.data()),
               reinterpret_cast<const double*>(g.d_log_scale.data()), n * 3,
               cfg_.scale_lr);
    step_array(key + "/opacity", set.opacity_raw.data(), g.d_opacity_raw.data(),
               n, cfg_.opacity_lr);
    int stride = set.sh_stride();
    if (stride >= 3) {
      dc_p_.resize(n * 3);
      dc_g_.resize(n * 3);
      rest_p_.resize(n * (stride - 3));
      rest_g_.resize(n * (stride - 3));
      for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
          dc_p_[i * 3 + c] = set.sh[i * stride + c];
          dc_g_[i * 3 + c] = g.d_sh[i * stride + c];
        }
        for (int c = 3; c < stride; ++c) {
          rest_p_[i * (stride - 3) + c - 3] = set.sh[i * stride + c];
          rest_g_[i * (stride - 3) + c - 3] = g.d_sh[i * stride + c];
        }
      }
      step_array(key + "/sh_dc", dc_p_.data(), dc_g_.data(), dc_p_.size(),
                 cfg_.sh_dc_lr);
      step_array(key + "/sh_rest", rest_p_.data(), rest_g_.data(), rest_p_.size(),
                 cfg_.sh_rest_lr);
      for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) set.sh[i * stride + c] = dc_p_[i * 3 + c];
        for (int c = 3; c < stride; ++c)
          set.sh[i * stride + c] = rest_p_[i * (stride - 3) + c - 3];
      }
    }
  }

  void apply_updates(FrameGrads& g) {
    step_set("bg", scene_.background, g.scene.background, false);
    for (std::size_t i = 0; i < scene_.nodes.size(); ++i) {
      SceneNode& node = scene_.nodes[i];
      std::string key = "node" + std::to_string(i);
      step_set(key, node.canonical, g.scene.node_canonical[i],
               node.kind == NodeKind::kArticulated);
      int rf = g.scene.residual_frame[i];
      if (cfg_.optimize_boxes && rf >= 0) {
        std::string ftag = "/" + std::to_string(rf);
        step_array(key + "/rot_res" + ftag, node.pose.rot_residual[rf].data(),
                   g.scene.d_rot_residual[i].data(), 3,
                   scheduled(cfg_.box_rot_lr_init, cfg_.box_rot_lr_final));
        step_array(key + "/trans_res" + ftag, node.pose.trans_residual[rf].data(),
                   g.scene.d_trans_residual[i].data(), 3,
                   scheduled(cfg_.box_trans_lr_init, cfg_.box_trans_lr_final));
      }
      if (node.kind == NodeKind::kArticulated) {
        if (cfg_.optimize_body) {
          // merge render-frame and smoothness-window theta gradients
          std::map<int, std::vector<Vec4>> by_frame;
          if (g.scene.theta_frame[i] >= 0)
            by_frame[g.scene.theta_frame[i]] = g.scene.d_theta[i];
          const PoseSmoothGrads& ps = g.pose_smooth[i];
          if (ps.frames[0] >= 0)
            for (int k = 0; k < 3; ++k) {
              auto& acc = by_frame[ps.frames[k]];
              if (acc.empty()) acc.assign(node.body.n_joints, Vec4::Zero());
              for (int j = 0; j < node.body.n_joints; ++j)
                acc[j] += ps.d_theta[k][j];
            }
          double lr_body = scheduled(cfg_.body_pose_lr_init, cfg_.body_pose_lr_final);
          for (auto& [f, d_theta] : by_frame) {
            step_array(key + "/theta/" + std::to_string(f),
                       reinterpret_cast<double*>(node.body.theta[f].data()),
                       reinterpret_cast<const double*>(d_theta.data()),
                       static_cast<std::size_t>(node.body.n_joints) * 4, lr_body);
            if (lr_body > 0.0)
              for (Vec4& q : node.body.theta[f]) q = quat_normalize(q);
          }
        }
        if (!g.scene.d_skin[i].empty()) {
          step_array(key + "/skin", node.skin.w.data(), g.scene.d_skin[i].data(),
                     node.skin.w.size(), cfg_.skin_lr);
          if (cfg_.skin_lr > 0.0) node.skin.project();
        }
      }
      if (node.kind == NodeKind::kDeformable)
        step_array(key + "/embed", node.embed.data(), g.scene.d_embed[i].data(),
                   static_cast<std::size_t>(node.embed.size()), cfg_.embed_lr);
    }
    for (int l = 0; l < DeformationNet::kLayers; ++l) {
      std::string tag = std::to_string(l);
      step_array("net/w" + tag, scene_.deform_net.weight(l).data(),
                 g.scene.net_grads.d_w[l].data(),
                 static_cast<std::size_t>(scene_.deform_net.weight(l).size()),
                 cfg_.net_lr);
      step_array("net/b" + tag, scene_.deform_net.bias(l).data(),
                 g.scene.net_grads.d_b[l].data(),
                 static_cast<std::size_t>(scene_.deform_net.bias(l).size()),
                 cfg_.net_lr);
    }
    step_array("sky", scene_.sky.texels().data(), g.scene.d_sky_texels.data(),
               scene_.sky.texels().size(), cfg_.sky_lr);
  }

  void densify_and_prune() {
    if (static_cast<double>(total_blobs()) > cfg_.max_blobs * ds_.budget_scale) {
      warnings_.push_back("iter " + std::to_string(iter_) +
                          ": blob ceiling reached, densification skipped");
      reset_densify_stats();
      return;
    }
    densify_set("bg", scene_.background, bg_stats_, nullptr);
    for (std::size_t i = 0; i < scene_.nodes.size(); ++i) {
      SceneNode& node = scene_.nodes[i];
      densify_set("node" + std::to_string(i), node.canonical, node_stats_[i],
                  node.kind == NodeKind::kArticulated ? &node.skin : nullptr);
    }
  }

  void densify_set(const std::string& key, GaussianSet& set, DensifyStats& stats,
                   SkinWeights* skin) {
    std::size_t n = set.size();
    if (n == 0) return;
    std::vector<bool> keep(n, true);
    std::vector<std::size_t> clones, splits;
    for (std::size_t i = 0; i < n; ++i) {
      if (sigmoid(set.opacity_raw[i]) < cfg_.prune_opacity) {
        keep[i] = false;
        continue;
      }
      double avg = stats.hits[i] > 0 ? stats.score[i] / stats.hits[i] : 0.0;
      if (avg <= cfg_.densify_grad_threshold) continue;
      double max_scale = std::exp(set.log_scale[i].maxCoeff());
      if (max_scale <= cfg_.densify_scale_threshold * extent_) {
        clones.push_back(i);
      } else {
        splits.push_back(i);
        keep[i] = false;
      }
    }
    GaussianSet children;
    children.sh_degree = set.sh_degree;
    int stride = set.sh_stride();
    std::vector<std::size_t> child_parent;
    auto copy_blob = [&](std::size_t i) {
      Gaussian g;
      g.mean = set.mean[i];
      g.rot = set.rot[i];
      g.log_scale = set.log_scale[i];
      g.opacity_raw = set.opacity_raw[i];
      g.sh.assign(set.sh.begin() + i * stride, set.sh.begin() + (i + 1) * stride);
      g.source = static_cast<BlobSource>(set.source[i]);
      return g;
    };
    for (std::size_t i : clones) {
      children.push_back(copy_blob(i));
      child_parent.push_back(i);
    }
    double shrink = std::log(cfg_.split_factor);
    for (std::size_t i : splits) {
      Mat3 r = quat_to_mat(quat_normalize(set.rot[i]));
      Vec3 s = set.log_scale[i].array().exp();
      for (int c = 0; c < 2; ++c) {
        Gaussian g = copy_blob(i);
        Vec3 local(s[0] * rng_.normal(), s[1] * rng_.normal(), s[2] * rng_.normal());
        g.mean = set.mean[i] + r * local;
        g.log_scale = set.log_scale[i] - Vec3(shrink, shrink, shrink);
        children.push_back(g);
        child_parent.push_back(i);
      }
    }
    std::size_t n_children = children.size();
    bool counts_change = n_children > 0 ||
                         std::count(keep.begin(), keep.end(), false) > 0;
    if (!counts_change) {
      stats.score.assign(n, 0.0);
      stats.hits.assign(n, 0);
      return;
    }

    auto adjust = [&](const std::string& group, std::size_t stride_per_blob) {
      auto it = adam_.find(key + "/" + group);
      if (it == adam_.end() || it->second.size() == 0) return;
      it->second.filter(keep, stride_per_blob);
      it->second.append_zeros(n_children * stride_per_blob);
    };
    adjust("mean", 3);
    adjust("rot", 4);
    adjust("scale", 3);
    adjust("opacity", 1);
    adjust("sh_dc", 3);
    adjust("sh_rest", static_cast<std::size_t>(stride - 3));
    if (skin) {
      std::size_t nk = static_cast<std::size_t>(skin->n_joints);
      std::vector<double> new_w;
      new_w.reserve((n - splits.size()) * nk + n_children * nk);
      for (std::size_t i = 0; i < n; ++i)
        if (keep[i])
          new_w.insert(new_w.end(), skin->w.begin() + i * nk,
                       skin->w.begin() + (i + 1) * nk);
      for (std::size_t p : child_parent)
        new_w.insert(new_w.end(), skin->w.begin() + p * nk,
                     skin->w.begin() + (p + 1) * nk);
      auto it = adam_.find(key + "/skin");
      if (it != adam_.end() && it->second.size() > 0) {
        it->second.filter(keep, nk);
        it->second.append_zeros(n_children * nk);
      }
      skin->w = std::move(new_w);
    }
    set.filter(keep);
    set.append(children);
    stats.score.assign(set.size(), 0.0);
    stats.hits.assign(set.size(), 0);
  }

  void reset_opacity() {
    double cap = logit(0.01);
    auto reset = [&](const std::string& key, GaussianSet& set) {
      for (double& o : set.opacity_raw) o = std::min(o, cap);
      auto it = adam_.find(key + "/opacity");
      if (it != adam_.end()) it->second.zero_state();
    };
    reset("bg", scene_.background);
    for (std::size_t i = 0; i < scene_.nodes.size(); ++i)
      reset("node" + std::to_string(i), scene_.nodes[i].canonical);
  }

  Dataset ds_;
  TrainConfig cfg_;
  SceneGraph scene_;
  Rng rng_;
  long long iter_ = 0;
  int reject_streak_ = 0;
  double extent_ = 1.0;
  std::vector<int> train_frames_;
  std::map<std::string, AdamArray> adam_;
  DensifyStats bg_stats_;
  std::vector<DensifyStats> node_stats_;
  std::map<std::pair<int, int>, FrameTruth> truth_;
  std::vector<std::string> warnings_;
  std::vector<MetricsRow> metrics_;
  std::vector<double> dc_p_, dc_g_, rest_p_, rest_g_;
};

}  // namespace splatgraph
