#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "splatgraph/articulated.hpp"
#include "splatgraph/deformation.hpp"
#include "splatgraph/gaussian.hpp"
#include "splatgraph/sky.hpp"

namespace splatgraph {

// Per-frame base poses from dataset tracklets plus learnable right-multiplied
// residuals: corrected = base o (exp_so3(rot_residual), trans_residual).
struct TrackedPose {
  std::vector<QuatPose> base;
  std::vector<Vec3> rot_residual;    // axis-angle
  std::vector<Vec3> trans_residual;
  std::vector<std::uint8_t> valid;

  std::size_t n_frames() const { return base.size(); }

  void init_residuals() {
    rot_residual.assign(base.size(), Vec3::Zero());
    trans_residual.assign(base.size(), Vec3::Zero());
    if (valid.size() != base.size()) valid.assign(base.size(), 1);
  }

  bool any_valid() const {
    for (auto v : valid)
      if (v) return true;
    return false;
  }

  QuatPose corrected(std::size_t f) const {
    Vec4 qe = exp_so3_quat(rot_residual[f]);
    Vec4 qb = quat_normalize(base[f].q);
    return QuatPose{quat_mul(base[f].q, qe),
                    quat_to_mat(qb) * trans_residual[f] + base[f].t};
  }

  // Fold residuals into the base poses and zero them; corrected poses are
  // unchanged bit for bit (same arithmetic).
  void bake_residuals() {
    for (std::size_t f = 0; f < base.size(); ++f) base[f] = corrected(f);
    init_residuals();
  }

  int nearest_valid(double t) const {
    int best = -1;
    double best_d = 0;
    for (std::size_t f = 0; f < valid.size(); ++f) {
      if (!valid[f]) continue;
      double d = std::abs(static_cast<double>(f) - t);
      if (best < 0 || d < best_d) {
        best = static_cast<int>(f);
        best_d = d;
      }
    }
    return best;
  }
};

// Corrected pose at a (possibly fractional) time. Between frames translation
// interpolates linearly and rotation spherically; outside the valid range the
// nearest valid pose holds.
inline QuatPose pose_at(const TrackedPose& tracked, double t) {
  if (!tracked.any_valid()) throw std::invalid_argument("pose_at: no valid frames");
  double rounded = std::round(t);
  if (std::abs(t - rounded) < 1e-9) {
    std::size_t f = static_cast<std::size_t>(
        std::clamp<double>(rounded, 0, static_cast<double>(tracked.n_frames() - 1)));
    if (tracked.valid[f]) return tracked.corrected(f);
    return tracked.corrected(tracked.nearest_valid(t));
  }
  int t0 = static_cast<int>(std::floor(t));
  int prev = -1, next = -1;
  for (int f = std::min(t0, static_cast<int>(tracked.n_frames()) - 1); f >= 0; --f)
    if (f < static_cast<int>(tracked.n_frames()) && tracked.valid[f]) {
      prev = f;
      break;
    }
  for (int f = std::max(t0 + 1, 0); f < static_cast<int>(tracked.n_frames()); ++f)
    if (tracked.valid[f]) {
      next = f;
      break;
    }
  if (prev < 0 && next < 0) throw std::invalid_argument("pose_at: no valid frames");
  if (prev < 0) return tracked.corrected(next);
  if (next < 0) return tracked.corrected(prev);
  QuatPose a = tracked.corrected(prev);
  QuatPose b = tracked.corrected(next);
  double u = (t - prev) / (next - prev);
  return QuatPose{quat_slerp(a.q, b.q, u), (1 - u) * a.t + u * b.t};
}

enum class NodeKind : std::uint8_t { kRigid = 0, kArticulated = 1, kDeformable = 2 };

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::kRigid: return "rigid";
    case NodeKind::kArticulated: return "articulated";
    case NodeKind::kDeformable: return "deformable";
  }
  return "?";
}

struct SceneNode {
  int id = 0;
  std::string class_label;
  NodeKind kind = NodeKind::kRigid;
  GaussianSet canonical;
  TrackedPose pose;
  Vec3 box_dims = Vec3::Zero();  // dataset box dimensions, bookkeeping only

  // articulated payload
  ArticulatedTemplate tmpl;  // shaped at init (vertices/joints baked)
  SkinWeights skin;
  BodyPoseSequence body;

  // deformable payload
  Eigen::VectorXd embed;  // kDeformEmbedDim
  NormBox norm_box;
};

struct SceneGraph {
  GaussianSet background;
  EnvironmentMap sky{256, 512};
  DeformationNet deform_net;
  std::vector<SceneNode> nodes;
  std::vector<double> timestamps;  // seconds, one per frame

  std::size_t n_frames() const { return timestamps.size(); }
  double normalized_time(double t) const {
    double span = std::max<double>(1, n_frames() - 1);
    return std::clamp(t / span, 0.0, 1.0);
  }

  const SceneNode* find_node(int id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
  SceneNode* find_node(int id) {
    for (auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }

  void validate() const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = i + 1; j < nodes.size(); ++j)
        if (nodes[i].id == nodes[j].id)
          throw std::invalid_argument("scene: duplicate node id " +
                                      std::to_string(nodes[i].id));
      if (nodes[i].pose.n_frames() != n_frames())
        throw std::invalid_argument("scene: node pose sequence does not span timeline");
    }
  }
};

// Bilinear sky lookup for a batch of unit directions.
inline std::vector<Vec3> query_sky(const EnvironmentMap& sky,
                                   const std::vector<Vec3>& directions) {
  std::vector<Vec3> out(directions.size());
  for (std::size_t i = 0; i < directions.size(); ++i) out[i] = sky.query(directions[i]);
  return out;
}

// Whether a node contributes at time t (dataset validity of the box).
inline bool node_present(const SceneNode& node, double t) {
  if (!node.pose.any_valid()) return false;
  double rounded = std::round(t);
  if (std::abs(t - rounded) < 1e-9) {
    auto f = static_cast<std::size_t>(
        std::clamp<double>(rounded, 0, static_cast<double>(node.pose.n_frames() - 1)));
    return node.pose.valid[f] != 0;
  }
  int t0 = static_cast<int>(std::floor(t));
  int t1 = t0 + 1;
  auto ok = [&](int f) {
    return f >= 0 && f < static_cast<int>(node.pose.n_frames()) && node.pose.valid[f];
  };
  return ok(t0) || ok(t1);
}

// Body pose at a (possibly fractional) time; returns the frame the rotations
// were taken from for integer lookups (-1 when interpolated).
inline std::pair<std::vector<Vec4>, int> body_pose_at(const BodyPoseSequence& body,
                                                      double t, int node_id) {
  if (!body.any_valid())
    throw std::invalid_argument("node " + std::to_string(node_id) +
                                ": no valid body pose in sequence");
  auto nearest = [&](double tt) {
    int best = -1;
    double bd = 0;
    for (std::size_t f = 0; f < body.valid.size(); ++f) {
      if (!body.valid[f]) continue;
      double d = std::abs(static_cast<double>(f) - tt);
      if (best < 0 || d < bd) {
        best = static_cast<int>(f);
        bd = d;
      }
    }
    return best;
  };
  double rounded = std::round(t);
  if (std::abs(t - rounded) < 1e-9) {
    int f = static_cast<int>(
        std::clamp<double>(rounded, 0, static_cast<double>(body.n_frames() - 1)));
    if (!body.valid[f]) f = nearest(t);
    return {body.theta[f], f};
  }
  int t0 = static_cast<int>(std::floor(t));
  int prev = -1, next = -1;
  for (int f = std::min<int>(t0, static_cast<int>(body.n_frames()) - 1); f >= 0; --f)
    if (body.valid[f]) {
      prev = f;
      break;
    }
  for (int f = std::max(t0 + 1, 0); f < static_cast<int>(body.n_frames()); ++f)
    if (body.valid[f]) {
      next = f;
      break;
    }
  if (prev < 0) return {body.theta[next], next};
  if (next < 0) return {body.theta[prev], prev};
  double u = (t - prev) / (next - prev);
  std::vector<Vec4> theta(body.n_joints);
  for (int k = 0; k < body.n_joints; ++k)
    theta[k] = quat_slerp(body.theta[prev][k], body.theta[next][k], u);
  return {theta, -1};
}

// Cached intermediates for one node's world set, kept for the backward pass.
struct WorldEntry {
  int node_index = -1;
  std::size_t start = 0, count = 0;
  QuatPose pose;
  int pose_frame = -1;
  // articulated
  FkResult fk;
  LbsCache lbs;
  std::vector<Vec4> theta;
  int theta_frame = -1;
  GaussianSet pre;  // pre-transform set (LBS output / deformed); empty for rigid
  // deformable
  DeformationNet::Cache net_cache;
};

struct WorldAssembly {
  GaussianSet world;
  std::vector<int> origin;                // per blob: node index, -1 background
  std::vector<std::uint8_t> dynamic_flags;  // 1 for node blobs
  std::size_t bg_count = 0;
  std::vector<WorldEntry> entries;
  double t = 0;
};

// Eq. 1-3 composition: background plus every present node's world-space set.
inline WorldAssembly assemble_world(const SceneGraph& scene, double t,
                                    bool build_caches = false) {
  WorldAssembly out;
  out.t = t;
  out.world = scene.background;
  out.bg_count = scene.background.size();
  out.origin.assign(out.bg_count, -1);
  double t_norm = scene.normalized_time(t);

  for (std::size_t ni = 0; ni < scene.nodes.size(); ++ni) {
    const SceneNode& node = scene.nodes[ni];
    if (!node_present(node, t) || node.canonical.size() == 0) continue;
    WorldEntry entry;
    entry.node_index = static_cast<int>(ni);
    entry.pose = pose_at(node.pose, t);
    double rounded = std::round(t);
    if (std::abs(t - rounded) < 1e-9) entry.pose_frame = static_cast<int>(rounded);

    GaussianSet staged;
    switch (node.kind) {
      case NodeKind::kRigid:
        staged = se3_transform_set(entry.pose, node.canonical);
        break;
      case NodeKind::kArticulated: {
        auto [theta, theta_frame] = body_pose_at(node.body, t, node.id);
        entry.theta = theta;
        entry.theta_frame = theta_frame;
        entry.fk = forward_kinematics(node.tmpl, theta);
        GaussianSet lbs_out = lbs_deform(node.canonical, node.skin, entry.fk,
                                         build_caches ? &entry.lbs : nullptr);
        staged = se3_transform_set(entry.pose, lbs_out);
        if (build_caches) entry.pre = std::move(lbs_out);
        break;
      }
      case NodeKind::kDeformable: {
        std::vector<Vec3> norm_means(node.canonical.size());
        for (std::size_t i = 0; i < node.canonical.size(); ++i)
          norm_means[i] = node.norm_box.normalize(node.canonical.mean[i]);
        DeformDeltas deltas =
            deform_query(scene.deform_net, norm_means, node.embed, t_norm,
                         build_caches ? &entry.net_cache : nullptr);
        GaussianSet deformed = apply_deltas(node.canonical, deltas);
        staged = se3_transform_set(entry.pose, deformed);
        if (build_caches) entry.pre = std::move(deformed);
        break;
      }
    }
    entry.start = out.world.size();
    entry.count = staged.size();
    out.world.append(staged);
    out.origin.resize(out.world.size(), static_cast<int>(ni));
    out.entries.push_back(std::move(entry));
  }
  out.dynamic_flags.assign(out.world.size(), 0);
  for (std::size_t i = out.bg_count; i < out.world.size(); ++i)
    out.dynamic_flags[i] = 1;
  return out;
}

// Per-set parameter gradients in raw storage domain.
struct SetGrads {
  std::vector<Vec3> d_mean;
  std::vector<Vec4> d_rot;
  std::vector<Vec3> d_log_scale;
  std::vector<double> d_opacity_raw;
  std::vector<double> d_sh;

  void init(const GaussianSet& set) {
    d_mean.assign(set.size(), Vec3::Zero());
    d_rot.assign(set.size(), Vec4::Zero());
    d_log_scale.assign(set.size(), Vec3::Zero());
    d_opacity_raw.assign(set.size(), 0.0);
    d_sh.assign(set.sh.size(), 0.0);
  }
};

struct SceneGrads {
  SetGrads background;
  std::vector<SetGrads> node_canonical;         // per node index
  std::vector<Vec3> d_rot_residual;             // per node, at the rendered frame
  std::vector<Vec3> d_trans_residual;
  std::vector<int> residual_frame;              // which frame the above apply to
  std::vector<std::vector<Vec4>> d_theta;       // per node, per joint
  std::vector<int> theta_frame;
  std::vector<std::vector<double>> d_skin;      // per node, blob-major
  DeformationNet::Grads net_grads;
  std::vector<Eigen::VectorXd> d_embed;         // per node
  std::vector<double> d_sky_texels;

  explicit SceneGrads(const SceneGraph& scene) : net_grads(scene.deform_net) {
    background.init(scene.background);
    node_canonical.resize(scene.nodes.size());
    d_rot_residual.assign(scene.nodes.size(), Vec3::Zero());
    d_trans_residual.assign(scene.nodes.size(), Vec3::Zero());
    residual_frame.assign(scene.nodes.size(), -1);
    d_theta.resize(scene.nodes.size());
    theta_frame.assign(scene.nodes.size(), -1);
    d_skin.resize(scene.nodes.size());
    d_embed.assign(scene.nodes.size(),
                   Eigen::VectorXd::Zero(kDeformEmbedDim));
    d_sky_texels.assign(scene.sky.texels().size(), 0.0);
    for (std::size_t i = 0; i < scene.nodes.size(); ++i) {
      node_canonical[i].init(scene.nodes[i].canonical);
      if (scene.nodes[i].kind == NodeKind::kArticulated) {
        d_theta[i].assign(scene.nodes[i].body.n_joints, Vec4::Zero());
        d_skin[i].assign(scene.nodes[i].skin.w.size(), 0.0);
      }
    }
  }
};

// Chain world-set gradients (from render_backward) down to scene parameters.
// Valid for integer render times (the training path).
inline void assemble_world_backward(const SceneGraph& scene, const WorldAssembly& assembly,
                                    const std::vector<Vec3>& d_mean_w,
                                    const std::vector<Vec4>& d_rot_w,
                                    const std::vector<Vec3>& d_log_scale_w,
                                    const std::vector<double>& d_opacity_raw_w,
                                    const std::vector<double>& d_sh_w,
                                    SceneGrads& grads) {
  int world_stride = assembly.world.sh_stride();
  // background: direct copy of its slice
  for (std::size_t i = 0; i < assembly.bg_count; ++i) {
    grads.background.d_mean[i] += d_mean_w[i];
    grads.background.d_rot[i] += d_rot_w[i];
    grads.background.d_log_scale[i] += d_log_scale_w[i];
    grads.background.d_opacity_raw[i] += d_opacity_raw_w[i];
  }
  int bg_stride = scene.background.sh_stride();
  for (std::size_t i = 0; i < assembly.bg_count; ++i)
    for (int k = 0; k < bg_stride; ++k)
      grads.background.d_sh[i * bg_stride + k] += d_sh_w[i * world_stride + k];

  for (const WorldEntry& entry : assembly.entries) {
    const SceneNode& node = scene.nodes[entry.node_index];
    SetGrads& ng = grads.node_canonical[entry.node_index];
    if (entry.pose_frame < 0)
      throw std::invalid_argument("assemble_world_backward: non-integer render time");
    std::size_t s = entry.start, c = entry.count;

    // scale/opacity/sh pass through the rigid transform (and LBS) untouched;
    // deformable scale additionally feeds the delta path below.
    int node_stride = node.canonical.sh_stride();
    for (std::size_t i = 0; i < c; ++i) {
      ng.d_opacity_raw[i] += d_opacity_raw_w[s + i];
      ng.d_log_scale[i] += d_log_scale_w[s + i];
      for (int k = 0; k < node_stride; ++k)
        ng.d_sh[i * node_stride + k] += d_sh_w[(s + i) * world_stride + k];
    }

    // undo the node pose: world grads -> pre-transform set grads + pose grads
    const GaussianSet& pre =
        node.kind == NodeKind::kRigid ? node.canonical : entry.pre;
    std::vector<Vec3> d_mean_pre(c, Vec3::Zero());
    std::vector<Vec4> d_rot_pre(c, Vec4::Zero());
    PoseGrads pg;
    for (std::size_t i = 0; i < c; ++i)
      se3_transform_blob_backward(entry.pose, pre.mean[i], pre.rot[i], d_mean_w[s + i],
                                  d_rot_w[s + i], d_mean_pre[i], d_rot_pre[i], pg);

    // pose grads -> residual grads: q = q_base * exp(w); t = R_base v + t_base
    const TrackedPose& tp = node.pose;
    std::size_t f = static_cast<std::size_t>(entry.pose_frame);
    if (!tp.valid[f])
      throw std::invalid_argument("assemble_world_backward: pose frame invalid");
    Vec4 d_qe = quat_left_mat(tp.base[f].q).transpose() * pg.dq;
    grads.d_rot_residual[entry.node_index] +=
        exp_so3_quat_jacobian(tp.rot_residual[f]).transpose() * d_qe;
    Mat3 rb = quat_to_mat(quat_normalize(tp.base[f].q));
    grads.d_trans_residual[entry.node_index] += rb.transpose() * pg.dt;
    grads.residual_frame[entry.node_index] = entry.pose_frame;

    switch (node.kind) {
      case NodeKind::kRigid:
        for (std::size_t i = 0; i < c; ++i) {
          ng.d_mean[i] += d_mean_pre[i];
          ng.d_rot[i] += d_rot_pre[i];
        }
        break;
      case NodeKind::kArticulated: {
        JointGrads jg(node.tmpl.n_joints());
        lbs_backward(node.canonical, node.skin, entry.fk, entry.lbs, d_mean_pre,
                     d_rot_pre, ng.d_mean, ng.d_rot, grads.d_skin[entry.node_index], jg);
        std::vector<Vec4> d_theta = fk_backward(node.tmpl, entry.theta, entry.fk, jg);
        for (std::size_t k = 0; k < d_theta.size(); ++k)
          grads.d_theta[entry.node_index][k] += d_theta[k];
        grads.theta_frame[entry.node_index] = entry.theta_frame;
        break;
      }
      case NodeKind::kDeformable: {
        // deformed = canonical + deltas: grads hit both paths
        std::vector<Vec3> d_ls_delta(c);
        for (std::size_t i = 0; i < c; ++i) {
          ng.d_mean[i] += d_mean_pre[i];
          ng.d_rot[i] += d_rot_pre[i];
          d_ls_delta[i] = d_log_scale_w[s + i];
        }
        deform_backward(scene.deform_net, entry.net_cache, d_mean_pre, d_rot_pre,
                        d_ls_delta, grads.net_grads, grads.d_embed[entry.node_index]);
        break;
      }
    }
  }
}

// --- editing operations; all return modified copies -------------------------

inline SceneGraph swap_asset(const SceneGraph& scene, int node_id,
                             const SceneGraph& donor_scene, int donor_node_id) {
  SceneGraph out = scene;
  SceneNode* target = out.find_node(node_id);
  const SceneNode* donor = donor_scene.find_node(donor_node_id);
  if (!target || !donor) throw std::invalid_argument("swap_asset: node not found");
  if (target->kind != donor->kind)
    throw std::invalid_argument("swap_asset: node kind mismatch");
  if (donor_scene.n_frames() == 0)
    throw std::invalid_argument("swap_asset: donor timeline empty");
  target->canonical = donor->canonical;
  target->box_dims = donor->box_dims;
  if (target->kind == NodeKind::kArticulated) {
    target->tmpl = donor->tmpl;
    target->skin = donor->skin;
    // retime the donor theta sequence to the target timeline by
    // nearest-frame resampling
    std::size_t t_frames = scene.n_frames();
    std::size_t d_frames = donor_scene.n_frames();
    BodyPoseSequence body;
    body.n_joints = donor->body.n_joints;
    body.theta.resize(t_frames);
    body.valid.resize(t_frames);
    body.provenance.resize(t_frames);
    for (std::size_t t = 0; t < t_frames; ++t) {
      double pos = t_frames > 1
                       ? static_cast<double>(t) * (d_frames - 1) / (t_frames - 1)
                       : 0.0;
      auto src = static_cast<std::size_t>(std::llround(pos));
      body.theta[t] = donor->body.theta[src];
      body.valid[t] = donor->body.valid[src];
      body.provenance[t] = donor->body.provenance[src];
    }
    target->body = std::move(body);
  } else if (target->kind == NodeKind::kDeformable) {
    target->embed = donor->embed;
    target->norm_box = donor->norm_box;
  }
  return out;
}

inline SceneGraph insert_node(const SceneGraph& scene, const SceneNode& node) {
  if (scene.find_node(node.id))
    throw std::invalid_argument("insert_node: duplicate node id " +
                                std::to_string(node.id));
  if (node.pose.n_frames() < scene.n_frames())
    throw std::invalid_argument("insert_node: trajectory shorter than timeline");
  if (node.kind == NodeKind::kArticulated && node.body.n_frames() < scene.n_frames())
    throw std::invalid_argument("insert_node: body pose sequence shorter than timeline");
  SceneGraph out = scene;
  out.nodes.push_back(node);
  out.validate();
  return out;
}

inline SceneGraph remove_node(const SceneGraph& scene, int node_id) {
  SceneGraph out = scene;
  for (std::size_t i = 0; i < out.nodes.size(); ++i)
    if (out.nodes[i].id == node_id) {
      out.nodes.erase(out.nodes.begin() + i);
      return out;
    }
  throw std::invalid_argument("remove_node: node not found");
}

// mapping[t] = source frame index for new frame t; must cover the timeline.
inline SceneGraph retime_trajectory(const SceneGraph& scene, int node_id,
                                    const std::vector<int>& mapping) {
  SceneGraph out = scene;
  SceneNode* node = out.find_node(node_id);
  if (!node) throw std::invalid_argument("retime_trajectory: node not found");
  if (mapping.size() != scene.n_frames())
    throw std::invalid_argument("retime_trajectory: mapping length != timeline");
  for (int m : mapping)
    if (m < 0 || static_cast<std::size_t>(m) >= scene.n_frames())
      throw std::invalid_argument("retime_trajectory: mapping index out of range");
  const TrackedPose old_pose = node->pose;
  for (std::size_t t = 0; t < mapping.size(); ++t) {
    node->pose.base[t] = old_pose.base[mapping[t]];
    node->pose.rot_residual[t] = old_pose.rot_residual[mapping[t]];
    node->pose.trans_residual[t] = old_pose.trans_residual[mapping[t]];
    node->pose.valid[t] = old_pose.valid[mapping[t]];
  }
  if (node->kind == NodeKind::kArticulated) {
    const BodyPoseSequence old_body = node->body;
    for (std::size_t t = 0; t < mapping.size(); ++t) {
      node->body.theta[t] = old_body.theta[mapping[t]];
      node->body.valid[t] = old_body.valid[mapping[t]];
      node->body.provenance[t] = old_body.provenance[mapping[t]];
    }
  }
  return out;
}

inline std::vector<int> reversed_mapping(std::size_t n_frames) {
  std::vector<int> m(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t)
    m[t] = static_cast<int>(n_frames - 1 - t);
  return m;
}

}  // namespace splatgraph
