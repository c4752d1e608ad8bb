#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "splatgraph/gaussian.hpp"

namespace splatgraph {

// Generic articulated template: rest vertices, a joint forest, per-vertex
// skinning weights, and optional linear blend/pose-corrective shape bases.
struct ArticulatedTemplate {
  std::vector<Vec3> vertices;              // n_v rest positions ('Da' pose)
  std::vector<std::array<int, 3>> faces;   // export/debug + edge statistics
  std::vector<Vec3> joints;                // n_k rest joint positions
  std::vector<int> parent;                 // -1 for the single root
  std::vector<double> skinning;            // n_k x n_v, skinning[k * n_v + i]
  int n_shapes = 0;
  std::vector<Vec3> shape_basis;           // n_shapes * n_v, shape s at [s*n_v+i]
  std::vector<Vec3> pose_basis;            // optional, n_pose_features * n_v

  std::size_t n_vertices() const { return vertices.size(); }
  std::size_t n_joints() const { return joints.size(); }
  // Pose-corrective features: flattened (R_k - I) of non-root joints.
  std::size_t n_pose_features() const {
    return pose_basis.empty() ? 0 : pose_basis.size() / n_vertices();
  }

  void validate() const {
    std::size_t nv = n_vertices(), nk = n_joints();
    if (parent.size() != nk)
      throw std::invalid_argument("template: parent size != joint count");
    int roots = 0;
    for (std::size_t k = 0; k < nk; ++k) {
      if (parent[k] == -1) {
        ++roots;
        continue;
      }
      if (parent[k] < 0 || static_cast<std::size_t>(parent[k]) >= nk)
        throw std::invalid_argument("template: parent index out of range");
      // walk up; a cycle would exceed nk hops
      int cur = parent[k];
      std::size_t hops = 0;
      while (cur != -1) {
        cur = parent[cur];
        if (++hops > nk) throw std::invalid_argument("template: cyclic hierarchy");
      }
    }
    if (roots != 1) throw std::invalid_argument("template: need exactly one root");
    if (skinning.size() != nk * nv)
      throw std::invalid_argument("template: skinning size mismatch");
    for (std::size_t i = 0; i < nv; ++i) {
      double sum = 0;
      for (std::size_t k = 0; k < nk; ++k) {
        double w = skinning[k * nv + i];
        if (w < 0) throw std::invalid_argument("template: negative skinning weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("template: skinning column does not sum to 1");
    }
    if (shape_basis.size() != static_cast<std::size_t>(n_shapes) * nv)
      throw std::invalid_argument("template: shape basis size mismatch");
    if (!pose_basis.empty() && pose_basis.size() % nv != 0)
      throw std::invalid_argument("template: pose basis size mismatch");
  }
};

enum class PoseProvenance : std::uint8_t { kDetected = 0, kInterpolated = 1, kOptimized = 2 };

// Per-frame joint rotations; entry 0 is the global orientation.
struct BodyPoseSequence {
  int n_joints = 0;
  std::vector<std::vector<Vec4>> theta;  // [frame][joint], quaternions
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> provenance;

  std::size_t n_frames() const { return theta.size(); }
  bool any_valid() const {
    for (auto v : valid)
      if (v) return true;
    return false;
  }
  static BodyPoseSequence rest(int n_joints, std::size_t n_frames) {
    BodyPoseSequence s;
    s.n_joints = n_joints;
    s.theta.assign(n_frames, std::vector<Vec4>(n_joints, quat_identity()));
    s.valid.assign(n_frames, 1);
    s.provenance.assign(n_frames, static_cast<std::uint8_t>(PoseProvenance::kDetected));
    return s;
  }
};

// V + sum(beta_k B_S[k]) + pose correctives (zero when the basis is absent).
inline std::vector<Vec3> shape_vertices(const ArticulatedTemplate& tmpl,
                                        const std::vector<double>& beta,
                                        const std::vector<Vec4>* theta = nullptr) {
  if (static_cast<int>(beta.size()) != tmpl.n_shapes)
    throw std::invalid_argument("shape_vertices: beta length mismatch");
  std::size_t nv = tmpl.n_vertices();
  std::vector<Vec3> out = tmpl.vertices;
  for (int s = 0; s < tmpl.n_shapes; ++s)
    for (std::size_t i = 0; i < nv; ++i)
      out[i] += beta[s] * tmpl.shape_basis[static_cast<std::size_t>(s) * nv + i];
  if (!tmpl.pose_basis.empty() && theta) {
    if (theta->size() != tmpl.n_joints())
      throw std::invalid_argument("shape_vertices: theta length mismatch");
    std::size_t nf = tmpl.n_pose_features();
    std::vector<double> feat;
    feat.reserve(9 * (tmpl.n_joints() - 1));
    for (std::size_t k = 1; k < tmpl.n_joints(); ++k) {
      Mat3 r = quat_to_mat(quat_normalize((*theta)[k])) - Mat3::Identity();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) feat.push_back(r(a, b));
    }
    std::size_t n_used = std::min(nf, feat.size());
    for (std::size_t f = 0; f < n_used; ++f)
      for (std::size_t i = 0; i < nv; ++i)
        out[i] += feat[f] * tmpl.pose_basis[f * nv + i];
  }
  return out;
}

// Forward kinematics carried natively on quaternions.
// a_q/a_t: global joint rotation and posed joint position.
// G_k = [R(a_q) | a_t - R(a_q) j_k] takes rest-pose points to posed points.
struct FkResult {
  std::vector<Vec4> a_q;
  std::vector<Vec3> a_t;
  std::vector<Mat3> r;    // R(a_q), materialized once
  std::vector<Vec3> g_t;  // translation part of G_k
};

inline FkResult forward_kinematics(const ArticulatedTemplate& tmpl,
                                   const std::vector<Vec4>& theta) {
  std::size_t nk = tmpl.n_joints();
  if (theta.size() != nk)
    throw std::invalid_argument("forward_kinematics: theta length mismatch");
  FkResult fk;
  fk.a_q.resize(nk);
  fk.a_t.resize(nk);
  fk.r.resize(nk);
  fk.g_t.resize(nk);
  for (std::size_t k = 0; k < nk; ++k) {
    Vec4 q_loc = quat_normalize(theta[k]);
    int p = tmpl.parent[k];
    if (p == -1) {
      fk.a_q[k] = q_loc;
      fk.a_t[k] = tmpl.joints[k];
    } else {
      if (static_cast<std::size_t>(p) >= k)
        throw std::invalid_argument("forward_kinematics: joints must be parent-ordered");
      fk.a_q[k] = quat_mul(fk.a_q[p], q_loc);
      fk.a_t[k] = fk.r[p] * (tmpl.joints[k] - tmpl.joints[p]) + fk.a_t[p];
    }
    fk.r[k] = quat_to_mat(fk.a_q[k]);
    fk.g_t[k] = fk.a_t[k] - fk.r[k] * tmpl.joints[k];
  }
  return fk;
}

inline std::vector<SE3> fk_as_se3(const FkResult& fk) {
  std::vector<SE3> out(fk.r.size());
  for (std::size_t k = 0; k < fk.r.size(); ++k) out[k] = SE3{fk.r[k], fk.g_t[k]};
  return out;
}

// Per-blob skinning weights over joints, dense row-major.
struct SkinWeights {
  int n_joints = 0;
  std::vector<double> w;  // [blob * n_joints + k]

  std::size_t n_blobs() const {
    return n_joints > 0 ? w.size() / n_joints : 0;
  }
  double* row(std::size_t i) { return w.data() + i * n_joints; }
  const double* row(std::size_t i) const { return w.data() + i * n_joints; }

  // Clamp negatives and renormalize each blob's row to sum 1; used after
  // optimizer steps to restore the invariant.
  void project() {
    std::size_t nb = n_blobs();
    for (std::size_t i = 0; i < nb; ++i) {
      double sum = 0;
      double* r = row(i);
      for (int k = 0; k < n_joints; ++k) {
        if (r[k] < 0) r[k] = 0;
        sum += r[k];
      }
      if (sum <= 1e-12) {
        for (int k = 0; k < n_joints; ++k) r[k] = 1.0 / n_joints;
      } else {
        for (int k = 0; k < n_joints; ++k) r[k] /= sum;
      }
    }
  }
};

// Intermediates kept from lbs_deform for its backward.
struct LbsCache {
  std::vector<Mat34> m;       // blended affine per blob
  std::vector<Vec4> u;        // unnormalized blended quaternion per blob
  std::vector<int> k_star;    // dominant joint per blob (sign reference)
  std::vector<double> sign;   // per blob * joint sign alignment, [i*nk+k]
};

// Deform a canonical set by blended joint transforms. Means move by the
// weighted affine blend; rotations compose with the sign-aligned normalized
// quaternion average; scale, opacity, color pass through.
inline GaussianSet lbs_deform(const GaussianSet& canonical, const SkinWeights& skin,
                              const FkResult& fk, LbsCache* cache = nullptr) {
  std::size_t nb = canonical.size();
  std::size_t nk = fk.a_q.size();
  if (skin.n_joints != static_cast<int>(nk) || skin.n_blobs() != nb)
    throw std::invalid_argument("lbs_deform: weight/blob count mismatch");
  GaussianSet out = canonical;
  if (cache) {
    cache->m.resize(nb);
    cache->u.resize(nb);
    cache->k_star.resize(nb);
    cache->sign.assign(nb * nk, 1.0);
  }
  for (std::size_t i = 0; i < nb; ++i) {
    const double* w = skin.row(i);
    int ks = 0;
    for (std::size_t k = 1; k < nk; ++k)
      if (w[k] > w[ks]) ks = static_cast<int>(k);
    Mat3 mr = Mat3::Zero();
    Vec3 mt = Vec3::Zero();
    Vec4 u = Vec4::Zero();
    for (std::size_t k = 0; k < nk; ++k) {
      // Sign is computed even for zero weights: the weight gradient needs it.
      double s = fk.a_q[k].dot(fk.a_q[ks]) < 0 ? -1.0 : 1.0;
      if (cache) cache->sign[i * nk + k] = s;
      if (w[k] == 0.0) continue;
      mr += w[k] * fk.r[k];
      mt += w[k] * fk.g_t[k];
      u += (w[k] * s) * fk.a_q[k];
    }
    Vec4 qb = quat_normalize(u);
    out.mean[i] = mr * canonical.mean[i] + mt;
    out.rot[i] = quat_mul(qb, canonical.rot[i]);
    if (cache) {
      cache->m[i].leftCols<3>() = mr;
      cache->m[i].col(3) = mt;
      cache->u[i] = u;
      cache->k_star[i] = ks;
    }
  }
  return out;
}

// Gradients emitted by lbs_backward for the joint transforms; fed to
// fk_backward afterwards.
struct JointGrads {
  std::vector<Mat3> d_r;    // wrt R(a_q[k])
  std::vector<Vec3> d_g_t;  // wrt g_t[k]
  std::vector<Vec4> d_a_q;  // wrt a_q[k] directly (quaternion blend path)

  explicit JointGrads(std::size_t nk)
      : d_r(nk, Mat3::Zero()), d_g_t(nk, Vec3::Zero()), d_a_q(nk, Vec4::Zero()) {}
};

// Backward of lbs_deform: upstream grads on deformed mean/rot flow to the
// canonical blobs, the skinning weights, and the joint transforms.
inline void lbs_backward(const GaussianSet& canonical, const SkinWeights& skin,
                         const FkResult& fk, const LbsCache& cache,
                         const std::vector<Vec3>& d_mean_out,
                         const std::vector<Vec4>& d_rot_out,
                         std::vector<Vec3>& d_mean_in, std::vector<Vec4>& d_rot_in,
                         std::vector<double>& d_skin, JointGrads& jg) {
  std::size_t nb = canonical.size();
  std::size_t nk = fk.a_q.size();
  for (std::size_t i = 0; i < nb; ++i) {
    const double* w = skin.row(i);
    Mat3 mr = cache.m[i].leftCols<3>();
    Vec4 qb = quat_normalize(cache.u[i]);
    const Vec3& dmu = d_mean_out[i];
    const Vec4& dq_out = d_rot_out[i];

    d_mean_in[i] += mr.transpose() * dmu;
    Mat3 d_mr = dmu * canonical.mean[i].transpose();
    Vec3 d_mt = dmu;

    d_rot_in[i] += quat_left_mat(qb).transpose() * dq_out;
    Vec4 d_qb = quat_right_mat(canonical.rot[i]).transpose() * dq_out;
    Vec4 d_u = quat_normalize_jacobian(cache.u[i]).transpose() * d_qb;

    for (std::size_t k = 0; k < nk; ++k) {
      double s = cache.sign[i * nk + k];
      double dw = s * fk.a_q[k].dot(d_u) + d_mr.cwiseProduct(fk.r[k]).sum() +
                  d_mt.dot(fk.g_t[k]);
      if (w[k] != 0.0) {
        jg.d_a_q[k] += (w[k] * s) * d_u;
        jg.d_r[k] += w[k] * d_mr;
        jg.d_g_t[k] += w[k] * d_mt;
      }
      d_skin[i * nk + k] += dw;
    }
  }
}

// Backward of forward_kinematics; returns per-joint grads on the raw theta.
inline std::vector<Vec4> fk_backward(const ArticulatedTemplate& tmpl,
                                     const std::vector<Vec4>& theta,
                                     const FkResult& fk, const JointGrads& jg_in) {
  std::size_t nk = tmpl.n_joints();
  std::vector<Vec4> d_a_q = jg_in.d_a_q;
  std::vector<Vec3> d_a_t(nk, Vec3::Zero());
  std::vector<Mat3> d_r = jg_in.d_r;
  std::vector<Vec4> d_theta(nk, Vec4::Zero());
  // g_t = a_t - R j: feed into a_t and R before the reverse sweep.
  for (std::size_t k = 0; k < nk; ++k) {
    d_a_t[k] += jg_in.d_g_t[k];
    d_r[k] += jg_in.d_g_t[k] * (-tmpl.joints[k].transpose());
  }
  for (std::size_t k = nk; k-- > 0;) {
    d_a_q[k] += quat_from_rotation_grad(fk.a_q[k], d_r[k]);
    Vec4 q_loc = quat_normalize(theta[k]);
    int p = tmpl.parent[k];
    Vec4 d_q_loc;
    if (p == -1) {
      d_q_loc = d_a_q[k];
    } else {
      // a_q[k] = a_q[p] * q_loc
      d_q_loc = quat_left_mat(fk.a_q[p]).transpose() * d_a_q[k];
      d_a_q[p] += quat_right_mat(q_loc).transpose() * d_a_q[k];
      // a_t[k] = R(a_q[p]) (j_k - j_p) + a_t[p]
      d_a_t[p] += d_a_t[k];
      Mat3 d_rp = d_a_t[k] * (tmpl.joints[k] - tmpl.joints[p]).transpose();
      d_a_q[p] += quat_from_rotation_grad(fk.a_q[p], d_rp);
    }
    d_theta[k] = quat_normalize_jacobian(theta[k]).transpose() * d_q_loc;
  }
  return d_theta;
}

// One blob per shaped vertex. Scale: half the mean incident-edge length on
// every axis (isolated vertices fall back to the global mean edge length).
// Opacity activates to 0.1; SH is degree 1, zero-initialized.
inline std::pair<GaussianSet, SkinWeights> tessellate_template(
    const ArticulatedTemplate& tmpl, const std::vector<double>& beta) {
  tmpl.validate();
  std::vector<Vec3> verts = shape_vertices(tmpl, beta);
  std::size_t nv = verts.size();
  std::size_t nk = tmpl.n_joints();

  std::set<std::pair<int, int>> edges;
  for (const auto& f : tmpl.faces)
    for (int e = 0; e < 3; ++e) {
      int a = f[e], b = f[(e + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  std::vector<double> edge_sum(nv, 0.0);
  std::vector<int> edge_cnt(nv, 0);
  double global_sum = 0.0;
  for (const auto& [a, b] : edges) {
    double len = (verts[a] - verts[b]).norm();
    edge_sum[a] += len;
    edge_sum[b] += len;
    ++edge_cnt[a];
    ++edge_cnt[b];
    global_sum += len;
  }
  double global_mean = edges.empty() ? 0.05 : global_sum / edges.size();

  GaussianSet set;
  set.sh_degree = 1;
  set.reserve(nv);
  SkinWeights skin;
  skin.n_joints = static_cast<int>(nk);
  skin.w.resize(nv * nk);
  double op_raw = logit(0.1);
  for (std::size_t i = 0; i < nv; ++i) {
    Gaussian g;
    g.mean = verts[i];
    g.rot = quat_identity();
    double mean_edge = edge_cnt[i] > 0 ? edge_sum[i] / edge_cnt[i] : global_mean;
    double s = std::log(std::max(0.5 * mean_edge, 1e-6));
    g.log_scale = Vec3(s, s, s);
    g.opacity_raw = op_raw;
    g.sh.assign(sh_coeff_count(1) * 3, 0.0);
    g.source = BlobSource::kArticulated;
    set.push_back(g);
    for (std::size_t k = 0; k < nk; ++k)
      skin.w[i * nk + k] = tmpl.skinning[k * nv + i];
  }
  return {std::move(set), std::move(skin)};
}

}  // namespace splatgraph
