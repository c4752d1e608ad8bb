#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "splatgraph/core_math.hpp"
#include "splatgraph/sh.hpp"

namespace splatgraph {

// Which kind of scene element a blob belongs to; used for dynamic masks and
// per-group learning rates, preserved through concatenation.
enum class BlobSource : std::uint8_t {
  kBackground = 0,
  kRigid = 1,
  kArticulated = 2,
  kDeformable = 3,
};

// One Gaussian blob with raw (pre-activation) storage:
// opacity pre-sigmoid, scale in log space, rotation unnormalized.
struct Gaussian {
  Vec3 mean = Vec3::Zero();
  Vec4 rot = quat_identity();
  Vec3 log_scale = Vec3::Zero();
  double opacity_raw = 0.0;
  std::vector<double> sh;  // sh_coeff_count(degree) * 3, sh[l * 3 + channel]
  BlobSource source = BlobSource::kBackground;
};

// Columnar set of blobs sharing one SH degree.
struct GaussianSet {
  int sh_degree = 0;
  std::vector<Vec3> mean;
  std::vector<Vec4> rot;
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_raw;
  std::vector<double> sh;  // count * sh_stride()
  std::vector<std::uint8_t> source;

  std::size_t size() const { return mean.size(); }
  int sh_stride() const { return sh_coeff_count(sh_degree) * 3; }

  void reserve(std::size_t n) {
    mean.reserve(n);
    rot.reserve(n);
    log_scale.reserve(n);
    opacity_raw.reserve(n);
    sh.reserve(n * sh_stride());
    source.reserve(n);
  }

  void push_back(const Gaussian& g) {
    if (static_cast<int>(g.sh.size()) != sh_stride())
      throw std::invalid_argument("GaussianSet::push_back: SH size mismatch");
    mean.push_back(g.mean);
    rot.push_back(g.rot);
    log_scale.push_back(g.log_scale);
    opacity_raw.push_back(g.opacity_raw);
    sh.insert(sh.end(), g.sh.begin(), g.sh.end());
    source.push_back(static_cast<std::uint8_t>(g.source));
  }

  Gaussian get(std::size_t i) const {
    Gaussian g;
    g.mean = mean[i];
    g.rot = rot[i];
    g.log_scale = log_scale[i];
    g.opacity_raw = opacity_raw[i];
    g.sh.assign(sh.begin() + i * sh_stride(), sh.begin() + (i + 1) * sh_stride());
    g.source = static_cast<BlobSource>(source[i]);
    return g;
  }

  double opacity(std::size_t i) const { return sigmoid(opacity_raw[i]); }
  Vec3 scale(std::size_t i) const {
    return Vec3(std::exp(log_scale[i][0]), std::exp(log_scale[i][1]),
                std::exp(log_scale[i][2]));
  }
  const double* sh_ptr(std::size_t i) const { return sh.data() + i * sh_stride(); }
  double* sh_ptr(std::size_t i) { return sh.data() + i * sh_stride(); }

  // Raise the SH degree in place; new coefficients are zero, which leaves
  // evaluated colors unchanged (the basis is linear in coefficients).
  void promote_sh_degree(int degree) {
    if (degree < sh_degree)
      throw std::invalid_argument("promote_sh_degree: cannot lower degree");
    if (degree == sh_degree) return;
    int old_stride = sh_stride();
    int new_stride = sh_coeff_count(degree) * 3;
    std::vector<double> grown(size() * new_stride, 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (int k = 0; k < old_stride; ++k)
        grown[i * new_stride + k] = sh[i * old_stride + k];
    sh = std::move(grown);
    sh_degree = degree;
  }

  // Append another set; degrees unify to the max via zero padding.
  void append(const GaussianSet& other) {
    if (other.size() == 0) return;
    GaussianSet tmp;
    const GaussianSet* src = &other;
    if (other.sh_degree > sh_degree) promote_sh_degree(other.sh_degree);
    if (other.sh_degree < sh_degree) {
      tmp = other;
      tmp.promote_sh_degree(sh_degree);
      src = &tmp;
    }
    mean.insert(mean.end(), src->mean.begin(), src->mean.end());
    rot.insert(rot.end(), src->rot.begin(), src->rot.end());
    log_scale.insert(log_scale.end(), src->log_scale.begin(), src->log_scale.end());
    opacity_raw.insert(opacity_raw.end(), src->opacity_raw.begin(),
                       src->opacity_raw.end());
    sh.insert(sh.end(), src->sh.begin(), src->sh.end());
    source.insert(source.end(), src->source.begin(), src->source.end());
  }

  // Keep rows where keep[i] is true.
  void filter(const std::vector<bool>& keep) {
    if (keep.size() != size())
      throw std::invalid_argument("GaussianSet::filter: mask size mismatch");
    GaussianSet out;
    out.sh_degree = sh_degree;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i)
      if (keep[i]) out.push_back(get(i));
    *this = std::move(out);
  }
};

// Pose as unit quaternion + translation; the differentiable pose carrier.
struct QuatPose {
  Vec4 q = quat_identity();
  Vec3 t = Vec3::Zero();

  SE3 to_se3() const { return SE3::from_quat_trans(q, t); }
  static QuatPose from_se3(const SE3& m) { return QuatPose{mat_to_quat(m.R), m.t}; }
  QuatPose compose(const QuatPose& other) const {  // this * other
    return QuatPose{quat_mul(q, other.q), quat_to_mat(quat_normalize(q)) * other.t + t};
  }
  QuatPose inverse() const {
    Vec4 qc = quat_conjugate(quat_normalize(q));
    return QuatPose{qc, -(quat_to_mat(qc) * t)};
  }
};

// Rigid transform of a whole set: means move by R mu + t, rotations compose
// on the left, scale/opacity/color unchanged.
inline GaussianSet se3_transform_set(const QuatPose& pose, const GaussianSet& in) {
  GaussianSet out = in;
  Mat3 r = quat_to_mat(quat_normalize(pose.q));
  for (std::size_t i = 0; i < in.size(); ++i) {
    out.mean[i] = r * in.mean[i] + pose.t;
    out.rot[i] = quat_mul(pose.q, in.rot[i]);
  }
  return out;
}

// Gradients flowing back to a pose from blobs it transformed.
struct PoseGrads {
  Vec4 dq = Vec4::Zero();  // wrt the pose quaternion as stored
  Vec3 dt = Vec3::Zero();
};

// Backward of se3_transform_set for one blob. d_mean_out/d_rot_out are the
// upstream grads; canonical grads are accumulated into d_mean_in/d_rot_in and
// pose grads into pg. Needs the canonical (input) blob values.
inline void se3_transform_blob_backward(const QuatPose& pose, const Vec3& mean_in,
                                        const Vec4& rot_in, const Vec3& d_mean_out,
                                        const Vec4& d_rot_out, Vec3& d_mean_in,
                                        Vec4& d_rot_in, PoseGrads& pg) {
  Vec4 qn = quat_normalize(pose.q);
  Mat3 r = quat_to_mat(qn);
  // mean path: m_out = R(q^) m_in + t
  d_mean_in += r.transpose() * d_mean_out;
  pg.dt += d_mean_out;
  Mat3 dR = d_mean_out * mean_in.transpose();
  Vec4 dqn = quat_from_rotation_grad(qn, dR);
  // rot path: r_out = q (hamilton) r_in, using the stored (unnormalized) q
  d_rot_in += quat_left_mat(pose.q).transpose() * d_rot_out;
  pg.dq += quat_right_mat(rot_in).transpose() * d_rot_out;
  // chain the normalization used by the mean path
  pg.dq += quat_normalize_jacobian(pose.q).transpose() * dqn;
}

// 3D covariance from activated scale and stored rotation:
// Sigma = R S S^T R^T with S = diag(exp(log_scale)), R from normalized rot.
inline Mat3 build_covariance(const Vec3& log_scale, const Vec4& rot) {
  if (!log_scale.allFinite() || !rot.allFinite())
    throw std::invalid_argument("build_covariance: non-finite inputs");
  Vec3 s(std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2]));
  Mat3 r = quat_to_mat(quat_normalize(rot));
  Mat3 m = r * s.asDiagonal();
  return m * m.transpose();
}

// Backward of build_covariance: accumulate grads on the raw parameters given
// dL/dSigma. Sigma = M M^T with M = R diag(s), so dM = (dSigma + dSigma^T) M.
inline void build_covariance_backward(const Vec3& log_scale, const Vec4& rot,
                                      const Mat3& d_sigma, Vec3& d_log_scale,
                                      Vec4& d_rot) {
  Vec3 s(std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2]));
  Vec4 qn = quat_normalize(rot);
  Mat3 r = quat_to_mat(qn);
  Mat3 m = r * s.asDiagonal();
  Mat3 dm = (d_sigma + d_sigma.transpose()) * m;
  Mat3 dr = dm * s.asDiagonal();
  Vec3 ds = (r.transpose() * dm).diagonal();
  d_log_scale += ds.cwiseProduct(s);
  Vec4 dqn = quat_from_rotation_grad(qn, dr);
  d_rot += quat_normalize_jacobian(rot).transpose() * dqn;
}

// Pinhole camera with a rigid world-to-camera transform.
struct Camera {
  int id = 0;
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  double near_clip = 0.1;
  double far_clip = 1000.0;
  SE3 cam_from_world;

  Vec3 to_camera(const Vec3& p_world) const { return cam_from_world.apply(p_world); }
  Vec3 center_world() const { return cam_from_world.inverse().t; }

  // (u, v) in pixels plus camera-frame depth; no validity checks.
  Vec3 project(const Vec3& p_world) const {
    Vec3 p = to_camera(p_world);
    return Vec3(fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy, p[2]);
  }

  // World-frame unit ray direction through a pixel position.
  Vec3 pixel_ray_dir(double u, double v) const {
    Vec3 d_cam((u - cx) / fx, (v - cy) / fy, 1.0);
    return (cam_from_world.R.transpose() * d_cam).normalized();
  }
};

}  // namespace splatgraph
