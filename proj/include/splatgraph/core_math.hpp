#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace splatgraph {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat43 = Eigen::Matrix<double, 4, 3>;
using Mat44 = Eigen::Matrix4d;

// Quaternions are Vec4 in (w, x, y, z) order throughout.

inline Vec4 quat_identity() { return Vec4(1, 0, 0, 0); }

inline Vec4 quat_normalize(const Vec4& q) {
  double n = q.norm();
  if (n < 1e-300) throw std::invalid_argument("quat_normalize: zero quaternion");
  return q / n;
}

// d(normalize(q))/dq = (I - u u^T) / |q|, u = q/|q|.
inline Mat4 quat_normalize_jacobian(const Vec4& q) {
  double n = q.norm();
  Vec4 u = q / n;
  return (Mat4::Identity() - u * u.transpose()) / n;
}

// Hamilton product a*b.
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
  return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

// Left multiplication matrix: quat_mul(a, b) == quat_left_mat(a) * b.
inline Mat4 quat_left_mat(const Vec4& a) {
  Mat4 m;
  m << a[0], -a[1], -a[2], -a[3],
       a[1],  a[0], -a[3],  a[2],
       a[2],  a[3],  a[0], -a[1],
       a[3], -a[2],  a[1],  a[0];
  return m;
}

// Right multiplication matrix: quat_mul(a, b) == quat_right_mat(b) * a.
inline Mat4 quat_right_mat(const Vec4& b) {
  Mat4 m;
  m << b[0], -b[1], -b[2], -b[3],
       b[1],  b[0],  b[3], -b[2],
       b[2], -b[3],  b[0],  b[1],
       b[3],  b[2], -b[1],  b[0];
  return m;
}

inline Vec4 quat_conjugate(const Vec4& q) { return Vec4(q[0], -q[1], -q[2], -q[3]); }

// Rotation matrix of a unit quaternion.
inline Mat3 quat_to_mat(const Vec4& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// Adjoint of quat_to_mat at unit q: given dL/dR, accumulate dL/dq.
// Entries of R are quadratic in q, so each partial is linear.
inline Vec4 quat_from_rotation_grad(const Vec4& q, const Mat3& dR) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 g = Vec4::Zero();
  // dR/dw
  g[0] = 2 * (-z * dR(0, 1) + y * dR(0, 2) + z * dR(1, 0) - x * dR(1, 2) -
              y * dR(2, 0) + x * dR(2, 1));
  // dR/dx
  g[1] = 2 * (y * dR(0, 1) + z * dR(0, 2) + y * dR(1, 0) - 2 * x * dR(1, 1) -
              w * dR(1, 2) + z * dR(2, 0) + w * dR(2, 1) - 2 * x * dR(2, 2));
  // dR/dy
  g[2] = 2 * (-2 * y * dR(0, 0) + x * dR(0, 1) + w * dR(0, 2) + x * dR(1, 0) +
              z * dR(1, 2) - w * dR(2, 0) + z * dR(2, 1) - 2 * y * dR(2, 2));
  // dR/dz
  g[3] = 2 * (-2 * z * dR(0, 0) - w * dR(0, 1) + x * dR(0, 2) + w * dR(1, 0) -
              2 * z * dR(1, 1) + y * dR(1, 2) + x * dR(2, 0) + y * dR(2, 1));
  return g;
}

// Robust rotation-matrix -> quaternion (Shepperd). Non-differentiable utility
// for I/O and pose construction only.
inline Vec4 mat_to_quat(const Mat3& r) {
  double tr = r.trace();
  Vec4 q;
  if (tr > 0) {
    double s = std::sqrt(tr + 1.0) * 2;
    q = Vec4(0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
             (r(1, 0) - r(0, 1)) / s);
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2;
    q = Vec4((r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
             (r(0, 2) + r(2, 0)) / s);
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2;
    q = Vec4((r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
             (r(1, 2) + r(2, 1)) / s);
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2;
    q = Vec4((r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s,
             (r(1, 2) + r(2, 1)) / s, 0.25 * s);
  }
  return quat_normalize(q);
}

// exp: so(3) axis-angle vector -> unit quaternion, with Taylor fallback.
inline Vec4 exp_so3_quat(const Vec3& w) {
  double t2 = w.squaredNorm();
  double t = std::sqrt(t2);
  double c, s;  // cos(t/2), sin(t/2)/t
  if (t < 1e-6) {
    c = 1.0 - t2 / 8.0 + t2 * t2 / 384.0;
    s = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
  } else {
    c = std::cos(0.5 * t);
    s = std::sin(0.5 * t) / t;
  }
  return Vec4(c, s * w[0], s * w[1], s * w[2]);
}

// Jacobian of exp_so3_quat: 4x3, dq/dw.
inline Mat43 exp_so3_quat_jacobian(const Vec3& w) {
  double t2 = w.squaredNorm();
  double t = std::sqrt(t2);
  double s, ds;  // s = sin(t/2)/t, ds = ds/d(t^2)
  double dc;     // dc/d(t^2) where c = cos(t/2)
  if (t < 1e-6) {
    s = 0.5 - t2 / 48.0 + t2 * t2 / 3840.0;
    ds = -1.0 / 48.0 + t2 / 1920.0;
    dc = -1.0 / 8.0 + t2 / 192.0;
  } else {
    s = std::sin(0.5 * t) / t;
    // d/d(t^2) of cos(t/2) = -sin(t/2) / (4 t)
    dc = -std::sin(0.5 * t) / (4.0 * t);
    // d/d(t^2) of sin(t/2)/t = (t/2 cos(t/2) - sin(t/2)) / (2 t^3)
    ds = (0.5 * t * std::cos(0.5 * t) - std::sin(0.5 * t)) / (2.0 * t * t2);
  }
  Mat43 j;
  for (int k = 0; k < 3; ++k) {
    // d(t^2)/dw_k = 2 w_k
    j(0, k) = dc * 2.0 * w[k];
    for (int i = 0; i < 3; ++i)
      j(i + 1, k) = ds * 2.0 * w[k] * w[i] + (i == k ? s : 0.0);
  }
  return j;
}

// log: unit quaternion -> axis-angle (shortest arc).
inline Vec3 log_so3_quat(const Vec4& q_in) {
  Vec4 q = q_in[0] < 0 ? Vec4(-q_in) : q_in;
  double vn = q.tail<3>().norm();
  if (vn < 1e-12) return 2.0 * q.tail<3>();
  double t = 2.0 * std::atan2(vn, q[0]);
  return q.tail<3>() * (t / vn);
}

// Geodesic angle between two rotations, radians.
inline double quat_geodesic_angle(const Vec4& a, const Vec4& b) {
  double d = std::abs(quat_normalize(a).dot(quat_normalize(b)));
  d = std::min(d, 1.0);
  return 2.0 * std::acos(d);
}

// Spherical interpolation with sign alignment; u in [0,1].
inline Vec4 quat_slerp(const Vec4& a_in, const Vec4& b_in, double u) {
  Vec4 a = quat_normalize(a_in);
  Vec4 b = quat_normalize(b_in);
  double d = a.dot(b);
  if (d < 0) {
    b = -b;
    d = -d;
  }
  if (d > 1.0 - 1e-10) return quat_normalize(a + u * (b - a));
  double th = std::acos(std::min(d, 1.0));
  double sth = std::sin(th);
  return quat_normalize((std::sin((1 - u) * th) / sth) * a +
                        (std::sin(u * th) / sth) * b);
}

// Rigid transform.
struct SE3 {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  SE3 inverse() const { return SE3{R.transpose(), -(R.transpose() * t)}; }
  SE3 compose(const SE3& other) const {  // this * other
    return SE3{R * other.R, R * other.t + t};
  }
  static SE3 identity() { return SE3{}; }
  static SE3 from_quat_trans(const Vec4& q, const Vec3& t) {
    return SE3{quat_to_mat(quat_normalize(q)), t};
  }
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double y) { return std::log(y / (1.0 - y)); }

inline double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

inline double softplus_grad(double x) { return sigmoid(x); }

// Inverse of softplus, for seeding pre-activation values from targets.
inline double softplus_inverse(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

inline bool finite(const Vec3& v) { return v.allFinite(); }
inline bool finite(const Vec4& v) { return v.allFinite(); }

}  // namespace splatgraph
