#include <gtest/gtest.h>

#include "splatgraph/gaussian.hpp"
#include "splatgraph/rng.hpp"
#include "splatgraph/sh.hpp"

using namespace splatgraph;

namespace {

GaussianSet random_set(Rng& rng, std::size_t n, int degree) {
  GaussianSet set;
  set.sh_degree = degree;
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian g;
    g.mean = Vec3(rng.normal(), rng.normal(), rng.normal());
    g.rot = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    if (g.rot.norm() < 1e-3) g.rot = quat_identity();
    g.log_scale = Vec3(rng.uniform(-2, 0), rng.uniform(-2, 0), rng.uniform(-2, 0));
    g.opacity_raw = rng.uniform(-2, 2);
    g.sh.resize(sh_coeff_count(degree) * 3);
    for (auto& v : g.sh) v = rng.normal() * 0.3;
    set.push_back(g);
  }
  return set;
}

}  // namespace

TEST(TransformTest, IdentityIsBitwiseEqual) {
  Rng rng(3);
  GaussianSet set = random_set(rng, 10, 1);
  GaussianSet out = se3_transform_set(QuatPose{}, set);
  ASSERT_EQ(out.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(out.mean[i][0], set.mean[i][0]);
    EXPECT_EQ(out.mean[i][1], set.mean[i][1]);
    EXPECT_EQ(out.mean[i][2], set.mean[i][2]);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(out.rot[i][j], set.rot[i][j]);
    EXPECT_EQ(out.opacity_raw[i], set.opacity_raw[i]);
    EXPECT_EQ(out.log_scale[i], set.log_scale[i]);
  }
  EXPECT_EQ(out.sh, set.sh);
}

TEST(TransformTest, NinetyAboutZWithLift) {
  GaussianSet set;
  set.sh_degree = 0;
  Gaussian g;
  g.mean = Vec3(1, 0, 0);
  g.sh.assign(3, 0.0);
  set.push_back(g);
  QuatPose pose{exp_so3_quat(Vec3(0, 0, M_PI / 2)), Vec3(0, 0, 1)};
  GaussianSet out = se3_transform_set(pose, set);
  EXPECT_LT((out.mean[0] - Vec3(0, 1, 1)).norm(), 1e-12);
}

TEST(TransformTest, CompositionOracle) {
  Rng rng(4);
  GaussianSet set = random_set(rng, 10, 2);
  QuatPose t1{quat_normalize(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal())),
              Vec3(rng.normal(), rng.normal(), rng.normal())};
  QuatPose t2{quat_normalize(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal())),
              Vec3(rng.normal(), rng.normal(), rng.normal())};
  GaussianSet staged = se3_transform_set(t1, se3_transform_set(t2, set));
  GaussianSet fused = se3_transform_set(t1.compose(t2), set);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_LT((staged.mean[i] - fused.mean[i]).norm(), 1e-9);
    // rotations agree as rotations (quaternion sign may differ)
    Vec4 a = quat_normalize(staged.rot[i]);
    Vec4 b = quat_normalize(fused.rot[i]);
    EXPECT_NEAR(std::abs(a.dot(b)), 1.0, 1e-9);
  }
}

TEST(TransformTest, GroupAction) {
  Rng rng(5);
  GaussianSet set = random_set(rng, 6, 0);
  GaussianSet id_applied = se3_transform_set(QuatPose{}, set);
  for (std::size_t i = 0; i < set.size(); ++i)
    EXPECT_LT((id_applied.mean[i] - set.mean[i]).norm(), 1e-15);
}

TEST(TransformBackwardTest, MatchesFiniteDifferences) {
  Rng rng(6);
  GaussianSet set = random_set(rng, 4, 0);
  Vec3 omega(0.3, -0.2, 0.5);
  QuatPose pose{exp_so3_quat(omega), Vec3(0.5, -1.0, 2.0)};

  // random upstream grads
  std::vector<Vec3> d_mean_out(set.size());
  std::vector<Vec4> d_rot_out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    d_mean_out[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
    d_rot_out[i] = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  }
  auto loss = [&](const QuatPose& p, const GaussianSet& in) {
    GaussianSet out = se3_transform_set(p, in);
    double l = 0;
    for (std::size_t i = 0; i < in.size(); ++i)
      l += d_mean_out[i].dot(out.mean[i]) + d_rot_out[i].dot(out.rot[i]);
    return l;
  };

  std::vector<Vec3> d_mean_in(set.size(), Vec3::Zero());
  std::vector<Vec4> d_rot_in(set.size(), Vec4::Zero());
  PoseGrads pg;
  for (std::size_t i = 0; i < set.size(); ++i)
    se3_transform_blob_backward(pose, set.mean[i], set.rot[i], d_mean_out[i],
                                d_rot_out[i], d_mean_in[i], d_rot_in[i], pg);

  double h = 1e-6;
  // wrt canonical means and rots
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (int j = 0; j < 3; ++j) {
      GaussianSet sp = set, sm = set;
      sp.mean[i][j] += h;
      sm.mean[i][j] -= h;
      EXPECT_NEAR(d_mean_in[i][j], (loss(pose, sp) - loss(pose, sm)) / (2 * h), 1e-6);
    }
    for (int j = 0; j < 4; ++j) {
      GaussianSet sp = set, sm = set;
      sp.rot[i][j] += h;
      sm.rot[i][j] -= h;
      EXPECT_NEAR(d_rot_in[i][j], (loss(pose, sp) - loss(pose, sm)) / (2 * h), 1e-6);
    }
  }
  // wrt pose quaternion and translation
  for (int j = 0; j < 4; ++j) {
    QuatPose pp = pose, pm = pose;
    pp.q[j] += h;
    pm.q[j] -= h;
    EXPECT_NEAR(pg.dq[j], (loss(pp, set) - loss(pm, set)) / (2 * h), 1e-5);
  }
  for (int j = 0; j < 3; ++j) {
    QuatPose pp = pose, pm = pose;
    pp.t[j] += h;
    pm.t[j] -= h;
    EXPECT_NEAR(pg.dt[j], (loss(pp, set) - loss(pm, set)) / (2 * h), 1e-6);
  }
}

TEST(CovarianceTest, UnitScaleIsIdentity) {
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    Mat3 cov = build_covariance(Vec3::Zero(), q);
    EXPECT_LT((cov - Mat3::Identity()).norm(), 1e-12);
  }
}

TEST(CovarianceTest, AxisAlignedCases) {
  Vec3 ls(std::log(2.0), 0.0, 0.0);
  Mat3 cov = build_covariance(ls, quat_identity());
  Mat3 expect = Vec3(4, 1, 1).asDiagonal();
  EXPECT_LT((cov - expect).norm(), 1e-12);

  Vec4 rz = exp_so3_quat(Vec3(0, 0, M_PI / 2));
  Mat3 cov2 = build_covariance(ls, rz);
  Mat3 expect2 = Vec3(1, 4, 1).asDiagonal();
  EXPECT_LT((cov2 - expect2).norm(), 1e-12);
}

TEST(CovarianceTest, AlwaysPsd) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    Vec3 ls(rng.uniform(-4, 2), rng.uniform(-4, 2), rng.uniform(-4, 2));
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    Mat3 cov = build_covariance(ls, q);
    Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    // eigenvalues are the squared activated scales up to ordering
    Vec3 s2(std::exp(2 * ls[0]), std::exp(2 * ls[1]), std::exp(2 * ls[2]));
    std::sort(s2.data(), s2.data() + 3);
    EXPECT_LT((es.eigenvalues() - s2).cwiseAbs().maxCoeff() / s2.maxCoeff(), 1e-9);
  }
}

TEST(CovarianceTest, RejectsNonFinite) {
  EXPECT_THROW(build_covariance(Vec3(std::nan(""), 0, 0), quat_identity()),
               std::invalid_argument);
}

TEST(CovarianceBackwardTest, MatchesFiniteDifferences) {
  Rng rng(9);
  Vec3 ls(0.2, -0.5, 0.1);
  Vec4 q = Vec4(0.9, 0.2, -0.3, 0.1);
  Mat3 d_sigma;
  for (int i = 0; i < 9; ++i) d_sigma.data()[i] = rng.normal();
  Vec3 d_ls = Vec3::Zero();
  Vec4 d_q = Vec4::Zero();
  build_covariance_backward(ls, q, d_sigma, d_ls, d_q);
  auto loss = [&](const Vec3& l, const Vec4& r) {
    return d_sigma.cwiseProduct(build_covariance(l, r)).sum();
  };
  double h = 1e-6;
  for (int j = 0; j < 3; ++j) {
    Vec3 lp = ls, lm = ls;
    lp[j] += h;
    lm[j] -= h;
    EXPECT_NEAR(d_ls[j], (loss(lp, q) - loss(lm, q)) / (2 * h), 1e-5);
  }
  for (int j = 0; j < 4; ++j) {
    Vec4 qp = q, qm = q;
    qp[j] += h;
    qm[j] -= h;
    EXPECT_NEAR(d_q[j], (loss(ls, qp) - loss(ls, qm)) / (2 * h), 1e-5);
  }
}

TEST(ShTest, Degree0ClosedForm) {
  std::vector<double> block = {0.8, -0.2, 0.4};
  Vec3 rgb = eval_sh(block, Vec3(0, 0, 1), 0);
  EXPECT_NEAR(rgb[0], 0.28209479177387814 * 0.8 + 0.5, 1e-12);
  EXPECT_NEAR(rgb[1], std::max(0.0, 0.28209479177387814 * -0.2 + 0.5), 1e-12);
  EXPECT_NEAR(rgb[2], 0.28209479177387814 * 0.4 + 0.5, 1e-12);
}

TEST(ShTest, ZeroCoeffsGiveGray) {
  std::vector<double> block(3, 0.0);
  Vec3 rgb = eval_sh(block, Vec3(1, 0, 0), 0);
  EXPECT_EQ(rgb, Vec3(0.5, 0.5, 0.5));
}

TEST(ShTest, Degree1Parity) {
  Rng rng(10);
  std::vector<double> block(sh_coeff_count(1) * 3);
  for (auto& v : block) v = rng.normal() * 0.1;
  Vec3 dir = Vec3(0.3, -0.5, 0.8).normalized();
  // compare raw (pre-clamp) values via large DC offset to stay positive
  std::vector<double> shifted = block;
  shifted[0] += 10;
  shifted[1] += 10;
  shifted[2] += 10;
  Vec3 plus = eval_sh(shifted, dir, 1);
  Vec3 minus = eval_sh(shifted, Vec3(-dir), 1);
  // degree-0 part is even; degree-1 part flips sign
  Vec3 dc(10 * 0.28209479177387814 + 0.5, 10 * 0.28209479177387814 + 0.5,
          10 * 0.28209479177387814 + 0.5);
  for (int ch = 0; ch < 3; ++ch) {
    double odd_plus = plus[ch] - dc[ch] - 0.28209479177387814 * block[ch];
    double odd_minus = minus[ch] - dc[ch] - 0.28209479177387814 * block[ch];
    EXPECT_NEAR(odd_plus, -odd_minus, 1e-9);
  }
}

TEST(ShTest, LinearInCoefficientsPreClamp) {
  std::vector<double> block = {0.3, 0.3, 0.3};
  double a = 2.5;
  std::vector<double> scaled = {a * 0.3, a * 0.3, a * 0.3};
  Vec3 base = eval_sh(block, Vec3(0, 1, 0), 0);
  Vec3 big = eval_sh(scaled, Vec3(0, 1, 0), 0);
  for (int ch = 0; ch < 3; ++ch)
    EXPECT_NEAR(big[ch] - 0.5, a * (base[ch] - 0.5), 1e-12);
}

TEST(ShTest, MismatchedBlockRejected) {
  std::vector<double> block(5, 0.0);
  EXPECT_THROW(eval_sh(block, Vec3(0, 0, 1), 0), std::invalid_argument);
}

TEST(ShTest, BackwardMatchesFd) {
  Rng rng(11);
  for (int degree = 0; degree <= 3; ++degree) {
    int n = sh_coeff_count(degree) * 3;
    std::vector<double> block(n);
    for (auto& v : block) v = rng.normal() * 0.2;
    // keep raw colors clear of the zero clamp so FD stays smooth
    for (int ch = 0; ch < 3; ++ch) block[ch] += 2.0;
    Vec3 dir = Vec3(0.4, 0.2, -0.9).normalized();
    Vec3 d_color(rng.normal(), rng.normal(), rng.normal());
    std::vector<double> d_block(n, 0.0);
    Vec3 d_dir =
        eval_sh_color_backward(degree, block.data(), dir, d_color, d_block.data());
    double h = 1e-6;
    auto loss = [&](const std::vector<double>& blk, const Vec3& d) {
      return d_color.dot(eval_sh_color(degree, blk.data(), d));
    };
    for (int j = 0; j < n; ++j) {
      auto bp = block, bm = block;
      bp[j] += h;
      bm[j] -= h;
      EXPECT_NEAR(d_block[j], (loss(bp, dir) - loss(bm, dir)) / (2 * h), 1e-6);
    }
    // direction gradient in the unit-sphere tangent: project FD accordingly
    for (int j = 0; j < 3; ++j) {
      Vec3 dp = dir, dm = dir;
      dp[j] += h;
      dm[j] -= h;
      // basis is evaluated on the raw (non-renormalized) direction here
      EXPECT_NEAR(d_dir[j], (loss(block, dp) - loss(block, dm)) / (2 * h), 1e-6);
    }
  }
}

TEST(GaussianSetTest, AppendPadsShDegrees) {
  Rng rng(12);
  GaussianSet a = random_set(rng, 3, 1);
  GaussianSet b = random_set(rng, 2, 3);
  Vec3 dir(0, 0, 1);
  Vec3 color_a0 = eval_sh_color(a.sh_degree, a.sh_ptr(0), dir);
  Vec3 color_b0 = eval_sh_color(b.sh_degree, b.sh_ptr(0), dir);
  a.append(b);
  EXPECT_EQ(a.sh_degree, 3);
  EXPECT_EQ(a.size(), 5u);
  // zero padding leaves evaluated colors unchanged
  EXPECT_LT((eval_sh_color(3, a.sh_ptr(0), dir) - color_a0).norm(), 1e-12);
  EXPECT_LT((eval_sh_color(3, a.sh_ptr(3), dir) - color_b0).norm(), 1e-12);
}

TEST(GaussianSetTest, SourceTagsPreservedThroughConcat) {
  Rng rng(13);
  GaussianSet a = random_set(rng, 2, 0);
  a.source = {static_cast<std::uint8_t>(BlobSource::kBackground),
              static_cast<std::uint8_t>(BlobSource::kBackground)};
  GaussianSet b = random_set(rng, 2, 0);
  b.source = {static_cast<std::uint8_t>(BlobSource::kRigid),
              static_cast<std::uint8_t>(BlobSource::kArticulated)};
  a.append(b);
  EXPECT_EQ(static_cast<BlobSource>(a.source[2]), BlobSource::kRigid);
  EXPECT_EQ(static_cast<BlobSource>(a.source[3]), BlobSource::kArticulated);
}

TEST(GaussianSetTest, FilterKeepsSelected) {
  Rng rng(14);
  GaussianSet set = random_set(rng, 5, 1);
  Vec3 kept_mean = set.mean[3];
  set.filter({false, true, false, true, false});
  EXPECT_EQ(set.size(), 2u);
  EXPECT_EQ(set.mean[1], kept_mean);
}

TEST(CameraTest, ProjectAndRay) {
  Camera cam;
  cam.width = 64;
  cam.height = 48;
  cam.fx = cam.fy = 50;
  cam.cx = 32;
  cam.cy = 24;
  cam.cam_from_world = SE3::identity();
  Vec3 p(0.5, -0.25, 5.0);
  Vec3 uvz = cam.project(p);
  EXPECT_NEAR(uvz[0], 32 + 50 * 0.1, 1e-12);
  EXPECT_NEAR(uvz[1], 24 - 50 * 0.05, 1e-12);
  EXPECT_NEAR(uvz[2], 5.0, 1e-12);
  Vec3 dir = cam.pixel_ray_dir(uvz[0], uvz[1]);
  EXPECT_LT((dir - p.normalized()).norm(), 1e-12);
}
