#include "splatgraph/deformation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "splatgraph/rng.hpp"

namespace splatgraph {
namespace {

GaussianSet small_set(Rng& rng, int n) {
  GaussianSet set;
  set.sh_degree = 0;
  for (int i = 0; i < n; ++i) {
    Gaussian g;
    g.mean = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    g.rot = quat_normalize(Vec4(1, rng.normal() * 0.2, rng.normal() * 0.2,
                                rng.normal() * 0.2));
    g.log_scale = Vec3::Constant(-3.0);
    g.opacity_raw = 0.3;
    g.sh.assign(3, 0.2);
    g.source = BlobSource::kDeformable;
    set.push_back(g);
  }
  return set;
}

TEST(DeformationTest, PositionalEncodingClosedForm) {
  double x[2] = {0.25, -0.5};
  std::vector<double> out(2 * 2 * 3);
  positional_encode(x, 2, 3, out.data());
  int j = 0;
  for (int d = 0; d < 2; ++d)
    for (int b = 0; b < 3; ++b) {
      double arg = std::pow(2.0, b) * M_PI * x[d];
      EXPECT_NEAR(out[j++], std::sin(arg), 1e-15);
      EXPECT_NEAR(out[j++], std::cos(arg), 1e-15);
    }
}

TEST(DeformationTest, InputColumnLayout) {
  Vec3 mean(0.1, -0.3, 0.7);
  Eigen::VectorXd embed(kDeformEmbedDim);
  for (int i = 0; i < kDeformEmbedDim; ++i) embed[i] = 10.0 + i;
  double t = 0.4;
  std::vector<double> col(kDeformInDim);
  deform_input_column(mean, embed, t, col.data());

  EXPECT_NEAR(col[0], std::sin(M_PI * 0.1), 1e-15);
  EXPECT_NEAR(col[1], std::cos(M_PI * 0.1), 1e-15);
  int off = 3 * 2 * kDeformMeanBands;
  for (int i = 0; i < kDeformEmbedDim; ++i) EXPECT_EQ(col[off + i], 10.0 + i);
  off += kDeformEmbedDim;
  EXPECT_NEAR(col[off], std::sin(M_PI * t), 1e-15);
  EXPECT_NEAR(col[off + 1], std::cos(M_PI * t), 1e-15);
  EXPECT_EQ(off + 2 * kDeformTimeBands, kDeformInDim);
}

TEST(DeformationTest, NormBoxMapsIntoUnitRange) {
  NormBox box;
  box.center = Vec3(2, -1, 0);
  box.half = Vec3(4, 2, 1);
  EXPECT_NEAR((box.normalize(Vec3(2, -1, 0)) - Vec3::Zero()).norm(), 0.0, 1e-15);
  EXPECT_NEAR((box.normalize(Vec3(6, 1, 1)) - Vec3::Ones()).norm(), 0.0, 1e-15);
  EXPECT_NEAR((box.normalize(Vec3(-2, -3, -1)) + Vec3::Ones()).norm(), 0.0, 1e-15);

  NormBox flat;
  flat.half = Vec3(1, 0, 1);  // degenerate axis clamps instead of dividing by 0
  Vec3 n = flat.normalize(Vec3(0, 0.5, 0));
  EXPECT_TRUE(std::isfinite(n[1]));
}

TEST(DeformationTest, FreshNetIsExactlyTheIdentity) {
  Rng rng(601);
  DeformationNet net;
  net.init_weights(rng);
  GaussianSet set = small_set(rng, 8);
  Eigen::VectorXd embed = Eigen::VectorXd::Zero(kDeformEmbedDim);
  for (int i = 0; i < kDeformEmbedDim; ++i) embed[i] = rng.normal() * 0.1;

  DeformDeltas d = deform_query(net, set, embed, 0.37);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(d.d_mean[i].norm(), 0.0);
    EXPECT_EQ(d.d_rot[i].norm(), 0.0);
    EXPECT_EQ(d.d_log_scale[i].norm(), 0.0);
  }
  GaussianSet out = apply_deltas(set, d);
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(out.mean[i], set.mean[i]);
    EXPECT_EQ(out.rot[i], set.rot[i]);
    EXPECT_EQ(out.log_scale[i], set.log_scale[i]);
  }
}

TEST(DeformationTest, ConstantHeadBiasShiftsAllBlobs) {
  Rng rng(602);
  DeformationNet net;
  net.init_weights(rng);
  Eigen::VectorXd shift(kDeformOutDim);
  for (int i = 0; i < kDeformOutDim; ++i) shift[i] = 0.1 * (i + 1);
  net.bias(DeformationNet::kLayers - 1) = shift;

  GaussianSet set = small_set(rng, 5);
  Eigen::VectorXd embed = Eigen::VectorXd::Zero(kDeformEmbedDim);
  GaussianSet out = apply_deltas(set, deform_query(net, set, embed, 0.2));
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_NEAR((out.mean[i] - set.mean[i] - shift.segment<3>(0)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((out.rot[i] - set.rot[i] - shift.segment<4>(3)).norm(), 0.0, 1e-15);
    EXPECT_NEAR((out.log_scale[i] - set.log_scale[i] - shift.segment<3>(7)).norm(),
                0.0, 1e-15);
  }
}

TEST(DeformationTest, BatchedForwardMatchesPerColumn) {
  Rng rng(603);
  DeformationNet net;
  net.init_weights(rng);
  // Give the head real weights so outputs are nontrivial.
  for (Eigen::Index j = 0; j < net.weight(4).size(); ++j)
    net.weight(4).data()[j] = rng.normal() * 0.05;

  Eigen::MatrixXd input(kDeformInDim, 6);
  for (Eigen::Index j = 0; j < input.size(); ++j)
    input.data()[j] = rng.uniform(-1, 1);
  Eigen::MatrixXd batched = net.forward(input);
  for (int c = 0; c < 6; ++c) {
    Eigen::MatrixXd single = net.forward(input.col(c));
    EXPECT_NEAR((batched.col(c) - single.col(0)).norm(), 0.0, 1e-13);
  }
}

TEST(DeformationTest, RejectsBadInputsAndWeights) {
  Rng rng(604);
  DeformationNet net;
  net.init_weights(rng);
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(5, 2)), std::invalid_argument);

  Eigen::VectorXd short_embed = Eigen::VectorXd::Zero(4);
  EXPECT_THROW(deform_query(net, {Vec3::Zero()}, short_embed, 0.0),
               std::invalid_argument);

  net.weight(1)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(net.finite());
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(kDeformInDim, 1)),
               std::invalid_argument);
}

TEST(DeformationTest, NetBackwardMatchesFiniteDifferences) {
  Rng rng(605);
  DeformationNet net;
  net.init_weights(rng);
  for (Eigen::Index j = 0; j < net.weight(4).size(); ++j)
    net.weight(4).data()[j] = rng.normal() * 0.05;

  int n = 3;
  Eigen::MatrixXd input(kDeformInDim, n);
  for (Eigen::Index j = 0; j < input.size(); ++j) input.data()[j] = rng.uniform(-1, 1);
  Eigen::MatrixXd wout(kDeformOutDim, n);
  for (Eigen::Index j = 0; j < wout.size(); ++j) wout.data()[j] = rng.normal();

  auto loss_of = [&](const DeformationNet& m, const Eigen::MatrixXd& in) {
    return (m.forward(in).array() * wout.array()).sum();
  };

  DeformationNet::Cache cache;
  net.forward(input, &cache);
  DeformationNet::Grads grads(net);
  Eigen::MatrixXd d_in = net.backward(cache, wout, grads);

  const double h = 1e-6;
  // Inputs: every coordinate.
  for (Eigen::Index j = 0; j < input.size(); ++j) {
    Eigen::MatrixXd plus = input, minus = input;
    plus.data()[j] += h;
    minus.data()[j] -= h;
    double fd = (loss_of(net, plus) - loss_of(net, minus)) / (2 * h);
    EXPECT_NEAR(d_in.data()[j], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
  // Weights and biases: a deterministic sample per layer.
  for (int l = 0; l < DeformationNet::kLayers; ++l) {
    for (int s = 0; s < 40; ++s) {
      Eigen::Index j = rng.uniform_int(static_cast<std::size_t>(net.weight(l).size()));
      DeformationNet plus = net, minus = net;
      plus.weight(l).data()[j] += h;
      minus.weight(l).data()[j] -= h;
      double fd = (loss_of(plus, input) - loss_of(minus, input)) / (2 * h);
      EXPECT_NEAR(grads.d_w[l].data()[j], fd, 1e-6 * std::max(1.0, std::abs(fd)))
          << "layer " << l;
    }
    for (int s = 0; s < 10; ++s) {
      Eigen::Index j = rng.uniform_int(static_cast<std::size_t>(net.bias(l).size()));
      DeformationNet plus = net, minus = net;
      plus.bias(l)[j] += h;
      minus.bias(l)[j] -= h;
      double fd = (loss_of(plus, input) - loss_of(minus, input)) / (2 * h);
      EXPECT_NEAR(grads.d_b[l][j], fd, 1e-6 * std::max(1.0, std::abs(fd)))
          << "layer " << l;
    }
  }
}

TEST(DeformationTest, QueryBackwardTracksEmbeddingOnly) {
  Rng rng(606);
  DeformationNet net;
  net.init_weights(rng);
  for (Eigen::Index j = 0; j < net.weight(4).size(); ++j)
    net.weight(4).data()[j] = rng.normal() * 0.05;

  std::vector<Vec3> means;
  for (int i = 0; i < 6; ++i)
    means.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)));
  Eigen::VectorXd embed(kDeformEmbedDim);
  for (int i = 0; i < kDeformEmbedDim; ++i) embed[i] = rng.normal() * 0.3;
  double t_norm = 0.6;

  std::vector<Vec3> wm(6), ws(6);
  std::vector<Vec4> wq(6);
  for (auto& v : wm) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  for (auto& v : ws) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  for (auto& v : wq) v = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());

  auto loss_of = [&](const Eigen::VectorXd& e) {
    DeformDeltas d = deform_query(net, means, e, t_norm);
    double loss = 0;
    for (int i = 0; i < 6; ++i)
      loss += wm[i].dot(d.d_mean[i]) + wq[i].dot(d.d_rot[i]) +
              ws[i].dot(d.d_log_scale[i]);
    return loss;
  };

  DeformationNet::Cache cache;
  deform_query(net, means, embed, t_norm, &cache);
  DeformationNet::Grads grads(net);
  Eigen::VectorXd d_embed = Eigen::VectorXd::Zero(kDeformEmbedDim);
  deform_backward(net, cache, wm, wq, ws, grads, d_embed);

  const double h = 1e-6;
  for (int j = 0; j < kDeformEmbedDim; ++j) {
    Eigen::VectorXd plus = embed, minus = embed;
    plus[j] += h;
    minus[j] -= h;
    double fd = (loss_of(plus) - loss_of(minus)) / (2 * h);
    EXPECT_NEAR(d_embed[j], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(DeformationTest, ApplyDeltasValidatesCount) {
  Rng rng(607);
  GaussianSet set = small_set(rng, 4);
  DeformDeltas d;
  d.d_mean.resize(3);
  d.d_rot.resize(3);
  d.d_log_scale.resize(3);
  EXPECT_THROW(apply_deltas(set, d), std::invalid_argument);
}

}  // namespace
}  // namespace splatgraph
