#include "splatgraph/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace splatgraph {
namespace {

TEST(ExpLrTest, EndpointsAndGeometricMidpoint) {
  EXPECT_NEAR(exp_lr(1.6e-4, 1.6e-6, 0, 30000), 1.6e-4, 1e-18);
  EXPECT_NEAR(exp_lr(1.6e-4, 1.6e-6, 30000, 30000), 1.6e-6, 1e-18);
  EXPECT_NEAR(exp_lr(1.6e-4, 1.6e-6, 15000, 30000),
              std::sqrt(1.6e-4 * 1.6e-6), 1e-15);
  EXPECT_NEAR(exp_lr(1e-3, 1e-5, 99999, 30000), 1e-5, 1e-18);  // holds after end
  EXPECT_THROW(exp_lr(0.0, 1e-5, 0, 10), std::invalid_argument);
}

TEST(AdamTest, FirstStepClosedForm) {
  AdamArray adam;
  std::vector<double> p = {1.0, -2.0}, g = {0.3, -0.7};
  adam.step(p.data(), g.data(), 2, 0.01);
  // After bias correction the first step is lr * g / (|g| + eps).
  for (int i = 0; i < 2; ++i) {
    double expect = (i == 0 ? 1.0 : -2.0) - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(p[i], expect, 1e-12);
  }
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(AdamTest, SecondStepUsesMoments) {
  AdamArray adam;
  double p = 0.0, g = 1.0;
  adam.step(&p, &g, 1, 0.1);
  double p1 = p;
  adam.step(&p, &g, 1, 0.1);
  // m = (1-b1)(b1 + 1) g, v likewise; with constant gradient the update stays
  // about lr in magnitude.
  double m = 0.9 * 0.1 * g + 0.1 * g;
  double v = 0.999 * 0.001 * g * g + 0.001 * g * g;
  double mhat = m / (1.0 - 0.9 * 0.9);
  double vhat = v / (1.0 - 0.999 * 0.999);
  EXPECT_NEAR(p, p1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8), 1e-12);
}

TEST(AdamTest, ConvergesOnQuadratic) {
  AdamArray adam;
  double x = 10.0;
  for (int i = 0; i < 4000; ++i) {
    double g = 2.0 * (x - 3.0);
    adam.step(&x, &g, 1, 0.01);
  }
  EXPECT_NEAR(x, 3.0, 1e-3);
}

TEST(AdamTest, DeterministicAcrossInstances) {
  AdamArray a, b;
  std::vector<double> pa = {0.5, -0.25, 2.0}, pb = pa;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> g = {0.1 * i, -0.05, 0.3 / (i + 1.0)};
    a.step(pa.data(), g.data(), 3, 1e-3);
    b.step(pb.data(), g.data(), 3, 1e-3);
  }
  for (int i = 0; i < 3; ++i) EXPECT_EQ(pa[i], pb[i]);
}

TEST(AdamTest, AppendAndFilterFollowDensification) {
  AdamArray adam;
  std::vector<double> p = {1.0, 2.0, 3.0, 4.0};  // two blocks of stride 2
  std::vector<double> g = {0.5, 0.5, -0.5, -0.5};
  adam.step(p.data(), g.data(), 4, 0.01);
  std::vector<double> m_before = adam.m();

  adam.append_zeros(2);  // a cloned blob arrives with fresh moments
  EXPECT_EQ(adam.size(), 6u);
  EXPECT_EQ(adam.m()[4], 0.0);
  EXPECT_EQ(adam.v()[5], 0.0);

  // Prune the first block: survivors keep their moments, order preserved.
  std::vector<bool> keep = {false, true, true};
  adam.filter(keep, 2);
  EXPECT_EQ(adam.size(), 4u);
  EXPECT_EQ(adam.m()[0], m_before[2]);
  EXPECT_EQ(adam.m()[1], m_before[3]);
  EXPECT_EQ(adam.m()[2], 0.0);

  EXPECT_THROW(adam.filter({true}, 3), std::invalid_argument);
}

TEST(AdamTest, SizeMismatchThrows) {
  AdamArray adam;
  std::vector<double> p = {1.0, 2.0}, g = {0.1, 0.1};
  adam.step(p.data(), g.data(), 2, 0.01);
  double lone_p = 0.0, lone_g = 1.0;
  EXPECT_THROW(adam.step(&lone_p, &lone_g, 1, 0.01), std::invalid_argument);
}

TEST(AdamTest, RestoreReproducesTrajectory) {
  AdamArray a;
  std::vector<double> p = {0.3, -0.9};
  std::vector<double> g = {0.2, 0.4};
  a.step(p.data(), g.data(), 2, 0.05);
  a.step(p.data(), g.data(), 2, 0.05);

  AdamArray b;
  b.restore(a.m(), a.v(), a.step_count());
  std::vector<double> pa = p, pb = p;
  a.step(pa.data(), g.data(), 2, 0.05);
  b.step(pb.data(), g.data(), 2, 0.05);
  EXPECT_EQ(pa[0], pb[0]);
  EXPECT_EQ(pa[1], pb[1]);
  EXPECT_THROW(b.restore({1.0}, {1.0, 2.0}, 1), std::invalid_argument);

  AdamArray zeroed;
  zeroed.restore(a.m(), a.v(), a.step_count());
  zeroed.zero_state();
  for (double v : zeroed.m()) EXPECT_EQ(v, 0.0);
  for (double v : zeroed.v()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace splatgraph
