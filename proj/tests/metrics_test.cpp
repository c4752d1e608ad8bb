#include "splatgraph/metrics.hpp"

#include <gtest/gtest.h>

#include <vector>

#include "splatgraph/rng.hpp"

namespace splatgraph {
namespace {

TEST(PsnrTest, UniformOffsetClosedForm) {
  std::vector<double> gt(64 * 3, 0.4), pred(64 * 3, 0.5);
  EXPECT_NEAR(psnr(pred, gt), 20.0, 1e-9);  // mse 0.01 on unit range
}

TEST(PsnrTest, IdenticalImagesHitTheCap) {
  std::vector<double> img(100, 0.7);
  EXPECT_EQ(psnr(img, img), 100.0);
}

TEST(PsnrTest, MaskedVariantIgnoresOutsidePixels) {
  int np = 40;
  std::vector<double> gt(np * 3, 0.5), pred(np * 3, 0.5), mask(np, 0.0);
  for (int p = 0; p < np / 2; ++p) mask[p] = 1.0;
  // Corrupt only unmasked pixels: masked PSNR stays perfect.
  for (int p = np / 2; p < np; ++p) pred[p * 3] = 0.9;
  EXPECT_EQ(psnr_masked(pred, gt, mask), 100.0);
  // Corrupt one masked pixel by 0.3 in one channel.
  pred[0] = 0.8;
  double mse = 0.09 / (3.0 * (np / 2));
  EXPECT_NEAR(psnr_masked(pred, gt, mask), -10.0 * std::log10(mse), 1e-9);
  // Empty mask reports the cap rather than dividing by zero.
  std::vector<double> none(np, 0.0);
  EXPECT_EQ(psnr_masked(pred, gt, none), 100.0);
}

TEST(SsimMetricTest, SelfComparisonIsOne) {
  Rng rng(901);
  int w = 19, h = 11;
  std::vector<double> img(static_cast<std::size_t>(w) * h * 3);
  for (auto& v : img) v = rng.uniform();
  EXPECT_NEAR(ssim_metric(img, img, w, h), 1.0, 1e-12);
  std::vector<double> other = img;
  for (auto& v : other) v += 0.15 * rng.normal();
  EXPECT_LT(ssim_metric(other, img, w, h), 0.99);
}

TEST(DepthRmseTest, ClosedFormAndInvalidRefs) {
  std::vector<double> gt = {2.0, 3.0, 0.0, 4.0}, pred = {2.5, 3.5, 99.0, 4.5};
  EXPECT_NEAR(depth_rmse(pred, gt), 0.5, 1e-12);  // invalid ref pixel skipped
  std::vector<double> all_bad = {0.0, -1.0};
  EXPECT_EQ(depth_rmse(pred, gt), 0.5);
  EXPECT_EQ(depth_rmse(std::vector<double>{1.0, 2.0}, all_bad), 0.0);
}

TEST(ChamferTest, IdenticalSetsScoreZero) {
  Rng rng(902);
  std::vector<Vec3> pts(50);
  for (auto& p : pts) p = Vec3(rng.normal(), rng.normal(), rng.normal());
  EXPECT_EQ(chamfer_distance(pts, pts), 0.0);
}

TEST(ChamferTest, AsymmetricClosedForm) {
  std::vector<Vec3> a = {Vec3(0, 0, 0), Vec3(2, 0, 0)};
  std::vector<Vec3> b = {Vec3(0, 0, 0)};
  // a->b: (0 + 2)/2 = 1; b->a: 0.
  EXPECT_NEAR(chamfer_distance(a, b), 1.0, 1e-12);
  EXPECT_NEAR(chamfer_distance(b, a), 1.0, 1e-12);
}

TEST(ChamferTest, RejectsEmptySets) {
  std::vector<Vec3> pts = {Vec3(1, 2, 3)};
  EXPECT_THROW(chamfer_distance(pts, {}), std::invalid_argument);
  EXPECT_THROW(chamfer_distance({}, pts), std::invalid_argument);
}

}  // namespace
}  // namespace splatgraph
