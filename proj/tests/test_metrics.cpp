#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "hybridgen/metrics.hpp"
#include "hybridgen/rng.hpp"

using namespace hg;
using std::numbers::pi;

namespace {

using Vec = std::array<double, 3>;

NormalMap normals(const std::vector<Vec>& v, std::vector<std::uint8_t> mask = {}) {
  Tensor t(Shape{1, v.size(), 3});
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int c = 0; c < 3; ++c) t[3 * i + c] = v[i][c];
  if (mask.empty()) mask.assign(v.size(), 1);
  return NormalMap(std::move(t), std::move(mask));
}

DepthMap depths(const std::vector<double>& v, std::vector<std::uint8_t> mask = {}) {
  Tensor t(Shape{1, v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  if (mask.empty()) mask.assign(v.size(), 1);
  return DepthMap(std::move(t), std::move(mask));
}

// Unit vector at `angle` from +z in the x-z plane.
Vec tilted(double angle) { return {std::sin(angle), 0.0, std::cos(angle)}; }

Vec random_unit(CounterRng& rng) {
  Vec v{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  for (double& x : v) x /= n;
  return v;
}

// Rotation matrix from a random unit quaternion.
std::array<Vec, 3> random_rotation(CounterRng& rng) {
  double q[4] = {rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (double& x : q) x /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {Vec{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
          Vec{2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
          Vec{2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
}

Vec rotate(const std::array<Vec, 3>& r, const Vec& v) {
  return {r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2], r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
          r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2]};
}

}  // namespace

TEST(AngleMetrics, IdenticalMapsAreZero) {
  const auto a = normals({{0, 0, 1}, {1, 0, 0}, {0, -1, 0}});
  EXPECT_EQ(mean_angle_error(a, a), 0.0);
  EXPECT_EQ(median_angle_error(a, a), 0.0);
  EXPECT_EQ(mse_angle(a, a), 0.0);
  EXPECT_EQ(threshold_pct(a, a, radians(11.25)), 100.0);
}

TEST(AngleMetrics, AntiparallelIsPi) {
  const auto a = normals({{0, 0, 1}, {0, 1, 0}});
  const auto b = normals({{0, 0, -1}, {0, -1, 0}});
  EXPECT_DOUBLE_EQ(mean_angle_error(a, b), pi);
  EXPECT_DOUBLE_EQ(mse_angle(a, b), pi * pi);
  EXPECT_EQ(threshold_pct(a, b, radians(30)), 0.0);
}

TEST(AngleMetrics, ThirtyAndNinetyDegrees) {
  const auto gt = normals({{0, 0, 1}, {0, 0, 1}});
  const auto pred = normals({tilted(pi / 6), tilted(pi / 2)});
  EXPECT_NEAR(mean_angle_error(pred, gt), pi / 3, 1e-12);
  EXPECT_NEAR(degrees(mean_angle_error(pred, gt)), 60.0, 1e-10);
  EXPECT_NEAR(median_angle_error(pred, gt), pi / 3, 1e-12);
  EXPECT_EQ(threshold_pct(pred, gt, radians(45)), 50.0);
  EXPECT_NEAR(mse_angle(pred, gt), (std::pow(pi / 6, 2) + std::pow(pi / 2, 2)) / 2, 1e-12);
}

TEST(AngleMetrics, MedianConventions) {
  const auto gt = normals({{0, 0, 1}, {0, 0, 1}, {0, 0, 1}, {0, 0, 1}});
  const auto pred = normals({tilted(0.1), tilted(0.4), tilted(0.2), tilted(1.0)});
  EXPECT_NEAR(median_angle_error(pred, gt), 0.3, 1e-12);
  const auto gt3 = normals({{0, 0, 1}, {0, 0, 1}, {0, 0, 1}});
  const auto pred3 = normals({tilted(0.9), tilted(0.1), tilted(0.5)});
  EXPECT_NEAR(median_angle_error(pred3, gt3), 0.5, 1e-12);
}

TEST(AngleMetrics, MaskedPixelsAreIgnored) {
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const auto gt = normals({{0, 0, 1}, {0, 0, 1}, {0, 0, 1}}, mask);
  const auto pred = normals({tilted(0.2), {0, 0, 0}, tilted(0.4)}, mask);
  EXPECT_NEAR(mean_angle_error(pred, gt), 0.3, 1e-12);
}

TEST(AngleMetrics, RotationInvariance) {
  CounterRng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> p, g, rp, rg;
    const auto r = random_rotation(rng);
    for (int i = 0; i < 50; ++i) {
      p.push_back(random_unit(rng));
      g.push_back(random_unit(rng));
      rp.push_back(rotate(r, p.back()));
      rg.push_back(rotate(r, g.back()));
    }
    const auto a = normal_report(normals(p), normals(g), {radians(11.25), radians(22.5), radians(30)});
    const auto b = normal_report(normals(rp), normals(rg), {radians(11.25), radians(22.5), radians(30)});
    EXPECT_NEAR(a.mae, b.mae, 1e-9);
    EXPECT_NEAR(a.median, b.median, 1e-9);
    EXPECT_NEAR(a.mse, b.mse, 1e-9);
    const auto pa = pixel_angles(normals(p), normals(g));
    const auto pb = pixel_angles(normals(rp), normals(rg));
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-9);
    for (std::size_t k = 0; k < a.pct.size(); ++k) EXPECT_EQ(a.pct[k], b.pct[k]);
  }
}

TEST(AngleMetrics, ThresholdIsMonotone) {
  CounterRng rng(3);
  std::vector<Vec> p, g;
  for (int i = 0; i < 200; ++i) {
    p.push_back(random_unit(rng));
    g.push_back(random_unit(rng));
  }
  const auto a = normals(p), b = normals(g);
  double previous = -1.0;
  for (double deg = 0; deg <= 180; deg += 2.5) {
    const double pct = threshold_pct(a, b, radians(deg));
    EXPECT_GE(pct, previous);
    previous = pct;
  }
  EXPECT_EQ(previous, 100.0);
}

TEST(AngleMetrics, NonnegativeAndZeroOnlyWhenEqual) {
  CounterRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> p, g;
    for (int i = 0; i < 10; ++i) {
      p.push_back(random_unit(rng));
      g.push_back(random_unit(rng));
    }
    const auto a = normals(p), b = normals(g);
    EXPECT_GT(mean_angle_error(a, b), 0.0);
    EXPECT_GT(mse_angle(a, b), 0.0);
    EXPECT_GE(median_angle_error(a, b), 0.0);
  }
}

TEST(AngleMetrics, Errors) {
  const auto a = normals({{0, 0, 1}, {0, 0, 1}}, {1, 1});
  const auto b = normals({{0, 0, 1}, {0, 0, 1}}, {1, 0});
  EXPECT_THROW(mean_angle_error(a, b), MetricError);
  const auto empty = normals({{0, 0, 1}}, {0});
  EXPECT_THROW(mean_angle_error(empty, empty), MetricError);
  EXPECT_THROW(normals({{0, 0, 2}}), MetricError);
  EXPECT_NO_THROW(normals({{0, 0, 1.00005}}));
  Tensor raw(Shape{1, 2, 3}, {0, 0, 3, 4, 0, 0});
  const auto fixed = NormalMap::from_prediction(raw, {1, 1});
  EXPECT_EQ(fixed.normals()[2], 1.0);
  EXPECT_EQ(fixed.normals()[3], 1.0);
  EXPECT_THROW(NormalMap::from_prediction(Tensor(Shape{1, 1, 3}), {1}), MetricError);
}

TEST(DepthMetrics, IdenticalMapsAreZero) {
  const auto d = depths({0.5, 1.0, 3.0});
  const auto r = depth_report(d, d);
  EXPECT_EQ(r.abs_rel, 0.0);
  EXPECT_EQ(r.sq_rel, 0.0);
  EXPECT_EQ(r.rmse, 0.0);
  EXPECT_EQ(r.rmse_log, 0.0);
  EXPECT_EQ(r.rmse_log_si, 0.0);
}

TEST(DepthMetrics, GlobalScaleLeavesScaleInvariantErrorExactlyZero) {
  CounterRng rng(5);
  std::vector<double> gt, pred;
  for (int i = 0; i < 37; ++i) {
    gt.push_back(rng.uniform(0.1, 10.0));
    pred.push_back(2.0 * gt.back());
  }
  EXPECT_EQ(rmse_log_scale_invariant(depths(pred), depths(gt)), 0.0);
  EXPECT_NEAR(rmse_log(depths(pred), depths(gt)), std::log(2.0), 1e-15);
}

TEST(DepthMetrics, TwoPixelExample) {
  const auto pred = depths({1, 2});
  const auto gt = depths({2, 2});
  EXPECT_DOUBLE_EQ(abs_rel(pred, gt), 0.25);
  EXPECT_DOUBLE_EQ(sq_rel(pred, gt), 0.25);
  EXPECT_DOUBLE_EQ(rmse_linear(pred, gt), std::sqrt(0.5));
  // log ratios (-log 2, 0): rmse_log = log2 / sqrt2, centred residuals +-log2/2
  EXPECT_NEAR(rmse_log(pred, gt), std::log(2.0) / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(rmse_log_scale_invariant(pred, gt), std::log(2.0) / 2, 1e-15);
}

TEST(DepthMetrics, NonnegativeAndPositiveWhenDifferent) {
  CounterRng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 8; ++i) {
      a.push_back(rng.uniform(0.5, 4.0));
      b.push_back(rng.uniform(0.5, 4.0));
    }
    const auto r = depth_report(depths(a), depths(b));
    EXPECT_GT(r.abs_rel, 0.0);
    EXPECT_GT(r.sq_rel, 0.0);
    EXPECT_GT(r.rmse, 0.0);
    EXPECT_GT(r.rmse_log, 0.0);
    EXPECT_GT(r.rmse_log_si, 0.0);
    EXPECT_LE(r.rmse_log_si, r.rmse_log + 1e-15);
  }
}

TEST(DepthMetrics, Errors) {
  EXPECT_THROW(depths({1.0, 0.0}), MetricError);
  EXPECT_THROW(depths({1.0, -2.0}), MetricError);
  EXPECT_NO_THROW(depths({1.0, -2.0}, {1, 0}));
  EXPECT_THROW(abs_rel(depths({1, 2}, {1, 1}), depths({1, 2}, {0, 1})), MetricError);
  EXPECT_THROW(rmse_log_scale_invariant(depths({1, 2}, {1, 1}), depths({1, 2}, {0, 1})), MetricError);
  EXPECT_THROW(rmse_linear(depths({1}, {0}), depths({1}, {0})), MetricError);
}
