#pragma once

// Evaluation metrics for normal and depth maps over masked pixels. Angles are
// in radians; convert at the reporting layer.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "hybridgen/tensor.hpp"

namespace hg {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// H x W x 3 unit normals plus a validity mask (nonzero = valid).
class NormalMap {
 public:
  NormalMap(Tensor normals, std::vector<std::uint8_t> mask);
  // Normalizes every valid pixel first (network outputs are not unit length).
  static NormalMap from_prediction(Tensor raw, std::vector<std::uint8_t> mask);

  const Tensor& normals() const { return normals_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  std::size_t pixels() const { return mask_.size(); }

 private:
  Tensor normals_;
  std::vector<std::uint8_t> mask_;
};

// H x W positive depths plus a validity mask.
class DepthMap {
 public:
  DepthMap(Tensor depth, std::vector<std::uint8_t> mask);

  const Tensor& depth() const { return depth_; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }

 private:
  Tensor depth_;
  std::vector<std::uint8_t> mask_;
};

// arccos of the clamped dot product at every valid pixel, in pixel order.
std::vector<double> pixel_angles(const NormalMap& pred, const NormalMap& truth);

double mean_angle_error(const NormalMap& pred, const NormalMap& truth);
// Even counts average the two central values.
double median_angle_error(const NormalMap& pred, const NormalMap& truth);
// Percentage (0..100) of valid pixels with angle <= delta.
double threshold_pct(const NormalMap& pred, const NormalMap& truth, double delta);
double mse_angle(const NormalMap& pred, const NormalMap& truth);

double abs_rel(const DepthMap& pred, const DepthMap& truth);
double sq_rel(const DepthMap& pred, const DepthMap& truth);
double rmse_linear(const DepthMap& pred, const DepthMap& truth);
double rmse_log(const DepthMap& pred, const DepthMap& truth);
// sqrt(mean_i (r_i - mean_j r_j)^2) with r = log d - log d*
double rmse_log_scale_invariant(const DepthMap& pred, const DepthMap& truth);

struct NormalReport {
  double mae = 0, median = 0, mse = 0;
  std::vector<double> thresholds;  // radians
  std::vector<double> pct;
};
NormalReport normal_report(const NormalMap& pred, const NormalMap& truth, const std::vector<double>& thresholds);

struct DepthReport {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, rmse_log_si = 0;
};
DepthReport depth_report(const DepthMap& pred, const DepthMap& truth);

constexpr double degrees(double rad) { return rad * 57.29577951308232; }
constexpr double radians(double deg) { return deg / 57.29577951308232; }

}  // namespace hg
