#include "hybridgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hg {

namespace {

constexpr double kUnitTolerance = 1e-4;

std::size_t map_pixels(const Tensor& t, std::size_t channels, const char* what) {
  const auto& s = t.shape();
  const bool ok = channels == 3 ? (s.size() == 3 && s[2] == 3) : (s.size() == 2 || (s.size() == 3 && s[2] == 1));
  if (!ok) throw MetricError(std::string(what) + ": unexpected shape " + shape_str(s));
  return s[0] * s[1];
}

void check_mask(std::size_t pixels, const std::vector<std::uint8_t>& mask, const char* what) {
  if (mask.size() != pixels)
    throw MetricError(std::string(what) + ": mask has " + std::to_string(mask.size()) + " entries for " +
                      std::to_string(pixels) + " pixels");
}

template <class Map>
std::size_t check_pair(const Map& pred, const Map& truth) {
  if (pred.mask() != truth.mask()) throw MetricError("prediction and ground-truth masks differ");
  const auto valid = static_cast<std::size_t>(std::count_if(pred.mask().begin(), pred.mask().end(),
                                                            [](std::uint8_t m) { return m != 0; }));
  if (valid == 0) throw MetricError("no valid pixels");
  return valid;
}

// Visit (pred, truth) depth pairs on valid pixels.
template <class Fn>
double depth_mean(const DepthMap& pred, const DepthMap& truth, Fn&& term) {
  const std::size_t valid = check_pair(pred, truth);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.mask().size(); ++i)
    if (pred.mask()[i]) sum += term(pred.depth()[i], truth.depth()[i]);
  return sum / static_cast<double>(valid);
}

}  // namespace

NormalMap::NormalMap(Tensor normals, std::vector<std::uint8_t> mask) : normals_(std::move(normals)), mask_(std::move(mask)) {
  const std::size_t pixels = map_pixels(normals_, 3, "normal map");
  check_mask(pixels, mask_, "normal map");
  for (std::size_t i = 0; i < pixels; ++i) {
    if (!mask_[i]) continue;
    const double* n = normals_.data().data() + 3 * i;
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!(std::abs(len - 1.0) <= kUnitTolerance))
      throw MetricError("normal map: pixel " + std::to_string(i) + " has length " + std::to_string(len));
  }
}

NormalMap NormalMap::from_prediction(Tensor raw, std::vector<std::uint8_t> mask) {
  const std::size_t pixels = map_pixels(raw, 3, "normal prediction");
  check_mask(pixels, mask, "normal prediction");
  for (std::size_t i = 0; i < pixels; ++i) {
    if (!mask[i]) continue;
    double* n = raw.data().data() + 3 * i;
    const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    if (!(len > 0.0) || !std::isfinite(len))
      throw MetricError("normal prediction: pixel " + std::to_string(i) + " cannot be normalized");
    for (int c = 0; c < 3; ++c) n[c] /= len;
  }
  return NormalMap(std::move(raw), std::move(mask));
}

DepthMap::DepthMap(Tensor depth, std::vector<std::uint8_t> mask) : depth_(std::move(depth)), mask_(std::move(mask)) {
  const std::size_t pixels = map_pixels(depth_, 1, "depth map");
  check_mask(pixels, mask_, "depth map");
  for (std::size_t i = 0; i < pixels; ++i)
    if (mask_[i] && !(depth_[i] > 0.0 && std::isfinite(depth_[i])))
      throw MetricError("depth map: pixel " + std::to_string(i) + " has nonpositive depth " + std::to_string(depth_[i]));
}

std::vector<double> pixel_angles(const NormalMap& pred, const NormalMap& truth) {
  const std::size_t valid = check_pair(pred, truth);
  if (pred.pixels() != truth.pixels()) throw MetricError("normal maps differ in size");
  std::vector<double> out;
  out.reserve(valid);
  const double* p = pred.normals().data().data();
  const double* t = truth.normals().data().data();
  for (std::size_t i = 0; i < pred.pixels(); ++i) {
    if (!pred.mask()[i]) continue;
    const double dot = p[3 * i] * t[3 * i] + p[3 * i + 1] * t[3 * i + 1] + p[3 * i + 2] * t[3 * i + 2];
    out.push_back(std::acos(std::clamp(dot, -1.0, 1.0)));
  }
  return out;
}

double mean_angle_error(const NormalMap& pred, const NormalMap& truth) {
  const auto a = pixel_angles(pred, truth);
  double s = 0.0;
  for (double v : a) s += v;
  return s / static_cast<double>(a.size());
}

double median_angle_error(const NormalMap& pred, const NormalMap& truth) {
  auto a = pixel_angles(pred, truth);
  std::sort(a.begin(), a.end());
  const std::size_t k = a.size() / 2;
  return a.size() % 2 ? a[k] : 0.5 * (a[k - 1] + a[k]);
}

double threshold_pct(const NormalMap& pred, const NormalMap& truth, double delta) {
  const auto a = pixel_angles(pred, truth);
  const auto hits = std::count_if(a.begin(), a.end(), [&](double v) { return v <= delta; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(a.size());
}

double mse_angle(const NormalMap& pred, const NormalMap& truth) {
  const auto a = pixel_angles(pred, truth);
  double s = 0.0;
  for (double v : a) s += v * v;
  return s / static_cast<double>(a.size());
}

double abs_rel(const DepthMap& pred, const DepthMap& truth) {
  return depth_mean(pred, truth, [](double d, double g) { return std::abs(d - g) / g; });
}

double sq_rel(const DepthMap& pred, const DepthMap& truth) {
  return depth_mean(pred, truth, [](double d, double g) { return (d - g) * (d - g) / g; });
}

double rmse_linear(const DepthMap& pred, const DepthMap& truth) {
  return std::sqrt(depth_mean(pred, truth, [](double d, double g) { return (d - g) * (d - g); }));
}

double rmse_log(const DepthMap& pred, const DepthMap& truth) {
  return std::sqrt(depth_mean(pred, truth, [](double d, double g) {
    const double r = std::log(d / g);
    return r * r;
  }));
}

double rmse_log_scale_invariant(const DepthMap& pred, const DepthMap& truth) {
  // Shifted by the first valid log-ratio so a uniform ratio gives exactly 0.
  check_pair(pred, truth);
  const auto& mask = pred.mask();
  const std::size_t first = static_cast<std::size_t>(std::find_if(mask.begin(), mask.end(), [](std::uint8_t m) {
                                                       return m != 0;
                                                     }) - mask.begin());
  const double shift = first < mask.size() ? std::log(pred.depth()[first] / truth.depth()[first]) : 0.0;
  const double mean_ratio = depth_mean(pred, truth, [&](double d, double g) { return std::log(d / g) - shift; });
  return std::sqrt(depth_mean(pred, truth, [&](double d, double g) {
    const double r = std::log(d / g) - shift - mean_ratio;
    return r * r;
  }));
}

NormalReport normal_report(const NormalMap& pred, const NormalMap& truth, const std::vector<double>& thresholds) {
  NormalReport r;
  r.mae = mean_angle_error(pred, truth);
  r.median = median_angle_error(pred, truth);
  r.mse = mse_angle(pred, truth);
  r.thresholds = thresholds;
  for (double t : thresholds) r.pct.push_back(threshold_pct(pred, truth, t));
  return r;
}

DepthReport depth_report(const DepthMap& pred, const DepthMap& truth) {
  return {abs_rel(pred, truth), sq_rel(pred, truth), rmse_linear(pred, truth), rmse_log(pred, truth),
          rmse_log_scale_invariant(pred, truth)};
}

}  // namespace hg
