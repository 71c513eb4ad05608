#include "hybridgen/fd_jacobian.hpp"

#include <cmath>
#include <string>

#include "hybridgen/parallel.hpp"
#include "hybridgen/rng.hpp"

namespace hg {

std::vector<Direction> sample_directions(std::size_t dim, const ProbeConfig& config) {
  if (dim == 0) throw std::invalid_argument("sample_directions: dimension must be positive");
  if (config.probes == 0) throw std::invalid_argument("sample_directions: need at least one probe");
  if (!(config.sigma > 0.0)) throw std::invalid_argument("sample_directions: sigma must be positive");
  CounterRng rng(hash_combine(config.seed, 'D'));
  std::vector<Direction> out(config.probes, Direction(dim));
  for (auto& d : out)
    for (double& v : d) v = rng.normal(0.0, config.sigma);
  return out;
}

Tensor estimate_jacobian(const ProbeFn& f, const DecisionVector& beta, std::span<const Direction> directions) {
  const std::size_t m = directions.size(), dim = beta.size();
  if (m == 0) throw std::invalid_argument("estimate_jacobian: no directions");
  for (const auto& d : directions)
    if (d.size() != dim) throw ShapeError("estimate_jacobian: direction of length " + std::to_string(d.size()) +
                                          " for a decision vector of length " + std::to_string(dim));

  std::vector<std::vector<double>> outputs(2 * m);
  parallel_for(2 * m, [&](std::size_t call) {
    const Direction& d = directions[call / 2];
    const double sign = call % 2 == 0 ? 1.0 : -1.0;
    std::vector<double> point(dim);
    for (std::size_t k = 0; k < dim; ++k) point[k] = beta[k] + sign * d[k];
    outputs[call] = f(beta.with_values(clip_to_valid(beta.layout(), point)), call);
  });

  const std::size_t rows = outputs[0].size();
  Tensor jac(Shape{rows, dim});
  for (std::size_t j = 0; j < m; ++j) {
    const auto& plus = outputs[2 * j];
    const auto& minus = outputs[2 * j + 1];
    if (plus.size() != rows || minus.size() != rows)
      throw ProbeError("probe " + std::to_string(j + 1) + " returned an output of a different size", j + 1);
    const Direction& d = directions[j];
    double norm2 = 0.0;
    for (double v : d) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (!(norm > 0.0)) throw ProbeError("probe " + std::to_string(j + 1) + " has a zero direction", j + 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const double diff = (plus[r] - minus[r]) / (2.0 * norm);
      if (!std::isfinite(diff))
        throw ProbeError("probe " + std::to_string(j + 1) + " produced a non-finite output at entry " +
                             std::to_string(r),
                         j + 1);
      double* row = &jac.at(r, 0);
      for (std::size_t k = 0; k < dim; ++k) row[k] += diff * (d[k] / norm);
    }
  }
  for (double& v : jac.data()) v /= static_cast<double>(m);
  return jac;
}

JacobianEstimate estimate_jacobian(const Pipeline& pipeline, const DecisionVector& beta, const Seed& sample_seed,
                                   std::span<const Direction> directions, const ProbeConfig& config) {
  auto f = [&](const DecisionVector& point, std::size_t) { return flatten(pipeline.generate(point, sample_seed)); };
  JacobianEstimate e;
  e.matrix = estimate_jacobian(f, beta, directions);
  e.probes = directions.size();
  e.sigma = config.sigma;
  e.sample_seed = sample_seed;
  e.probe_seed = config.seed;
  return e;
}

}  // namespace hg
