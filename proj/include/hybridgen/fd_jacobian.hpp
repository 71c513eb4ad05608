#pragma once

// Jacobian of a black-box generator from central differences along random
// Gaussian directions:
//
//   J ~ (1/m) sum_j [f(b + d_j) - f(b - d_j)] / (2 |d_j|)  (x)  d_j / |d_j|
//
// Its expectation for a linear f(b) = A b is A / dim(b); the scale is left
// as is.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hybridgen/decision_vector.hpp"
#include "hybridgen/pipeline.hpp"
#include "hybridgen/tensor.hpp"

namespace hg {

struct ProbeConfig {
  std::size_t probes = 8;
  double sigma = 0.02;  // per-entry standard deviation of each direction
  std::uint64_t seed = 0;
  bool shared_probes = true;  // one direction set for every sample of a step
};

using Direction = std::vector<double>;

class ProbeError : public std::runtime_error {
 public:
  ProbeError(const std::string& what, std::size_t probe) : std::runtime_error(what), probe(probe) {}
  std::size_t probe;  // 1-based
};

// m directions with i.i.d. Normal(0, sigma) entries, determined by the seed.
std::vector<Direction> sample_directions(std::size_t dim, const ProbeConfig& config);

struct JacobianEstimate {
  Tensor matrix;  // [output size x dim]
  std::size_t probes = 0;
  double sigma = 0.0;
  Seed sample_seed;
  std::uint64_t probe_seed = 0;
};

// f(beta, call) for call = 2j (beta + d_j) and 2j + 1 (beta - d_j). Both
// points are clipped to the layout's bounds before the call; the outer
// product uses the unclipped direction.
using ProbeFn = std::function<std::vector<double>(const DecisionVector& beta, std::size_t call)>;
Tensor estimate_jacobian(const ProbeFn& f, const DecisionVector& beta, std::span<const Direction> directions);

// Evaluates the pipeline at every probe point with the same seed r_i.
JacobianEstimate estimate_jacobian(const Pipeline& pipeline, const DecisionVector& beta, const Seed& sample_seed,
                                   std::span<const Direction> directions, const ProbeConfig& config);

}  // namespace hg
