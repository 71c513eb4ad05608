#pragma once

// Outer loop over the decision vector: generate, unroll-train, combine
// dL/dX with dX/dbeta, RMSprop on beta, keep the trained weights.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hybridgen/decision_vector.hpp"
#include "hybridgen/fd_jacobian.hpp"
#include "hybridgen/pipeline.hpp"
#include "hybridgen/trainer.hpp"

namespace hg {

struct RmsPropConfig {
  double learning_rate = 0.01;  // gamma
  double decay = 0.99;          // rho
  double epsilon = 1e-8;
};

// accumulator <- rho * accumulator + (1 - rho) g^2
// beta <- clip(beta - gamma * g / (sqrt(accumulator) + eps))
DecisionVector rmsprop_update(std::vector<double>& accumulator, const DecisionVector& beta,
                              std::span<const double> gradient, const RmsPropConfig& config);

// sum_i dL/dX_i . dX_i/dbeta
std::vector<double> hybrid_gradient(std::span<const std::vector<double>> loss_grads, std::span<const Tensor> jacobians);

// Exact operation counts. generator_calls counts f(beta, r) evaluations,
// sgd_steps inner SGD updates, backward_passes reverse sweeps through an
// unrolled trace, validation_evals forward passes over the validation set.
struct Counters {
  std::uint64_t generator_calls = 0;
  std::uint64_t sgd_steps = 0;
  std::uint64_t backward_passes = 0;
  std::uint64_t validation_evals = 0;
  std::uint64_t rmsprop_updates = 0;
  bool operator==(const Counters&) const = default;
};

struct TrajectoryRecord {
  std::size_t t = 0;
  double loss = 0.0;  // validation loss of the weights at the end of step t
  std::vector<double> beta;  // beta used to generate step t's data
  std::uint64_t generator_calls = 0;  // cumulative
  std::uint64_t sgd_steps = 0;        // cumulative
  double wall_ms = 0.0;               // cumulative since the run started
  std::string method;
  bool operator==(const TrajectoryRecord&) const = default;
};

enum class JacobianMode { Estimated, Analytic };

struct HybridConfig {
  std::size_t samples_per_step = 4;  // n
  std::size_t steps = 100;           // T
  RmsPropConfig rmsprop;
  ProbeConfig probes;
  TrainConfig train;
  JacobianMode jacobian = JacobianMode::Estimated;
  bool fresh_seeds = true;  // new r^(i) every outer step
  std::uint64_t seed = 0;
};

struct OptimizerState {
  std::size_t t = 0;
  DecisionVector beta;
  ModelParams weights;  // w_t^(1)
  std::vector<double> accumulator;
  Counters counters;
  std::vector<TrajectoryRecord> trajectory;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  static OptimizerState start(const DecisionVector& beta0, ModelParams w0);
  double elapsed_ms() const;
};

// Deterministic randomness for outer step t.
std::vector<Seed> step_seeds(std::uint64_t master, std::size_t t, std::size_t n, bool fresh);
ProbeConfig step_probes(const ProbeConfig& base, std::uint64_t master, std::size_t t, std::size_t sample);

struct StepDetail {
  double loss = 0.0;
  std::vector<double> gradient;
  std::vector<std::vector<double>> loss_grads;
  std::vector<Tensor> jacobians;
};

class OuterStepError : public std::runtime_error {
 public:
  OuterStepError(const std::string& what, std::size_t t) : std::runtime_error(what), t(t) {}
  std::size_t t;
};

// One outer step. Optionally returns the intermediate quantities.
void outer_step(OptimizerState& state, const Pipeline& pipeline, const ValidationSet& validation,
                const ModelConfig& model, const HybridConfig& config, StepDetail* detail = nullptr);

OptimizerState run_hybrid(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                          const HybridConfig& config, const DecisionVector& beta0, const ModelParams& w0);

// L(beta) as a deterministic function: generate from `seeds`, train from
// `w0`, evaluate. The end-to-end map the hybrid gradient approximates.
double loss_of_beta(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                    const TrainConfig& train, const DecisionVector& beta, const std::vector<Seed>& seeds,
                    const ModelParams& w0);

}  // namespace hg
