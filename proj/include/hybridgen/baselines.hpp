#pragma once

// Black-box comparison methods built from the same generator, trainer and
// RMSprop pieces as the hybrid optimizer.

#include <functional>

#include "hybridgen/optimizer.hpp"

namespace hg {

// Generate from `seeds` at beta, train n steps from w0, validate.
struct Evaluation {
  double loss = 0.0;
  ModelParams trained;
};
Evaluation evaluate_beta(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                         const TrainConfig& train, const DecisionVector& beta, const std::vector<Seed>& seeds,
                         const ModelParams& w0, Counters* counters = nullptr);

struct BrsConfig {
  std::size_t samples_per_step = 4;  // n
  std::size_t steps = 100;           // T
  RmsPropConfig rmsprop;
  ProbeConfig probes;  // m and sigma
  TrainConfig train;
  bool carry_weights = true;  // probes train from the carried snapshot, else from w0
  bool fresh_seeds = true;
  std::uint64_t seed = 0;
};

// Scalar objective, call index as in ProbeFn.
using ObjectiveFn = std::function<double(const DecisionVector&, std::size_t call)>;

// (1/m) sum_j [L(b + d_j) - L(b - d_j)] / (2|d_j|) * d_j / |d_j|
std::vector<double> random_search_gradient(const ObjectiveFn& objective, const DecisionVector& beta,
                                           const std::vector<Direction>& directions);

// One BRS update on an arbitrary objective; shares rmsprop_update with the
// hybrid optimizer. Returns the gradient estimate.
std::vector<double> brs_update(OptimizerState& state, const ObjectiveFn& objective, const ProbeConfig& probes,
                               const RmsPropConfig& rmsprop);

// Full BRS outer step: 2m probe evaluations from the carried snapshot with
// this step's seeds, the update, then the snapshot advances on the
// unperturbed beta (n more generator calls and SGD steps).
void brs_step(OptimizerState& state, const Pipeline& pipeline, const ValidationSet& validation,
              const ModelConfig& model, const BrsConfig& config, const ModelParams& w0);

OptimizerState run_brs(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                       const BrsConfig& config, const DecisionVector& beta0, const ModelParams& w0);

struct FixedBetaConfig {
  std::size_t draws = 10;
  std::size_t dataset_size = 64;  // generator calls per draw
  std::size_t epochs = 1;
  std::size_t snapshot_every = 8;  // SGD steps between validations
  double spread = 0.1;  // per-entry std as a fraction of the bound width
  TrainConfig train;
  std::uint64_t seed = 0;
};

struct FixedBetaResult {
  double best_loss = 0.0;
  std::size_t best_draw = 0;
  std::size_t best_step = 0;  // SGD steps into that draw's training
  DecisionVector best_beta;
  ModelParams best_weights;
  std::vector<DecisionVector> betas;
  Counters counters;
  std::vector<TrajectoryRecord> trajectory;  // one record per snapshot
};

// Random beta around `center`: clip(center + spread * width * N(0, 1)).
DecisionVector draw_beta(const DecisionVector& center, double spread, std::uint64_t seed);

FixedBetaResult fixed_beta_run(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                               const FixedBetaConfig& config, const DecisionVector& center, const ModelParams& w0);

}  // namespace hg
