#include "hybridgen/optimizer.hpp"

#include <cmath>
#include <string>

#include "hybridgen/rng.hpp"

namespace hg {

namespace {
constexpr std::uint64_t kDataStream = 'D';
constexpr std::uint64_t kProbeStream = 'P';
}  // namespace

DecisionVector rmsprop_update(std::vector<double>& accumulator, const DecisionVector& beta,
                              std::span<const double> gradient, const RmsPropConfig& config) {
  if (gradient.size() != beta.size())
    throw ShapeError("rmsprop_update: gradient of length " + std::to_string(gradient.size()) + " for beta of length " +
                     std::to_string(beta.size()));
  if (accumulator.empty()) accumulator.assign(beta.size(), 0.0);
  std::vector<double> next(beta.values().begin(), beta.values().end());
  for (std::size_t k = 0; k < next.size(); ++k) {
    const double g = gradient[k];
    if (!std::isfinite(g)) throw std::invalid_argument("rmsprop_update: gradient entry " + std::to_string(k) + " is not finite");
    accumulator[k] = config.decay * accumulator[k] + (1.0 - config.decay) * g * g;
    next[k] -= config.learning_rate * g / (std::sqrt(accumulator[k]) + config.epsilon);
  }
  return beta.with_values(clip_to_valid(beta.layout(), next));
}

std::vector<double> hybrid_gradient(std::span<const std::vector<double>> loss_grads, std::span<const Tensor> jacobians) {
  if (loss_grads.size() != jacobians.size())
    throw ShapeError("hybrid_gradient: " + std::to_string(loss_grads.size()) + " sample gradients but " +
                     std::to_string(jacobians.size()) + " Jacobians");
  if (jacobians.empty()) throw std::invalid_argument("hybrid_gradient: no samples");
  const std::size_t dim = jacobians[0].shape().at(1);
  std::vector<double> g(dim, 0.0);
  for (std::size_t i = 0; i < jacobians.size(); ++i) {
    const Tensor& jac = jacobians[i];
    const auto& dx = loss_grads[i];
    if (jac.rank() != 2 || jac.shape()[0] != dx.size() || jac.shape()[1] != dim)
      throw ShapeError("hybrid_gradient: sample " + std::to_string(i + 1) + " gradient has " +
                       std::to_string(dx.size()) + " entries, Jacobian is " + shape_str(jac.shape()));
    for (std::size_t r = 0; r < dx.size(); ++r) {
      if (dx[r] == 0.0) continue;
      const double* row = jac.data().data() + r * dim;
      for (std::size_t c = 0; c < dim; ++c) g[c] += dx[r] * row[c];
    }
  }
  return g;
}

OptimizerState OptimizerState::start(const DecisionVector& beta0, ModelParams w0) {
  OptimizerState s;
  s.beta = clip_to_valid(beta0);
  s.weights = std::move(w0);
  s.accumulator.assign(beta0.size(), 0.0);
  return s;
}

double OptimizerState::elapsed_ms() const {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
}

std::vector<Seed> step_seeds(std::uint64_t master, std::size_t t, std::size_t n, bool fresh) {
  return seed_range(hash_combine(hash_combine(master, kDataStream), fresh ? t : 0), 0, n);
}

ProbeConfig step_probes(const ProbeConfig& base, std::uint64_t master, std::size_t t, std::size_t sample) {
  ProbeConfig pc = base;
  pc.seed = hash_combine(hash_combine(hash_combine(master, kProbeStream), base.seed), t);
  if (!base.shared_probes) pc.seed = hash_combine(pc.seed, sample + 1);
  return pc;
}

void outer_step(OptimizerState& state, const Pipeline& pipeline, const ValidationSet& validation,
                const ModelConfig& model, const HybridConfig& config, StepDetail* detail) {
  const std::size_t t = state.t;
  const std::size_t n = config.samples_per_step;
  try {
    const auto seeds = step_seeds(config.seed, t, n, config.fresh_seeds);
    const auto samples = generate_dataset(pipeline, state.beta, seeds);
    state.counters.generator_calls += n;

    TrainTrace trace = unrolled_train(model, state.weights, samples, config.train);
    state.counters.sgd_steps += n;
    const double loss = trace.attach_eval_loss(validation);
    state.counters.validation_evals += 1;
    InputGradients grads = backprop_to_inputs(trace);
    state.counters.backward_passes += 1;

    std::vector<Tensor> jacobians;
    jacobians.reserve(n);
    std::vector<Direction> shared;
    if (config.jacobian == JacobianMode::Estimated && config.probes.shared_probes)
      shared = sample_directions(state.beta.size(), step_probes(config.probes, config.seed, t, 0));
    for (std::size_t i = 0; i < n; ++i) {
      if (config.jacobian == JacobianMode::Analytic) {
        jacobians.push_back(pipeline.analytic_jacobian(state.beta, seeds[i]));
        continue;
      }
      const ProbeConfig pc = step_probes(config.probes, config.seed, t, i);
      const auto own = config.probes.shared_probes ? std::vector<Direction>{} : sample_directions(state.beta.size(), pc);
      const auto& dirs = config.probes.shared_probes ? shared : own;
      jacobians.push_back(estimate_jacobian(pipeline, state.beta, seeds[i], dirs, pc).matrix);
      state.counters.generator_calls += 2 * dirs.size();
    }

    const auto gradient = hybrid_gradient(grads.samples, jacobians);
    TrajectoryRecord rec;
    rec.t = t;
    rec.loss = loss;
    rec.beta.assign(state.beta.values().begin(), state.beta.values().end());
    rec.method = "hybrid";

    state.beta = rmsprop_update(state.accumulator, state.beta, gradient, config.rmsprop);
    state.counters.rmsprop_updates += 1;
    state.weights = trace.final_params();
    state.t += 1;

    rec.generator_calls = state.counters.generator_calls;
    rec.sgd_steps = state.counters.sgd_steps;
    rec.wall_ms = state.elapsed_ms();
    state.trajectory.push_back(std::move(rec));
    if (detail) {
      detail->loss = loss;
      detail->gradient = gradient;
      detail->loss_grads = std::move(grads.samples);
      detail->jacobians = std::move(jacobians);
    }
  } catch (const OuterStepError&) {
    throw;
  } catch (const std::exception& e) {
    throw OuterStepError("outer step " + std::to_string(t) + ": " + e.what(), t);
  }
}

OptimizerState run_hybrid(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                          const HybridConfig& config, const DecisionVector& beta0, const ModelParams& w0) {
  if (config.samples_per_step == 0) throw std::invalid_argument("samples_per_step must be at least 1");
  if (config.steps == 0) throw std::invalid_argument("steps must be at least 1");
  OptimizerState state = OptimizerState::start(beta0, w0);
  for (std::size_t t = 0; t < config.steps; ++t) outer_step(state, pipeline, validation, model, config);
  return state;
}

double loss_of_beta(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                    const TrainConfig& train, const DecisionVector& beta, const std::vector<Seed>& seeds,
                    const ModelParams& w0) {
  const auto samples = generate_dataset(pipeline, beta, seeds);
  return validation_loss(model, train_steps(model, w0, samples, train), validation);
}

}  // namespace hg
