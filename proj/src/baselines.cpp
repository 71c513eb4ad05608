#include "hybridgen/baselines.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "hybridgen/parallel.hpp"
#include "hybridgen/rng.hpp"

namespace hg {

Evaluation evaluate_beta(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                         const TrainConfig& train, const DecisionVector& beta, const std::vector<Seed>& seeds,
                         const ModelParams& w0, Counters* counters) {
  const auto samples = generate_dataset(pipeline, beta, seeds);
  Evaluation out;
  out.trained = train_steps(model, w0, samples, train);
  out.loss = validation_loss(model, out.trained, validation);
  if (counters) {
    counters->generator_calls += seeds.size();
    counters->sgd_steps += seeds.size();
    counters->validation_evals += 1;
  }
  return out;
}

std::vector<double> random_search_gradient(const ObjectiveFn& objective, const DecisionVector& beta,
                                           const std::vector<Direction>& directions) {
  // Same estimator as the Jacobian, on a map with one output.
  const Tensor row = estimate_jacobian(
      [&](const DecisionVector& point, std::size_t call) { return std::vector<double>{objective(point, call)}; }, beta,
      directions);
  return std::vector<double>(row.data().begin(), row.data().end());
}

std::vector<double> brs_update(OptimizerState& state, const ObjectiveFn& objective, const ProbeConfig& probes,
                               const RmsPropConfig& rmsprop) {
  const auto directions = sample_directions(state.beta.size(), probes);
  auto g = random_search_gradient(objective, state.beta, directions);
  state.beta = rmsprop_update(state.accumulator, state.beta, g, rmsprop);
  state.counters.rmsprop_updates += 1;
  return g;
}

void brs_step(OptimizerState& state, const Pipeline& pipeline, const ValidationSet& validation,
              const ModelConfig& model, const BrsConfig& config, const ModelParams& w0) {
  const std::size_t t = state.t;
  const std::size_t n = config.samples_per_step;
  try {
    const auto seeds = step_seeds(config.seed, t, n, config.fresh_seeds);
    const ModelParams& start = config.carry_weights ? state.weights : w0;
    ProbeConfig pc = step_probes(config.probes, config.seed, t, 0);
    pc.shared_probes = true;
    const DecisionVector used = state.beta;

    brs_update(state, [&](const DecisionVector& point, std::size_t) {
      return evaluate_beta(pipeline, validation, model, config.train, point, seeds, start).loss;
    }, pc, config.rmsprop);
    const std::uint64_t probe_evals = 2 * pc.probes;
    state.counters.generator_calls += probe_evals * n;
    state.counters.sgd_steps += probe_evals * n;
    state.counters.validation_evals += probe_evals;

    // Unperturbed evaluation: advances the snapshot and gives L_t.
    Evaluation centre = evaluate_beta(pipeline, validation, model, config.train, used, seeds, start, &state.counters);
    if (config.carry_weights) state.weights = std::move(centre.trained);
    state.t += 1;

    TrajectoryRecord rec;
    rec.t = t;
    rec.loss = centre.loss;
    rec.beta.assign(used.values().begin(), used.values().end());
    rec.generator_calls = state.counters.generator_calls;
    rec.sgd_steps = state.counters.sgd_steps;
    rec.wall_ms = state.elapsed_ms();
    rec.method = "brs";
    state.trajectory.push_back(std::move(rec));
  } catch (const OuterStepError&) {
    throw;
  } catch (const std::exception& e) {
    throw OuterStepError("outer step " + std::to_string(t) + ": " + e.what(), t);
  }
}

OptimizerState run_brs(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                       const BrsConfig& config, const DecisionVector& beta0, const ModelParams& w0) {
  if (config.samples_per_step == 0) throw std::invalid_argument("samples_per_step must be at least 1");
  if (config.steps == 0) throw std::invalid_argument("steps must be at least 1");
  OptimizerState state = OptimizerState::start(beta0, w0);
  for (std::size_t t = 0; t < config.steps; ++t) brs_step(state, pipeline, validation, model, config, w0);
  return state;
}

DecisionVector draw_beta(const DecisionVector& center, double spread, std::uint64_t seed) {
  CounterRng rng(hash_combine(seed, 'B'));
  const auto& bounds = center.layout().bounds();
  std::vector<double> v(center.values().begin(), center.values().end());
  for (std::size_t k = 0; k < v.size(); ++k) {
    double width = bounds[k].hi - bounds[k].lo;
    if (!std::isfinite(width)) width = 1.0;
    v[k] += spread * width * rng.normal(0.0, 1.0);
  }
  return center.with_values(clip_to_valid(center.layout(), v));
}

FixedBetaResult fixed_beta_run(const Pipeline& pipeline, const ValidationSet& validation, const ModelConfig& model,
                               const FixedBetaConfig& config, const DecisionVector& center, const ModelParams& w0) {
  if (config.draws == 0) throw std::invalid_argument("fixed_beta_run: draws must be at least 1");
  if (config.dataset_size == 0 || config.epochs == 0 || config.snapshot_every == 0)
    throw std::invalid_argument("fixed_beta_run: dataset_size, epochs and snapshot_every must be at least 1");
  FixedBetaResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  const auto started = std::chrono::steady_clock::now();
  std::size_t snapshot = 0;
  for (std::size_t k = 0; k < config.draws; ++k) {
    const std::uint64_t draw_seed = hash_combine(hash_combine(config.seed, 'F'), k);
    const DecisionVector beta = draw_beta(clip_to_valid(center), config.spread, draw_seed);
    result.betas.push_back(beta);
    const auto samples = generate_dataset(pipeline, beta, seed_range(draw_seed, 0, config.dataset_size));
    result.counters.generator_calls += samples.size();

    ModelParams params = w0;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      for (std::size_t first = 0; first < samples.size(); first += config.snapshot_every) {
        const std::size_t count = std::min(config.snapshot_every, samples.size() - first);
        params = train_steps(model, params, std::span<const Sample>(samples).subspan(first, count), config.train);
        steps += count;
        result.counters.sgd_steps += count;
        const double loss = validation_loss(model, params, validation);
        result.counters.validation_evals += 1;
        if (loss < result.best_loss) {
          result.best_loss = loss;
          result.best_draw = k;
          result.best_step = steps;
          result.best_beta = beta;
          result.best_weights = params;
        }
        TrajectoryRecord rec;
        rec.t = snapshot++;
        rec.loss = loss;
        rec.beta.assign(beta.values().begin(), beta.values().end());
        rec.generator_calls = result.counters.generator_calls;
        rec.sgd_steps = result.counters.sgd_steps;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        rec.method = "fixed_beta";
        result.trajectory.push_back(std::move(rec));
      }
    }
  }
  return result;
}

}  // namespace hg
