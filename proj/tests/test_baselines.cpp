#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hybridgen/baselines.hpp"
#include "toy_problem.hpp"

using namespace hg;
using hg::testing::median;
using hg::testing::toy_hybrid_config;
using hg::testing::toy_problem;

namespace {

DecisionVector scalar_beta(double v) {
  static const auto layout = std::make_shared<const Layout>(
      "scalar", std::vector<Block>{{"x", 0, 1, BlockKind::Scalar}}, std::vector<Bound>{{-10.0, 10.0}});
  return DecisionVector(layout, {v});
}

BrsConfig toy_brs_config(std::uint64_t seed, std::size_t steps) {
  const auto hc = toy_hybrid_config(seed, steps);
  BrsConfig bc;
  bc.samples_per_step = hc.samples_per_step;
  bc.steps = steps;
  bc.rmsprop = hc.rmsprop;
  bc.probes = hc.probes;
  bc.train = hc.train;
  bc.seed = seed;
  return bc;
}

}  // namespace

TEST(EvaluateBeta, DeterministicAndCounted) {
  auto p = toy_problem(4, 3);
  const auto w0 = init_model(p.model, 1);
  const auto seeds = seed_range(5, 0, 3);
  Counters counters;
  const auto a = evaluate_beta(p.pipeline, p.validation, p.model, {0.1, 1}, p.start, seeds, w0, &counters);
  const auto b = evaluate_beta(p.pipeline, p.validation, p.model, {0.1, 1}, p.start, seeds, w0);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.trained, b.trained);
  EXPECT_EQ(counters.generator_calls, 3u);
  EXPECT_EQ(counters.sgd_steps, 3u);
}

TEST(EvaluateBeta, ZeroLearningRateGivesUntrainedLoss) {
  auto p = toy_problem(4, 3);
  const auto w0 = init_model(p.model, 1);
  const auto e = evaluate_beta(p.pipeline, p.validation, p.model, {0.0, 1}, p.target, seed_range(1, 0, 4), w0);
  EXPECT_EQ(e.loss, validation_loss(p.model, w0, p.validation));
}

TEST(RandomSearch, ConstantLandscapeGivesZeroUpdate) {
  auto state = OptimizerState::start(scalar_beta(0.3), {});
  const auto g = brs_update(state, [](const DecisionVector&, std::size_t) { return 4.0; }, {6, 0.1, 2}, {0.05});
  EXPECT_EQ(g, std::vector<double>{0.0});
  EXPECT_EQ(state.beta[0], 0.3);
}

TEST(RandomSearch, QuadraticConvergesWithinTwoHundredSteps) {
  // (beta - 2)^2 from 0, sigma 0.1, gamma 0.05.
  const auto quadratic = [](const DecisionVector& b, std::size_t) { return (b[0] - 2.0) * (b[0] - 2.0); };
  std::vector<double> errors;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto state = OptimizerState::start(scalar_beta(0.0), {});
    for (std::uint64_t t = 0; t < 200; ++t) brs_update(state, quadratic, {1, 0.1, hash_combine(seed, t)}, {0.05});
    errors.push_back(std::abs(state.beta[0] - 2.0));
  }
  EXPECT_LT(median(errors), 0.1);
}

TEST(RandomSearch, MatchesNormalizedEstimatorOnLinearObjective) {
  // L = c . beta, one direction: g = (c . d / |d|) d / |d|
  auto layout = std::make_shared<const Layout>("free", std::vector<Block>{{"x", 0, 3, BlockKind::Scalar}},
                                               std::vector<Bound>(3, Bound{-100, 100}));
  const DecisionVector beta(layout, {0.1, 0.2, 0.3});
  const std::vector<double> c{1.0, -2.0, 0.5};
  const std::vector<Direction> dirs{{0.3, 0.4, -1.2}};
  const auto g = random_search_gradient([&](const DecisionVector& b, std::size_t) {
    return c[0] * b[0] + c[1] * b[1] + c[2] * b[2];
  }, beta, dirs);
  const double n2 = 0.09 + 0.16 + 1.44;
  const double proj = (0.3 * 1.0 - 0.4 * 2.0 - 1.2 * 0.5) / n2;
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(g[k], proj * dirs[0][k], 1e-12);
}

TEST(BrsStep, CostsTwoEvaluationsPerProbePlusTheCentre) {
  auto p = toy_problem(4, 3);
  auto bc = toy_brs_config(3, 4);
  bc.samples_per_step = 3;
  bc.probes.probes = 5;
  const auto state = run_brs(p.pipeline, p.validation, p.model, bc, p.start, init_model(p.model, 1));
  const std::uint64_t n = 3, m = 5, T = 4;
  EXPECT_EQ(state.counters.generator_calls, T * (2 * m * n + n));
  EXPECT_EQ(state.counters.sgd_steps, T * (2 * m * n + n));
  EXPECT_EQ(state.counters.validation_evals, T * (2 * m + 1));
  EXPECT_EQ(state.counters.backward_passes, 0u);
  ASSERT_EQ(state.trajectory.size(), T);
  EXPECT_EQ(state.trajectory[0].generator_calls, 2 * m * n + n);
  EXPECT_EQ(state.trajectory[0].method, "brs");

  // Same generator budget as the hybrid step, 2m times the SGD steps.
  auto hc = toy_hybrid_config(3, 4);
  hc.samples_per_step = 3;
  hc.probes.probes = 5;
  const auto hybrid = run_hybrid(p.pipeline, p.validation, p.model, hc, p.start, init_model(p.model, 1));
  EXPECT_EQ(hybrid.counters.generator_calls, state.counters.generator_calls);
  EXPECT_EQ(state.counters.sgd_steps, (2 * m + 1) * hybrid.counters.sgd_steps);
}

TEST(BrsStep, SharesUpdatePathWithHybrid) {
  // With a zero inner learning rate the loss ignores the generated data, so
  // both methods see a zero gradient; telemetry must match step for step.
  auto p = toy_problem(4, 3);
  auto hc = toy_hybrid_config(8, 5);
  hc.train.learning_rate = 0.0;
  auto bc = toy_brs_config(8, 5);
  bc.train.learning_rate = 0.0;
  const auto w0 = init_model(p.model, 1);
  const auto hybrid = run_hybrid(p.pipeline, p.validation, p.model, hc, p.start, w0);
  const auto brs = run_brs(p.pipeline, p.validation, p.model, bc, p.start, w0);
  EXPECT_EQ(hybrid.beta, p.start);
  EXPECT_EQ(brs.beta, p.start);
  EXPECT_EQ(hybrid.counters.rmsprop_updates, 5u);
  EXPECT_EQ(brs.counters.rmsprop_updates, 5u);
  EXPECT_EQ(hybrid.accumulator, brs.accumulator);
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(hybrid.trajectory[t].loss, brs.trajectory[t].loss);
    EXPECT_EQ(hybrid.trajectory[t].generator_calls, brs.trajectory[t].generator_calls);
  }
}

TEST(BrsStep, CarriesSnapshotFromUnperturbedBeta) {
  auto p = toy_problem(4, 3);
  const auto bc = toy_brs_config(2, 1);
  const auto w0 = init_model(p.model, 1);
  auto state = OptimizerState::start(p.start, w0);
  brs_step(state, p.pipeline, p.validation, p.model, bc, w0);
  const auto samples = generate_dataset(p.pipeline, p.start, step_seeds(bc.seed, 0, bc.samples_per_step, true));
  EXPECT_EQ(state.weights, train_steps(p.model, w0, samples, bc.train));
  EXPECT_EQ(state.trajectory[0].loss, validation_loss(p.model, state.weights, p.validation));

  auto fresh = bc;
  fresh.carry_weights = false;
  auto state2 = OptimizerState::start(p.start, w0);
  brs_step(state2, p.pipeline, p.validation, p.model, fresh, w0);
  EXPECT_EQ(state2.weights, w0);
}

TEST(BrsStep, ImprovesToyTask) {
  auto p = toy_problem();
  const auto state = run_brs(p.pipeline, p.validation, p.model, toy_brs_config(1, 100), p.start, init_model(p.model, 1));
  EXPECT_LT(state.trajectory.back().loss, 0.5 * state.trajectory.front().loss);
}

TEST(FixedBeta, DrawsStayInBoundsAndAreDeterministic) {
  const auto center = default_csg_beta();
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto b = draw_beta(center, 0.5, s);
    EXPECT_TRUE(b.in_bounds());
    EXPECT_EQ(b, draw_beta(center, 0.5, s));
  }
  EXPECT_NE(draw_beta(center, 0.1, 1), draw_beta(center, 0.1, 2));
  EXPECT_EQ(draw_beta(center, 0.0, 3), center);
}

TEST(FixedBeta, SingleSnapshotIsReturned) {
  auto p = toy_problem(4, 3);
  FixedBetaConfig fc;
  fc.draws = 1;
  fc.dataset_size = 6;
  fc.snapshot_every = 6;
  fc.train = {0.1, 1};
  const auto w0 = init_model(p.model, 1);
  const auto r = fixed_beta_run(p.pipeline, p.validation, p.model, fc, p.start, w0);
  ASSERT_EQ(r.trajectory.size(), 1u);
  EXPECT_EQ(r.best_loss, r.trajectory[0].loss);
  EXPECT_EQ(r.best_step, 6u);
  EXPECT_EQ(r.best_draw, 0u);
  EXPECT_EQ(r.best_loss, validation_loss(p.model, r.best_weights, p.validation));
  EXPECT_EQ(r.counters.generator_calls, 6u);
}

TEST(FixedBeta, ReturnsArgminOverAllSnapshots) {
  auto p = toy_problem(4, 3);
  FixedBetaConfig fc;
  fc.draws = 4;
  fc.dataset_size = 10;
  fc.epochs = 2;
  fc.snapshot_every = 3;
  fc.spread = 0.3;
  fc.train = {0.1, 1};
  const auto r = fixed_beta_run(p.pipeline, p.validation, p.model, fc, p.start, init_model(p.model, 1));
  // 4 snapshots per epoch (3, 3, 3, 1 steps), 2 epochs, 4 draws
  ASSERT_EQ(r.trajectory.size(), 32u);
  double lowest = INFINITY;
  for (const auto& rec : r.trajectory) lowest = std::min(lowest, rec.loss);
  EXPECT_EQ(r.best_loss, lowest);
  EXPECT_EQ(r.best_beta, r.betas[r.best_draw]);
  EXPECT_EQ(r.counters.generator_calls, 40u);
  EXPECT_EQ(r.counters.sgd_steps, 80u);
}

TEST(FixedBeta, ToyHybridBeatsBestFixedBetaAtEqualGeneratorBudget) {
  auto p = toy_problem();
  const auto w0 = init_model(p.model, 0);
  const auto hybrid = run_hybrid(p.pipeline, p.validation, p.model, toy_hybrid_config(0, 200), p.start, w0);
  double hybrid_best = INFINITY;
  for (const auto& rec : hybrid.trajectory) hybrid_best = std::min(hybrid_best, rec.loss);

  FixedBetaConfig fc;
  fc.draws = 10;
  fc.dataset_size = hybrid.counters.generator_calls / fc.draws;
  fc.snapshot_every = 10;
  fc.spread = 0.2;
  fc.train = {0.1, 1};
  const auto fixed = fixed_beta_run(p.pipeline, p.validation, p.model, fc, p.start, w0);
  EXPECT_LE(fixed.counters.generator_calls, hybrid.counters.generator_calls);
  EXPECT_GT(fixed.best_loss, hybrid_best);
}

TEST(FixedBeta, RejectsZeroDraws) {
  auto p = toy_problem();
  FixedBetaConfig fc;
  fc.draws = 0;
  EXPECT_THROW(fixed_beta_run(p.pipeline, p.validation, p.model, fc, p.start, init_model(p.model, 0)),
               std::invalid_argument);
}
