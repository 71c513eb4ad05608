#pragma once

// The predictive model, its losses, and SGD unrolled on one tape so the
// validation loss can be differentiated back to every training sample.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hybridgen/autodiff.hpp"
#include "hybridgen/sample.hpp"
#include "hybridgen/tensor.hpp"

namespace hg {

enum class Activation { Tanh, Relu, Identity };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

// Flattened image -> hidden layer -> flattened per-pixel prediction. With
// hidden == 0 the model is a single affine map.
struct ModelConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t in_channels = 1;
  std::size_t out_channels = 3;
  std::size_t hidden = 64;
  Activation activation = Activation::Tanh;
  double init_scale = 0.1;

  std::size_t input_size() const { return height * width * in_channels; }
  std::size_t output_size() const { return height * width * out_channels; }
  std::size_t parameter_count() const;
  static ModelConfig for_task(std::size_t height, std::size_t width, Task task, std::size_t hidden = 64);
};

// Weight tensors in layer order: W1 [in x hidden], b1 [1 x hidden], W2, b2;
// or W [in x out], b [1 x out] for the affine model.
struct ModelParams {
  std::vector<Tensor> weights;

  std::size_t count() const;
  double norm() const;
  bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t steps = 1;
};

class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& what, std::size_t step) : std::runtime_error(what), step(step) {}
  std::size_t step;  // 1-based SGD step
};

class DivergenceError : public TrainError {
 public:
  using TrainError::TrainError;
};

class NonFiniteGradientError : public TrainError {
 public:
  using TrainError::TrainError;
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

// Graph builders. A batch of inputs is a [B x input_size] expression.
using WeightExprs = std::vector<ad::Expr>;
WeightExprs weight_leaves(ad::Tape& tape, const ModelParams& params);
ad::Expr predict(const ModelConfig& config, const WeightExprs& w, const ad::Expr& inputs);

struct SampleExprs {
  ad::Expr image;  // [1 x input_size]
  ad::Expr truth;  // [1 x output_size]
};
SampleExprs sample_leaves(ad::Tape& tape, const ModelConfig& config, const Sample& s);

// Mean squared error over every output entry.
ad::Expr train_loss(const ModelConfig& config, const WeightExprs& w, const SampleExprs& sample);
// w - lr * d train_loss / d w, as expressions differentiable in w and the sample.
WeightExprs sgd_step(const ModelConfig& config, const WeightExprs& w, const SampleExprs& sample, double lr);

// Held-out target set, prepacked for one batched forward pass.
class ValidationSet {
 public:
  ValidationSet(std::vector<Sample> samples, Task task);

  Task task() const { return task_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t foreground() const { return rows_->size(); }
  const Tensor& inputs() const { return inputs_; }        // [V x H*W*1]
  const Tensor& targets() const { return targets_; }      // [foreground x C]
  std::shared_ptr<const std::vector<std::size_t>> rows() const { return rows_; }  // into [V*H*W x C]

 private:
  std::vector<Sample> samples_;
  Task task_;
  Tensor inputs_;
  Tensor targets_;
  std::shared_ptr<const std::vector<std::size_t>> rows_;
};

// Normal maps: mean angle between unit-normalized predictions and the truth
// over foreground pixels. Depth: mean squared error over foreground pixels.
ad::Expr eval_loss(const ModelConfig& config, const WeightExprs& w, const ValidationSet& validation);

// n SGD steps recorded on one tape, with every weight state retained.
class TrainTrace {
 public:
  TrainTrace(const TrainTrace&) = delete;
  TrainTrace(TrainTrace&&) = default;

  const ModelConfig& config() const { return config_; }
  std::size_t steps() const { return samples_.size(); }
  const std::vector<WeightExprs>& weights() const { return weights_; }  // n + 1 states
  const std::vector<SampleExprs>& samples() const { return samples_; }
  const std::optional<ad::Expr>& loss() const { return loss_; }

  ModelParams params(std::size_t state) const;
  ModelParams final_params() const { return params(weights_.size() - 1); }
  double train_loss_value(std::size_t step) const;  // l_train at step k (1-based) before its update

  // Attaches L = l_eval(w^(n+1), validation) and returns its value.
  double attach_eval_loss(const ValidationSet& validation);
  double loss_value();

  ad::Tape& tape() { return *tape_; }
  ad::Evaluator& evaluator() { return *evaluator_; }

 private:
  friend TrainTrace unrolled_train(const ModelConfig&, const ModelParams&, const std::vector<Sample>&,
                                   const TrainConfig&);
  TrainTrace(const ModelConfig& config);

  ModelConfig config_;
  std::unique_ptr<ad::Tape> tape_;
  std::unique_ptr<ad::Evaluator> evaluator_;
  std::vector<WeightExprs> weights_;
  std::vector<SampleExprs> samples_;
  std::vector<ad::Expr> step_losses_;
  std::optional<ad::Expr> loss_;
};

// Samples are consumed in order, one per step (batch size 1).
TrainTrace unrolled_train(const ModelConfig& config, const ModelParams& w0, const std::vector<Sample>& samples,
                          const TrainConfig& train);

struct InputGradients {
  std::vector<std::vector<double>> samples;  // dL/dX^(k), laid out like flatten()
  ModelParams initial_weights;               // dL/dw^(1)
};

// One reverse sweep from L through every unrolled step. Requires an attached
// eval loss.
InputGradients backprop_to_inputs(TrainTrace& trace);

// Value-only helpers sharing the same graph code. Each step uses a fresh
// tape, so nothing is retained.
ModelParams train_steps(const ModelConfig& config, ModelParams params, std::span<const Sample> samples,
                        const TrainConfig& train);
double validation_loss(const ModelConfig& config, const ModelParams& params, const ValidationSet& validation);
// Predictions for one sample, shaped like its truth tensor.
Tensor predict_sample(const ModelConfig& config, const ModelParams& params, const Sample& s);

}  // namespace hg
