#include "hybridgen/trainer.hpp"

#include <cmath>
#include <string>

#include "hybridgen/rng.hpp"

namespace hg {

namespace {

constexpr double kNormEps = 1e-9;
constexpr double kAcosClamp = 1.0 - 1e-7;
constexpr double kDivergenceNorm = 1e6;

ad::Expr activate(Activation a, const ad::Expr& x) {
  switch (a) {
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Relu: return ad::relu(x);
    case Activation::Identity: return x;
  }
  return x;
}

ad::Expr add_bias(const ad::Expr& x, const ad::Expr& bias) {
  const std::size_t rows = x.shape()[0];
  return rows == 1 ? x + bias : x + ad::broadcast_rows(bias, rows);
}

double params_norm(const std::vector<Tensor>& ts) {
  double s = 0.0;
  for (const auto& t : ts)
    for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

std::vector<Tensor> values_of(ad::Evaluator& ev, const std::vector<ad::Expr>& exprs) { return ev.values(exprs); }

}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + name + "' (expected tanh, relu or identity)");
}

std::size_t ModelConfig::parameter_count() const {
  if (hidden == 0) return input_size() * output_size() + output_size();
  return input_size() * hidden + hidden + hidden * output_size() + output_size();
}

ModelConfig ModelConfig::for_task(std::size_t height, std::size_t width, Task task, std::size_t hidden) {
  ModelConfig c;
  c.height = height;
  c.width = width;
  c.out_channels = truth_channels(task);
  c.hidden = hidden;
  return c;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& t : weights) n += t.numel();
  return n;
}

double ModelParams::norm() const { return params_norm(weights); }

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.input_size() == 0 || config.output_size() == 0) throw std::invalid_argument("model has an empty layer");
  std::vector<Shape> shapes;
  if (config.hidden == 0) {
    shapes = {{config.input_size(), config.output_size()}, {1, config.output_size()}};
  } else {
    shapes = {{config.input_size(), config.hidden},
              {1, config.hidden},
              {config.hidden, config.output_size()},
              {1, config.output_size()}};
  }
  CounterRng rng(hash_combine(seed, 'M'));
  ModelParams p;
  for (const auto& s : shapes) {
    Tensor t(s);
    for (double& v : t.data()) v = rng.uniform(-config.init_scale, config.init_scale);
    p.weights.push_back(std::move(t));
  }
  return p;
}

WeightExprs weight_leaves(ad::Tape& tape, const ModelParams& params) {
  WeightExprs w;
  for (const auto& t : params.weights) w.push_back(ad::leaf(tape, t));
  return w;
}

ad::Expr predict(const ModelConfig& config, const WeightExprs& w, const ad::Expr& inputs) {
  if (config.hidden == 0) {
    if (w.size() != 2) throw std::invalid_argument("affine model expects 2 weight tensors");
    return add_bias(ad::matmul(inputs, w[0]), w[1]);
  }
  if (w.size() != 4) throw std::invalid_argument("two-layer model expects 4 weight tensors");
  const ad::Expr hidden = activate(config.activation, add_bias(ad::matmul(inputs, w[0]), w[1]));
  return add_bias(ad::matmul(hidden, w[2]), w[3]);
}

SampleExprs sample_leaves(ad::Tape& tape, const ModelConfig& config, const Sample& s) {
  if (s.image.numel() != config.input_size())
    throw ShapeError("sample image " + shape_str(s.image.shape()) + " does not fit model input of " +
                     std::to_string(config.input_size()));
  if (s.truth.numel() != config.output_size())
    throw ShapeError("sample truth " + shape_str(s.truth.shape()) + " does not fit model output of " +
                     std::to_string(config.output_size()));
  return {ad::leaf(tape, s.image.reshaped({1, config.input_size()})),
          ad::leaf(tape, s.truth.reshaped({1, config.output_size()}))};
}

ad::Expr train_loss(const ModelConfig& config, const WeightExprs& w, const SampleExprs& sample) {
  const ad::Expr pred = predict(config, w, sample.image);
  if (pred.shape() != sample.truth.shape()) throw ShapeError("train_loss", pred.shape(), sample.truth.shape());
  return ad::mean(ad::square(pred - sample.truth));
}

WeightExprs sgd_step(const ModelConfig& config, const WeightExprs& w, const SampleExprs& sample, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be nonnegative");
  const ad::Expr loss = train_loss(config, w, sample);
  const auto grads = ad::derive(loss, w);
  WeightExprs next;
  next.reserve(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) next.push_back(w[i] - ad::scale(grads[i], lr));
  return next;
}

ValidationSet::ValidationSet(std::vector<Sample> samples, Task task) : samples_(std::move(samples)), task_(task) {
  if (samples_.empty()) throw std::invalid_argument("validation set is empty");
  const std::size_t H = samples_[0].height(), W = samples_[0].width(), C = truth_channels(task);
  const std::size_t P = H * W;
  inputs_ = Tensor(Shape{samples_.size(), P});
  auto rows = std::make_shared<std::vector<std::size_t>>();
  std::vector<double> targets;
  for (std::size_t v = 0; v < samples_.size(); ++v) {
    const Sample& s = samples_[v];
    if (s.height() != H || s.width() != W || s.truth.shape().at(2) != C)
      throw ShapeError("validation sample " + std::to_string(v) + " has shape " + shape_str(s.truth.shape()));
    for (std::size_t px = 0; px < P; ++px) inputs_.at(v, px) = s.image[px];
    for (std::size_t px = 0; px < P; ++px) {
      if (!s.mask[px]) continue;
      rows->push_back(v * P + px);
      for (std::size_t c = 0; c < C; ++c) targets.push_back(s.truth[px * C + c]);
    }
  }
  if (rows->empty()) throw std::invalid_argument("validation set has no foreground pixels");
  targets_ = Tensor(Shape{rows->size(), C}, std::move(targets));
  rows_ = std::move(rows);
}

ad::Expr eval_loss(const ModelConfig& config, const WeightExprs& w, const ValidationSet& validation) {
  const std::size_t C = truth_channels(validation.task());
  if (config.out_channels != C)
    throw ShapeError("model predicts " + std::to_string(config.out_channels) + " channels, validation task '" +
                     task_name(validation.task()) + "' needs " + std::to_string(C));
  const ad::Expr inputs = ad::constant_like(w.at(0), validation.inputs());
  const ad::Expr pred = predict(config, w, inputs);
  const std::size_t rows = validation.size() * config.height * config.width;
  const ad::Expr picked = ad::gather_rows(ad::reshape(pred, {rows, C}), validation.rows());
  const ad::Expr target = ad::constant_like(w.at(0), validation.targets());
  if (validation.task() == Task::Depth) return ad::mean(ad::square(picked - target));
  const ad::Expr norm = ad::sqrt(ad::affine(ad::sum_cols(ad::square(picked)), 1.0, kNormEps));
  const ad::Expr unit = picked / ad::broadcast_cols(norm, C);
  const ad::Expr cosine = ad::clamp(ad::sum_cols(unit * target), -kAcosClamp, kAcosClamp);
  return ad::mean(ad::acos(cosine));
}

TrainTrace::TrainTrace(const ModelConfig& config)
    : config_(config),
      tape_(std::make_unique<ad::Tape>()),
      evaluator_(std::make_unique<ad::Evaluator>(tape_->impl())) {}

ModelParams TrainTrace::params(std::size_t state) const {
  return ModelParams{values_of(*evaluator_, weights_.at(state))};
}

double TrainTrace::train_loss_value(std::size_t step) const { return evaluator_->value(step_losses_.at(step - 1)).item(); }

double TrainTrace::attach_eval_loss(const ValidationSet& validation) {
  loss_ = eval_loss(config_, weights_.back(), validation);
  return loss_value();
}

double TrainTrace::loss_value() {
  if (!loss_) throw std::logic_error("train trace has no eval loss attached");
  try {
    return evaluator_->value(*loss_).item();
  } catch (const ad::NonFiniteError& e) {
    throw NonFiniteGradientError(std::string("validation loss is not finite: ") + e.what(), steps());
  }
}

TrainTrace unrolled_train(const ModelConfig& config, const ModelParams& w0, const std::vector<Sample>& samples,
                          const TrainConfig& train) {
  if (samples.empty()) throw std::invalid_argument("unrolled_train needs at least one sample");
  TrainTrace trace(config);
  ad::Tape& tape = *trace.tape_;
  trace.weights_.push_back(weight_leaves(tape, w0));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::size_t step = k + 1;
    SampleExprs x = sample_leaves(tape, config, samples[k]);
    trace.step_losses_.push_back(train_loss(config, trace.weights_.back(), x));
    WeightExprs next = sgd_step(config, trace.weights_.back(), x, train.learning_rate);
    std::vector<Tensor> values;
    try {
      values = trace.evaluator_->values(next);
    } catch (const ad::NonFiniteError& e) {
      throw NonFiniteGradientError("SGD step " + std::to_string(step) + " produced a non-finite value: " + e.what(),
                                   step);
    }
    if (params_norm(values) > kDivergenceNorm)
      throw DivergenceError("training diverged at SGD step " + std::to_string(step) + " (weight norm " +
                                std::to_string(params_norm(values)) + ")",
                            step);
    trace.samples_.push_back(x);
    trace.weights_.push_back(std::move(next));
  }
  return trace;
}

InputGradients backprop_to_inputs(TrainTrace& trace) {
  if (!trace.loss()) throw std::logic_error("backprop_to_inputs needs an attached eval loss");
  std::vector<ad::Expr> wrt;
  for (const auto& s : trace.samples()) {
    wrt.push_back(s.image);
    wrt.push_back(s.truth);
  }
  const WeightExprs& w1 = trace.weights().front();
  wrt.insert(wrt.end(), w1.begin(), w1.end());
  const auto grads = ad::derive(*trace.loss(), wrt);

  const std::size_t n = trace.steps();
  InputGradients out;
  out.samples.resize(n);
  // Latest samples first: their adjoints are computed from L before earlier
  // steps need them, so a failure is attributed to the step that caused it.
  for (std::size_t k = n; k-- > 0;) {
    try {
      const Tensor& gi = trace.evaluator().value(grads[2 * k]);
      const Tensor& gt = trace.evaluator().value(grads[2 * k + 1]);
      auto& flat = out.samples[k];
      flat.reserve(gi.numel() + gt.numel());
      flat.insert(flat.end(), gi.data().begin(), gi.data().end());
      flat.insert(flat.end(), gt.data().begin(), gt.data().end());
    } catch (const ad::NonFiniteError& e) {
      throw NonFiniteGradientError("gradient of the validation loss w.r.t. sample " + std::to_string(k + 1) +
                                       " is not finite: " + e.what(),
                                   k + 1);
    }
  }
  try {
    for (std::size_t i = 0; i < w1.size(); ++i) out.initial_weights.weights.push_back(trace.evaluator().value(grads[2 * n + i]));
  } catch (const ad::NonFiniteError& e) {
    throw NonFiniteGradientError(std::string("gradient w.r.t. the initial weights is not finite: ") + e.what(), 1);
  }
  return out;
}

ModelParams train_steps(const ModelConfig& config, ModelParams params, std::span<const Sample> samples,
                        const TrainConfig& train) {
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const std::size_t step = k + 1;
    ad::Tape tape;
    const WeightExprs w = weight_leaves(tape, params);
    const SampleExprs x = sample_leaves(tape, config, samples[k]);
    const WeightExprs next = sgd_step(config, w, x, train.learning_rate);
    ad::Evaluator ev(tape);
    try {
      params.weights = ev.values(next);
    } catch (const ad::NonFiniteError& e) {
      throw NonFiniteGradientError("SGD step " + std::to_string(step) + " produced a non-finite value: " + e.what(),
                                   step);
    }
    if (params.norm() > kDivergenceNorm)
      throw DivergenceError("training diverged at SGD step " + std::to_string(step), step);
  }
  return params;
}

double validation_loss(const ModelConfig& config, const ModelParams& params, const ValidationSet& validation) {
  ad::Tape tape;
  const WeightExprs w = weight_leaves(tape, params);
  return ad::evaluate(eval_loss(config, w, validation)).item();
}

Tensor predict_sample(const ModelConfig& config, const ModelParams& params, const Sample& s) {
  ad::Tape tape;
  const WeightExprs w = weight_leaves(tape, params);
  const SampleExprs x = sample_leaves(tape, config, s);
  return ad::evaluate(predict(config, w, x.image)).reshaped(s.truth.shape());
}

}  // namespace hg
