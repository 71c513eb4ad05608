#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hybridgen/csg.hpp"
#include "hybridgen/decision_vector.hpp"
#include "hybridgen/render.hpp"
#include "hybridgen/rng.hpp"
#include "hybridgen/sample.hpp"
#include "hybridgen/tensor.hpp"

namespace hg {

// A generator f(beta, r) -> Sample. Implementations are pure: the same
// (beta, seed) always gives a bit-identical sample, from any thread.
class Pipeline {
 public:
  virtual ~Pipeline() = default;

  virtual std::string name() const = 0;
  virtual std::shared_ptr<const Layout> layout() const = 0;
  virtual Sample generate(const DecisionVector& beta, const Seed& seed) const = 0;

  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
  virtual Task task() const = 0;
  std::size_t flat_size() const { return height() * width() * (1 + truth_channels(task())); }

  // Exact d flatten(f(beta, seed)) / d beta, rows = flat_size(), cols = |beta|.
  virtual bool has_analytic_jacobian() const { return false; }
  virtual Tensor analytic_jacobian(const DecisionVector& beta, const Seed& seed) const;
};

class CsgPipeline : public Pipeline {
 public:
  CsgPipeline(std::shared_ptr<const Layout> layout, RenderSettings render, GrammarSettings grammar = {},
              RenderDistribution render_dist = {});

  std::string name() const override { return "csg"; }
  std::shared_ptr<const Layout> layout() const override { return layout_; }
  Sample generate(const DecisionVector& beta, const Seed& seed) const override;
  std::size_t height() const override { return render_.height; }
  std::size_t width() const override { return render_.width; }
  Task task() const override { return render_.task; }

  CsgTree shape(const DecisionVector& beta, const Seed& seed) const;
  RenderConfig render_config(const DecisionVector& beta, const Seed& seed) const;

 private:
  std::shared_ptr<const Layout> layout_;
  RenderSettings render_;
  GrammarSettings grammar_;
  RenderDistribution render_dist_;
};

struct ToySettings {
  std::size_t width = 8;
  std::size_t height = 8;
  Task task = Task::Normal;
  double jitter = 0.05;  // max per-seed offset of the blob center
};

// Closed-form blob generator on the toy layout. Over pixel coordinates
// (u, v) in [-1, 1]^2 the height field is
//   h = amplitude * exp(-((u - cx)^2 + (v - cy)^2) / (2 width^2))
// where the center is jittered by the seed. The image is h, the normal is
// normalize(-dh/du + tilt_x, -dh/dv + tilt_y, 1) and depth is 2 - h.
class ToyPipeline : public Pipeline {
 public:
  explicit ToyPipeline(ToySettings settings = {});

  std::string name() const override { return "toy"; }
  std::shared_ptr<const Layout> layout() const override { return Layout::toy(); }
  Sample generate(const DecisionVector& beta, const Seed& seed) const override;
  std::size_t height() const override { return settings_.height; }
  std::size_t width() const override { return settings_.width; }
  Task task() const override { return settings_.task; }

  bool has_analytic_jacobian() const override { return true; }
  Tensor analytic_jacobian(const DecisionVector& beta, const Seed& seed) const override;

  // Pixel-center coordinate in [-1, 1].
  double pixel_u(std::size_t col) const;
  double pixel_v(std::size_t row) const;
  std::pair<double, double> jitter(const Seed& seed) const;

 private:
  ToySettings settings_;
};

// Starting points: a moderate grammar with small size variances, and a
// centered toy blob.
DecisionVector default_csg_beta(bool with_render = false);
DecisionVector default_toy_beta();

// X = (f(beta, r_1), ..., f(beta, r_n)), rendered in parallel.
std::vector<Sample> generate_dataset(const Pipeline& pipeline, const DecisionVector& beta,
                                     const std::vector<Seed>& seeds);

// n consecutive seeds of one stream.
std::vector<Seed> seed_range(std::uint64_t stream, std::uint64_t first, std::size_t n);

}  // namespace hg
