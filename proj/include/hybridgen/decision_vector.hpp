#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hg {

enum class BlockKind {
  Weights,      // unnormalized nonnegative categorical weights
  Probability,  // a single probability in [0, 1]
  Moments,      // (mean..., variance...) of a normal or log-normal
  Mixture,      // (weights..., means..., variances...) of a von Mises mixture
  Scalar,       // plain bounded parameter
};

struct Bound {
  double lo;
  double hi;
};

struct Block {
  std::string name;
  std::size_t offset;
  std::size_t size;
  BlockKind kind;
};

// Named slices of beta with per-entry closed bounds.
class Layout {
 public:
  Layout(std::string name, std::vector<Block> blocks, std::vector<Bound> bounds);

  const std::string& name() const { return name_; }
  std::size_t size() const { return bounds_.size(); }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::vector<Bound>& bounds() const { return bounds_; }
  const Block& block(const std::string& name) const;
  const Block* find(const std::string& name) const;

  // 29 entries: primitive weights, union/subtract weights, expansion
  // probability, then normal/log-normal moments for transforms and primitive
  // sizes.
  static std::shared_ptr<const Layout> csg();
  // csg() followed by von Mises mixtures for camera yaw and pitch.
  static std::shared_ptr<const Layout> csg_with_render();
  // center x/y, width, tilt x/y, amplitude of the differentiable blob pipeline.
  static std::shared_ptr<const Layout> toy();

 private:
  std::string name_;
  std::vector<Block> blocks_;
  std::vector<Bound> bounds_;
};

class DecisionVector {
 public:
  DecisionVector() = default;
  DecisionVector(std::shared_ptr<const Layout> layout, std::vector<double> values);

  const Layout& layout() const { return *layout_; }
  std::shared_ptr<const Layout> layout_ptr() const { return layout_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> block(const std::string& name) const;
  std::span<double> block(const std::string& name);

  DecisionVector with_values(std::vector<double> values) const { return {layout_, std::move(values)}; }
  bool in_bounds() const;

  bool operator==(const DecisionVector& other) const { return values_ == other.values_; }

 private:
  std::shared_ptr<const Layout> layout_;
  std::vector<double> values_;
};

// Clamps every entry into its bound. Idempotent.
DecisionVector clip_to_valid(const DecisionVector& beta);
std::vector<double> clip_to_valid(const Layout& layout, std::span<const double> values);

}  // namespace hg
