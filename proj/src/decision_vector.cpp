#include "hybridgen/decision_vector.hpp"

#include <algorithm>
#include <numbers>
#include <stdexcept>

namespace hg {

namespace {

constexpr double kVarianceFloor = 1e-4;

class LayoutBuilder {
 public:
  explicit LayoutBuilder(std::string name) : name_(std::move(name)) {}

  LayoutBuilder& add(std::string name, BlockKind kind, std::vector<Bound> bounds) {
    blocks_.push_back({std::move(name), bounds_.size(), bounds.size(), kind});
    bounds_.insert(bounds_.end(), bounds.begin(), bounds.end());
    return *this;
  }

  // n means followed by n variances.
  LayoutBuilder& moments(std::string name, std::size_t n, Bound mean, double max_variance) {
    std::vector<Bound> b(n, mean);
    b.insert(b.end(), n, Bound{kVarianceFloor, max_variance});
    return add(std::move(name), BlockKind::Moments, std::move(b));
  }

  LayoutBuilder& mixture(std::string name, std::size_t components) {
    std::vector<Bound> b(components, Bound{0.0, 1.0});
    b.insert(b.end(), components, Bound{-std::numbers::pi, std::numbers::pi});
    b.insert(b.end(), components, Bound{kVarianceFloor, 10.0});
    return add(std::move(name), BlockKind::Mixture, std::move(b));
  }

  std::shared_ptr<const Layout> build() { return std::make_shared<const Layout>(name_, blocks_, bounds_); }

 private:
  std::string name_;
  std::vector<Block> blocks_;
  std::vector<Bound> bounds_;
};

void add_csg_blocks(LayoutBuilder& b) {
  b.add("prim_weights", BlockKind::Weights, std::vector<Bound>(4, Bound{0.0, 1.0}))
      .add("op_weights", BlockKind::Weights, std::vector<Bound>(2, Bound{0.0, 1.0}))
      .add("expand_prob", BlockKind::Probability, {Bound{0.0, 1.0}})
      .moments("translation", 3, Bound{-2.0, 2.0}, 4.0)
      .moments("scale", 3, Bound{-2.0, 1.0}, 2.0)
      .moments("sphere_radius", 1, Bound{-3.0, 1.0}, 2.0)
      .moments("box_length", 1, Bound{-3.0, 1.0}, 2.0)
      .add("cone_size", BlockKind::Moments,
           {Bound{-3.0, 1.0}, Bound{kVarianceFloor, 2.0}, Bound{-3.0, 1.0}, Bound{kVarianceFloor, 2.0}})
      .moments("tetra_length", 1, Bound{-3.0, 1.0}, 2.0);
}

}  // namespace

Layout::Layout(std::string name, std::vector<Block> blocks, std::vector<Bound> bounds)
    : name_(std::move(name)), blocks_(std::move(blocks)), bounds_(std::move(bounds)) {
  std::size_t expected = 0;
  for (const auto& b : blocks_) {
    if (b.offset != expected) throw std::invalid_argument("layout blocks must be contiguous");
    expected += b.size;
  }
  if (expected != bounds_.size()) throw std::invalid_argument("layout bounds do not cover the blocks");
}

const Block* Layout::find(const std::string& name) const {
  auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.name == name; });
  return it == blocks_.end() ? nullptr : &*it;
}

const Block& Layout::block(const std::string& name) const {
  if (const Block* b = find(name)) return *b;
  throw std::out_of_range("layout '" + name_ + "' has no block '" + name + "'");
}

std::shared_ptr<const Layout> Layout::csg() {
  static const auto layout = [] {
    LayoutBuilder b("csg");
    add_csg_blocks(b);
    return b.build();
  }();
  return layout;
}

std::shared_ptr<const Layout> Layout::csg_with_render() {
  static const auto layout = [] {
    LayoutBuilder b("csg_render");
    add_csg_blocks(b);
    b.mixture("yaw", 3).mixture("pitch", 3);
    return b.build();
  }();
  return layout;
}

std::shared_ptr<const Layout> Layout::toy() {
  static const auto layout = [] {
    LayoutBuilder b("toy");
    b.add("center_x", BlockKind::Scalar, {Bound{-1.0, 1.0}})
        .add("center_y", BlockKind::Scalar, {Bound{-1.0, 1.0}})
        .add("width", BlockKind::Scalar, {Bound{0.05, 1.5}})
        .add("tilt_x", BlockKind::Scalar, {Bound{-1.0, 1.0}})
        .add("tilt_y", BlockKind::Scalar, {Bound{-1.0, 1.0}})
        .add("amplitude", BlockKind::Scalar, {Bound{0.0, 1.0}});
    return b.build();
  }();
  return layout;
}

DecisionVector::DecisionVector(std::shared_ptr<const Layout> layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw std::invalid_argument("decision vector needs a layout");
  if (values_.size() != layout_->size()) {
    throw std::invalid_argument("decision vector for layout '" + layout_->name() + "' needs " +
                                std::to_string(layout_->size()) + " entries, got " + std::to_string(values_.size()));
  }
}

std::span<const double> DecisionVector::block(const std::string& name) const {
  const Block& b = layout_->block(name);
  return std::span<const double>(values_).subspan(b.offset, b.size);
}

std::span<double> DecisionVector::block(const std::string& name) {
  const Block& b = layout_->block(name);
  return std::span<double>(values_).subspan(b.offset, b.size);
}

bool DecisionVector::in_bounds() const {
  const auto& bounds = layout_->bounds();
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!(values_[i] >= bounds[i].lo && values_[i] <= bounds[i].hi)) return false;
  return true;
}

std::vector<double> clip_to_valid(const Layout& layout, std::span<const double> values) {
  if (values.size() != layout.size()) throw std::invalid_argument("clip_to_valid: length does not match layout");
  std::vector<double> out(values.begin(), values.end());
  const auto& bounds = layout.bounds();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], bounds[i].lo, bounds[i].hi);
  return out;
}

DecisionVector clip_to_valid(const DecisionVector& beta) {
  return beta.with_values(clip_to_valid(beta.layout(), beta.values()));
}

}  // namespace hg
