#pragma once

// Reverse-mode differentiation over an append-only tape.
//
// derive() does not compute numbers. It appends the adjoint computation to the
// same tape and returns the gradients as ordinary expressions, so a gradient
// can itself be differentiated. This is what lets the trainer differentiate an
// SGD update with respect to the sample that drove it.

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hybridgen/tensor.hpp"

namespace hg::ad {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
  Leaf,
  Const,
  Add,
  Sub,
  Mul,
  Div,
  Affine,     // p0 * a + p1
  Relu,
  Indicator,  // 1 where p0 < a < p1, else 0; zero derivative
  Tanh,
  Square,
  Sqrt,
  Acos,
  Clamp,      // clamp(a, p0, p1)
  Sum,        // all entries -> scalar
  Broadcast,  // scalar -> shape
  Matmul,
  Transpose,
  Reshape,
  SumRows,        // R x C -> 1 x C
  BroadcastRows,  // 1 x C -> R x C
  SumCols,        // R x C -> R x 1
  BroadcastCols,  // R x 1 -> R x C
  GatherRows,     // R x C -> K x C
  ScatterRows,    // K x C -> R x C (accumulating)
};

const char* op_name(OpKind op);

class TapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(NodeId node, OpKind op);
  NodeId node;
  OpKind op = OpKind::Const;
};

class UnboundLeafError : public std::runtime_error {
 public:
  explicit UnboundLeafError(NodeId node);
  NodeId node;
};

namespace detail {
struct Node {
  OpKind op = OpKind::Const;
  NodeId a = kNone;
  NodeId b = kNone;
  Shape shape;
  double p0 = 0.0;
  double p1 = 0.0;
  std::shared_ptr<const std::vector<std::size_t>> index;
  std::shared_ptr<const Tensor> value;  // Leaf default binding, Const payload
  static constexpr NodeId kNone = std::numeric_limits<NodeId>::max();
};
struct TapeImpl {
  std::vector<Node> nodes;
};
}  // namespace detail

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Expr {
 public:
  Expr() = default;
  Expr(detail::TapeImpl* tape, NodeId id, Shape shape) : tape_(tape), id_(id), shape_(std::move(shape)) {}

  NodeId id() const { return id_; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_numel(shape_); }
  bool is_scalar() const { return shape_.empty(); }
  bool valid() const { return tape_ != nullptr; }
  detail::TapeImpl* tape() const { return tape_; }

 private:
  detail::TapeImpl* tape_ = nullptr;
  NodeId id_ = 0;
  Shape shape_;
};

// Owns the node list. Movable; expressions stay valid across moves.
class Tape {
 public:
  Tape() : impl_(std::make_unique<detail::TapeImpl>()) {}
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return impl_->nodes.size(); }
  const detail::Node& node(NodeId id) const { return impl_->nodes.at(id); }
  detail::TapeImpl* impl() const { return impl_.get(); }
  bool owns(const Expr& e) const { return e.tape() == impl_.get(); }

 private:
  std::unique_ptr<detail::TapeImpl> impl_;
};

// Input node bound to `value` unless overridden at evaluation time.
Expr leaf(Tape& tape, Tensor value);
// Input node with no default value; it must be bound before evaluation.
Expr placeholder(Tape& tape, Shape shape);
Expr constant(Tape& tape, Tensor value);
// Constant on the same tape as `anchor`.
Expr constant_like(const Expr& anchor, Tensor value);
Expr zeros_like(const Expr& e);

Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr div(const Expr& a, const Expr& b);
Expr affine(const Expr& a, double scale, double shift);
Expr scale(const Expr& a, double c);
Expr relu(const Expr& a);
Expr indicator(const Expr& a, double lo, double hi);
Expr tanh(const Expr& a);
Expr square(const Expr& a);
Expr sqrt(const Expr& a);
Expr acos(const Expr& a);
Expr clamp(const Expr& a, double lo, double hi);
Expr sum(const Expr& a);
Expr mean(const Expr& a);
Expr broadcast(const Expr& scalar, const Shape& shape);
Expr matmul(const Expr& a, const Expr& b);
Expr transpose(const Expr& a);
Expr reshape(const Expr& a, Shape shape);
Expr sum_rows(const Expr& a);
Expr broadcast_rows(const Expr& a, std::size_t rows);
Expr sum_cols(const Expr& a);
Expr broadcast_cols(const Expr& a, std::size_t cols);
Expr gather_rows(const Expr& a, std::shared_ptr<const std::vector<std::size_t>> rows);
Expr scatter_rows(const Expr& a, std::shared_ptr<const std::vector<std::size_t>> rows, std::size_t total_rows);

inline Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return sub(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return div(a, b); }
inline Expr operator*(double c, const Expr& a) { return scale(a, c); }
inline Expr operator*(const Expr& a, double c) { return scale(a, c); }
inline Expr operator+(const Expr& a, double c) { return affine(a, 1.0, c); }
inline Expr operator-(const Expr& a) { return scale(a, -1.0); }

// Gradients of scalar `output` with respect to each of `wrt`, as new tape
// nodes. A wrt node that does not influence output gets a zero expression.
std::vector<Expr> derive(const Expr& output, std::span<const Expr> wrt);
inline Expr derive(const Expr& output, const Expr& wrt) { return derive(output, std::span(&wrt, 1)).front(); }

// Leaf overrides for one evaluation.
class Bindings {
 public:
  void bind(const Expr& leaf, Tensor value);
  std::shared_ptr<const Tensor> find(NodeId id) const;
  bool empty() const { return values_.empty(); }

 private:
  std::unordered_map<NodeId, std::shared_ptr<const Tensor>> values_;
};

// Memoizing evaluator. Nodes appended to the tape after construction can be
// evaluated later and reuse every value already computed.
class Evaluator {
 public:
  explicit Evaluator(const Tape& tape, Bindings bindings = {}) : Evaluator(tape.impl(), std::move(bindings)) {}
  explicit Evaluator(const detail::TapeImpl* tape, Bindings bindings = {});

  const Tensor& value(const Expr& e);
  std::vector<Tensor> values(std::span<const Expr> exprs);
  void compute(std::span<const Expr> exprs);

  // Node-evaluation count, for cost accounting in tests.
  std::size_t evaluated_nodes() const { return evaluated_; }

 private:
  void check_owner(const Expr& e) const;
  std::shared_ptr<const Tensor> run(NodeId id);

  const detail::TapeImpl* tape_;
  Bindings bindings_;
  std::vector<std::shared_ptr<const Tensor>> cache_;
  std::size_t evaluated_ = 0;
};

std::vector<Tensor> evaluate(std::span<const Expr> exprs, const Bindings& bindings = {});
inline Tensor evaluate(const Expr& e, const Bindings& bindings = {}) {
  return evaluate(std::span(&e, 1), bindings).front();
}

}  // namespace hg::ad
