#include "hybridgen/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace hg::ad {

using detail::Node;
using detail::TapeImpl;

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Const: return "const";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Affine: return "affine";
    case OpKind::Relu: return "relu";
    case OpKind::Indicator: return "indicator";
    case OpKind::Tanh: return "tanh";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Acos: return "acos";
    case OpKind::Clamp: return "clamp";
    case OpKind::Sum: return "sum";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Matmul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::BroadcastRows: return "broadcast_rows";
    case OpKind::SumCols: return "sum_cols";
    case OpKind::BroadcastCols: return "broadcast_cols";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::ScatterRows: return "scatter_rows";
  }
  return "?";
}

NonFiniteError::NonFiniteError(NodeId n, OpKind o)
    : std::runtime_error("non-finite value produced at node " + std::to_string(n) + " (" + op_name(o) + ")"),
      node(n),
      op(o) {}

UnboundLeafError::UnboundLeafError(NodeId n)
    : std::runtime_error("leaf node " + std::to_string(n) + " has no bound value"), node(n) {}

namespace {

Expr push(TapeImpl* tape, Node node) {
  if (tape->nodes.size() >= Node::kNone) throw TapeError("tape node limit reached");
  auto id = static_cast<NodeId>(tape->nodes.size());
  Shape shape = node.shape;
  tape->nodes.push_back(std::move(node));
  return Expr(tape, id, std::move(shape));
}

TapeImpl* same_tape(const Expr& a, const Expr& b) {
  if (!a.valid() || !b.valid()) throw TapeError("operation on an empty expression");
  if (a.tape() != b.tape()) throw TapeError("expressions belong to different tapes");
  return a.tape();
}

TapeImpl* tape_of(const Expr& a) {
  if (!a.valid()) throw TapeError("operation on an empty expression");
  return a.tape();
}

Expr unary(OpKind op, const Expr& a, Shape shape, double p0 = 0.0, double p1 = 0.0) {
  Node n;
  n.op = op;
  n.a = a.id();
  n.shape = std::move(shape);
  n.p0 = p0;
  n.p1 = p1;
  return push(tape_of(a), std::move(n));
}

// Elementwise binary op; a scalar operand is broadcast to the other's shape.
Expr binary(OpKind op, const char* name, Expr a, Expr b) {
  TapeImpl* tape = same_tape(a, b);
  if (a.shape() != b.shape()) {
    if (a.is_scalar()) {
      a = broadcast(a, b.shape());
    } else if (b.is_scalar()) {
      b = broadcast(b, a.shape());
    } else {
      throw ShapeError(name, a.shape(), b.shape());
    }
  }
  Node n;
  n.op = op;
  n.a = a.id();
  n.b = b.id();
  n.shape = a.shape();
  return push(tape, std::move(n));
}

void require_rank2(const char* name, const Expr& a) {
  if (a.shape().size() != 2) throw ShapeError(std::string(name) + ": expected a matrix, got " + shape_str(a.shape()));
}

}  // namespace

Expr leaf(Tape& tape, Tensor value) {
  Node n;
  n.op = OpKind::Leaf;
  n.shape = value.shape();
  n.value = std::make_shared<const Tensor>(std::move(value));
  return push(tape.impl(), std::move(n));
}

Expr placeholder(Tape& tape, Shape shape) {
  Node n;
  n.op = OpKind::Leaf;
  n.shape = std::move(shape);
  return push(tape.impl(), std::move(n));
}

namespace {
Expr make_const(TapeImpl* tape, Tensor value) {
  Node n;
  n.op = OpKind::Const;
  n.shape = value.shape();
  n.value = std::make_shared<const Tensor>(std::move(value));
  return push(tape, std::move(n));
}
}  // namespace

Expr constant(Tape& tape, Tensor value) { return make_const(tape.impl(), std::move(value)); }

Expr constant_like(const Expr& anchor, Tensor value) { return make_const(tape_of(anchor), std::move(value)); }

Expr zeros_like(const Expr& e) { return make_const(tape_of(e), Tensor(e.shape())); }

Expr add(const Expr& a, const Expr& b) { return binary(OpKind::Add, "add", a, b); }
Expr sub(const Expr& a, const Expr& b) { return binary(OpKind::Sub, "sub", a, b); }
Expr mul(const Expr& a, const Expr& b) { return binary(OpKind::Mul, "mul", a, b); }
Expr div(const Expr& a, const Expr& b) { return binary(OpKind::Div, "div", a, b); }

Expr affine(const Expr& a, double scale, double shift) { return unary(OpKind::Affine, a, a.shape(), scale, shift); }
Expr scale(const Expr& a, double c) { return affine(a, c, 0.0); }
Expr relu(const Expr& a) { return unary(OpKind::Relu, a, a.shape()); }
Expr indicator(const Expr& a, double lo, double hi) { return unary(OpKind::Indicator, a, a.shape(), lo, hi); }
Expr tanh(const Expr& a) { return unary(OpKind::Tanh, a, a.shape()); }
Expr square(const Expr& a) { return unary(OpKind::Square, a, a.shape()); }
Expr sqrt(const Expr& a) { return unary(OpKind::Sqrt, a, a.shape()); }
Expr acos(const Expr& a) { return unary(OpKind::Acos, a, a.shape()); }
Expr clamp(const Expr& a, double lo, double hi) { return unary(OpKind::Clamp, a, a.shape(), lo, hi); }
Expr sum(const Expr& a) { return unary(OpKind::Sum, a, Shape{}); }
Expr mean(const Expr& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Expr broadcast(const Expr& s, const Shape& shape) {
  if (!s.is_scalar()) throw ShapeError("broadcast", s.shape(), shape);
  return unary(OpKind::Broadcast, s, shape);
}

Expr matmul(const Expr& a, const Expr& b) {
  TapeImpl* tape = same_tape(a, b);
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.shape()[1] != b.shape()[0]) throw ShapeError("matmul", a.shape(), b.shape());
  Node n;
  n.op = OpKind::Matmul;
  n.a = a.id();
  n.b = b.id();
  n.shape = Shape{a.shape()[0], b.shape()[1]};
  return push(tape, std::move(n));
}

Expr transpose(const Expr& a) {
  require_rank2("transpose", a);
  return unary(OpKind::Transpose, a, Shape{a.shape()[1], a.shape()[0]});
}

Expr reshape(const Expr& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw ShapeError("reshape", a.shape(), shape);
  if (shape == a.shape()) return a;
  return unary(OpKind::Reshape, a, std::move(shape));
}

Expr sum_rows(const Expr& a) {
  require_rank2("sum_rows", a);
  return unary(OpKind::SumRows, a, Shape{1, a.shape()[1]});
}

Expr broadcast_rows(const Expr& a, std::size_t rows) {
  require_rank2("broadcast_rows", a);
  if (a.shape()[0] != 1) throw ShapeError("broadcast_rows: expected a single row, got " + shape_str(a.shape()));
  return unary(OpKind::BroadcastRows, a, Shape{rows, a.shape()[1]});
}

Expr sum_cols(const Expr& a) {
  require_rank2("sum_cols", a);
  return unary(OpKind::SumCols, a, Shape{a.shape()[0], 1});
}

Expr broadcast_cols(const Expr& a, std::size_t cols) {
  require_rank2("broadcast_cols", a);
  if (a.shape()[1] != 1) throw ShapeError("broadcast_cols: expected a single column, got " + shape_str(a.shape()));
  return unary(OpKind::BroadcastCols, a, Shape{a.shape()[0], cols});
}

Expr gather_rows(const Expr& a, std::shared_ptr<const std::vector<std::size_t>> rows) {
  require_rank2("gather_rows", a);
  for (std::size_t r : *rows)
    if (r >= a.shape()[0]) throw ShapeError("gather_rows: row index " + std::to_string(r) + " out of range");
  Node n;
  n.op = OpKind::GatherRows;
  n.a = a.id();
  n.shape = Shape{rows->size(), a.shape()[1]};
  n.index = std::move(rows);
  return push(tape_of(a), std::move(n));
}

Expr scatter_rows(const Expr& a, std::shared_ptr<const std::vector<std::size_t>> rows, std::size_t total_rows) {
  require_rank2("scatter_rows", a);
  if (rows->size() != a.shape()[0]) throw ShapeError("scatter_rows: index count does not match rows");
  for (std::size_t r : *rows)
    if (r >= total_rows) throw ShapeError("scatter_rows: row index " + std::to_string(r) + " out of range");
  Node n;
  n.op = OpKind::ScatterRows;
  n.a = a.id();
  n.shape = Shape{total_rows, a.shape()[1]};
  n.index = std::move(rows);
  return push(tape_of(a), std::move(n));
}

// ---------------------------------------------------------------------------
// derive

namespace {

Expr expr_of(TapeImpl* tape, NodeId id) { return Expr(tape, id, tape->nodes[id].shape); }

bool has_parent(NodeId p) { return p != Node::kNone; }

// Appends the contribution of node `id` (with adjoint g) to its parents.
template <class Accumulate>
void backward_rule(TapeImpl* tape, NodeId id, const Expr& g, const std::vector<char>& relevant, Accumulate&& acc) {
  const Node node = tape->nodes[id];  // copy: pushes may reallocate
  const Expr y = expr_of(tape, id);
  const bool ra = has_parent(node.a) && relevant[node.a];
  const bool rb = has_parent(node.b) && relevant[node.b];
  Expr a = has_parent(node.a) ? expr_of(tape, node.a) : Expr();
  Expr b = has_parent(node.b) ? expr_of(tape, node.b) : Expr();

  switch (node.op) {
    case OpKind::Leaf:
    case OpKind::Const:
    case OpKind::Indicator:
      break;
    case OpKind::Add:
      if (ra) acc(node.a, g);
      if (rb) acc(node.b, g);
      break;
    case OpKind::Sub:
      if (ra) acc(node.a, g);
      if (rb) acc(node.b, scale(g, -1.0));
      break;
    case OpKind::Mul:
      if (ra) acc(node.a, mul(g, b));
      if (rb) acc(node.b, mul(g, a));
      break;
    case OpKind::Div:
      if (ra) acc(node.a, div(g, b));
      if (rb) acc(node.b, scale(div(mul(g, y), b), -1.0));
      break;
    case OpKind::Affine:
      if (ra) acc(node.a, scale(g, node.p0));
      break;
    case OpKind::Relu:
      // relu'(x) = [x > 0]; the indicator has zero derivative so relu'' = 0.
      if (ra) acc(node.a, mul(g, indicator(a, 0.0, std::numeric_limits<double>::infinity())));
      break;
    case OpKind::Tanh:
      if (ra) acc(node.a, mul(g, affine(square(y), -1.0, 1.0)));
      break;
    case OpKind::Square:
      if (ra) acc(node.a, mul(g, scale(a, 2.0)));
      break;
    case OpKind::Sqrt:
      if (ra) acc(node.a, div(scale(g, 0.5), y));
      break;
    case OpKind::Acos:
      if (ra) acc(node.a, div(scale(g, -1.0), sqrt(affine(square(a), -1.0, 1.0))));
      break;
    case OpKind::Clamp:
      if (ra) acc(node.a, mul(g, indicator(a, node.p0, node.p1)));
      break;
    case OpKind::Sum:
      if (ra) acc(node.a, broadcast(g, a.shape()));
      break;
    case OpKind::Broadcast:
      if (ra) acc(node.a, sum(g));
      break;
    case OpKind::Matmul:
      if (ra) acc(node.a, matmul(g, transpose(b)));
      if (rb) acc(node.b, matmul(transpose(a), g));
      break;
    case OpKind::Transpose:
      if (ra) acc(node.a, transpose(g));
      break;
    case OpKind::Reshape:
      if (ra) acc(node.a, reshape(g, a.shape()));
      break;
    case OpKind::SumRows:
      if (ra) acc(node.a, broadcast_rows(g, a.shape()[0]));
      break;
    case OpKind::BroadcastRows:
      if (ra) acc(node.a, sum_rows(g));
      break;
    case OpKind::SumCols:
      if (ra) acc(node.a, broadcast_cols(g, a.shape()[1]));
      break;
    case OpKind::BroadcastCols:
      if (ra) acc(node.a, sum_cols(g));
      break;
    case OpKind::GatherRows:
      if (ra) acc(node.a, scatter_rows(g, node.index, a.shape()[0]));
      break;
    case OpKind::ScatterRows:
      if (ra) acc(node.a, gather_rows(g, node.index));
      break;
  }
}

}  // namespace

std::vector<Expr> derive(const Expr& output, std::span<const Expr> wrt) {
  TapeImpl* tape = tape_of(output);
  if (!output.is_scalar()) throw ShapeError("derive: output must be a scalar, got " + shape_str(output.shape()));
  for (const Expr& w : wrt) same_tape(output, w);

  const NodeId out = output.id();
  // relevant[i]: node i depends on some wrt node, so its adjoint matters.
  std::vector<char> relevant(out + 1, 0);
  NodeId lowest = out + 1;
  for (const Expr& w : wrt) {
    if (w.id() <= out) {
      relevant[w.id()] = 1;
      lowest = std::min(lowest, w.id());
    }
  }
  for (NodeId i = lowest; i <= out && lowest <= out; ++i) {
    if (relevant[i]) continue;
    const Node& n = tape->nodes[i];
    if ((has_parent(n.a) && relevant[n.a]) || (has_parent(n.b) && relevant[n.b])) relevant[i] = 1;
  }

  std::vector<std::optional<Expr>> adjoint(out + 1);
  if (lowest <= out && relevant[out]) adjoint[out] = make_const(tape, Tensor::scalar(1.0));
  auto accumulate = [&](NodeId target, Expr contribution) {
    auto& slot = adjoint[target];
    slot = slot ? add(*slot, contribution) : std::move(contribution);
  };

  for (NodeId i = out + 1; i-- > lowest && lowest <= out;) {
    if (!adjoint[i] || !relevant[i]) continue;
    // wrt nodes may be interior; their own parents still need the adjoint.
    backward_rule(tape, i, *adjoint[i], relevant, accumulate);
  }

  std::vector<Expr> grads;
  grads.reserve(wrt.size());
  for (const Expr& w : wrt) {
    if (w.id() <= out && adjoint[w.id()]) {
      grads.push_back(*adjoint[w.id()]);
    } else {
      grads.push_back(zeros_like(w));
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// evaluation

void Bindings::bind(const Expr& leaf, Tensor value) {
  if (!leaf.valid()) throw TapeError("bind: empty expression");
  const Node& n = leaf.tape()->nodes.at(leaf.id());
  if (n.op != OpKind::Leaf) throw TapeError("bind: node " + std::to_string(leaf.id()) + " is not a leaf");
  if (value.shape() != n.shape) throw ShapeError("bind", n.shape, value.shape());
  values_[leaf.id()] = std::make_shared<const Tensor>(std::move(value));
}

std::shared_ptr<const Tensor> Bindings::find(NodeId id) const {
  auto it = values_.find(id);
  return it == values_.end() ? nullptr : it->second;
}

Evaluator::Evaluator(const TapeImpl* tape, Bindings bindings) : tape_(tape), bindings_(std::move(bindings)) {}

void Evaluator::check_owner(const Expr& e) const {
  if (e.tape() != tape_) throw TapeError("evaluate: expression belongs to a different tape");
}

namespace {

void matmul_kernel(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <class F>
Tensor map1(const Tensor& a, const Shape& shape, F&& f) {
  Tensor out(shape);
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map2(const Tensor& a, const Tensor& b, const Shape& shape, F&& f) {
  Tensor out(shape);
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

Tensor compute_node(const Node& n, const Tensor* a, const Tensor* b) {
  switch (n.op) {
    case OpKind::Leaf:
    case OpKind::Const:
      return *n.value;
    case OpKind::Add: return map2(*a, *b, n.shape, [](double x, double y) { return x + y; });
    case OpKind::Sub: return map2(*a, *b, n.shape, [](double x, double y) { return x - y; });
    case OpKind::Mul: return map2(*a, *b, n.shape, [](double x, double y) { return x * y; });
    case OpKind::Div: return map2(*a, *b, n.shape, [](double x, double y) { return x / y; });
    case OpKind::Affine: {
      const double s = n.p0, c = n.p1;
      return map1(*a, n.shape, [s, c](double x) { return s * x + c; });
    }
    case OpKind::Relu: return map1(*a, n.shape, [](double x) { return x > 0.0 ? x : 0.0; });
    case OpKind::Indicator: {
      const double lo = n.p0, hi = n.p1;
      return map1(*a, n.shape, [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
    }
    case OpKind::Tanh: return map1(*a, n.shape, [](double x) { return std::tanh(x); });
    case OpKind::Square: return map1(*a, n.shape, [](double x) { return x * x; });
    case OpKind::Sqrt: return map1(*a, n.shape, [](double x) { return std::sqrt(x); });
    case OpKind::Acos: return map1(*a, n.shape, [](double x) { return std::acos(x); });
    case OpKind::Clamp: {
      const double lo = n.p0, hi = n.p1;
      return map1(*a, n.shape, [lo, hi](double x) { return std::clamp(x, lo, hi); });
    }
    case OpKind::Sum: {
      double s = 0.0;
      for (double v : a->data()) s += v;
      return Tensor::scalar(s);
    }
    case OpKind::Broadcast: return Tensor(n.shape, a->item());
    case OpKind::Matmul: {
      Tensor out(n.shape);
      matmul_kernel(*a, *b, out);
      return out;
    }
    case OpKind::Transpose: {
      Tensor out(n.shape);
      const std::size_t rows = a->shape()[0], cols = a->shape()[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = a->at(r, c);
      return out;
    }
    case OpKind::Reshape: return a->reshaped(n.shape);
    case OpKind::SumRows: {
      Tensor out(n.shape);
      const std::size_t rows = a->shape()[0], cols = a->shape()[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += a->at(r, c);
      return out;
    }
    case OpKind::BroadcastRows: {
      Tensor out(n.shape);
      const std::size_t rows = n.shape[0], cols = n.shape[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = (*a)[c];
      return out;
    }
    case OpKind::SumCols: {
      Tensor out(n.shape);
      const std::size_t rows = a->shape()[0], cols = a->shape()[1];
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += a->at(r, c);
        out[r] = s;
      }
      return out;
    }
    case OpKind::BroadcastCols: {
      Tensor out(n.shape);
      const std::size_t rows = n.shape[0], cols = n.shape[1];
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = (*a)[r];
      return out;
    }
    case OpKind::GatherRows: {
      Tensor out(n.shape);
      const std::size_t cols = n.shape[1];
      const auto& idx = *n.index;
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t c = 0; c < cols; ++c) out.at(k, c) = a->at(idx[k], c);
      return out;
    }
    case OpKind::ScatterRows: {
      Tensor out(n.shape);
      const std::size_t cols = n.shape[1];
      const auto& idx = *n.index;
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t c = 0; c < cols; ++c) out.at(idx[k], c) += a->at(k, c);
      return out;
    }
  }
  throw TapeError("unknown op");
}

}  // namespace

std::shared_ptr<const Tensor> Evaluator::run(NodeId id) {
  const Node& n = tape_->nodes[id];
  if (n.op == OpKind::Leaf) {
    if (auto bound = bindings_.find(id)) {
      if (!bound->all_finite()) throw NonFiniteError(id, n.op);
      return bound;
    }
    if (!n.value) throw UnboundLeafError(id);
    if (!n.value->all_finite()) throw NonFiniteError(id, n.op);
    return n.value;
  }
  if (n.op == OpKind::Const) return n.value;
  const Tensor* a = has_parent(n.a) ? cache_[n.a].get() : nullptr;
  const Tensor* b = has_parent(n.b) ? cache_[n.b].get() : nullptr;
  auto out = std::make_shared<const Tensor>(compute_node(n, a, b));
  ++evaluated_;
  if (!out->all_finite()) throw NonFiniteError(id, n.op);
  return out;
}

void Evaluator::compute(std::span<const Expr> exprs) {
  if (exprs.empty()) return;
  NodeId top = 0;
  for (const Expr& e : exprs) {
    check_owner(e);
    top = std::max(top, e.id());
  }
  if (cache_.size() < tape_->nodes.size()) cache_.resize(tape_->nodes.size());

  std::vector<char> needed(top + 1, 0);
  for (const Expr& e : exprs)
    if (!cache_[e.id()]) needed[e.id()] = 1;
  for (NodeId i = top + 1; i-- > 0;) {
    if (!needed[i]) continue;
    const Node& n = tape_->nodes[i];
    if (has_parent(n.a) && !cache_[n.a]) needed[n.a] = 1;
    if (has_parent(n.b) && !cache_[n.b]) needed[n.b] = 1;
  }
  for (NodeId i = 0; i <= top; ++i)
    if (needed[i]) cache_[i] = run(i);
}

const Tensor& Evaluator::value(const Expr& e) {
  compute(std::span(&e, 1));
  return *cache_[e.id()];
}

std::vector<Tensor> Evaluator::values(std::span<const Expr> exprs) {
  compute(exprs);
  std::vector<Tensor> out;
  out.reserve(exprs.size());
  for (const Expr& e : exprs) out.push_back(*cache_[e.id()]);
  return out;
}

std::vector<Tensor> evaluate(std::span<const Expr> exprs, const Bindings& bindings) {
  if (exprs.empty()) return {};
  for (const Expr& e : exprs) same_tape(exprs.front(), e);
  Evaluator ev(exprs.front().tape(), bindings);
  return ev.values(exprs);
}

}  // namespace hg::ad
