#include "hybridgen/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace hg {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::runtime_error(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)) {}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values) {
  return Tensor(Shape(shape), std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) throw ShapeError("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

}  // namespace hg
