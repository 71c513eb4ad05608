#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major array of doubles. An empty shape is a scalar.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor from(std::initializer_list<std::size_t> shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  bool is_scalar() const { return shape_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; callers check rank.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  double norm() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace hg
