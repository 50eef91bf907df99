#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace latnav {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Most of the library treats tensors as
// matrices: rows() is the leading dimension, cols() the product of the rest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor scalar(double value) { return Tensor(Shape{1, 1}, value); }
  static Tensor row_vector(std::span<const double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 1 : shape_.front(); }
  std::size_t cols() const noexcept { return rows() == 0 ? 0 : size() / rows(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  // Value of a one-element tensor.
  double item() const;

  void fill(double value);
  bool all_finite() const noexcept;

  // Same data, new shape with an equal element count.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Rows `indices` of `source`, in order.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> indices);

// Row-wise concatenation; all inputs must share cols().
Tensor stack_rows(std::span<const Tensor> parts);

}  // namespace latnav
