#include "latnav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace latnav {

namespace {

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    throw std::invalid_argument("tensor of shape " + shape_string(shape_) + " cannot hold " +
                                std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::row_vector(std::span<const double> values) {
  return Tensor(Shape{1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " + shape_string(shape_));
  }
  return data_.front();
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> indices) {
  const std::size_t cols = source.cols();
  Tensor out = Tensor::matrix(indices.size(), cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= source.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(source.data() + indices[r] * cols, cols, out.data() + r * cols);
  }
  return out;
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("stack_rows: column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor(Shape{rows, cols}, std::move(data));
}

}  // namespace latnav
