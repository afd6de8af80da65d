#include "caselab/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "caselab/errors.hpp"

namespace caselab {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape dims, double fill) : dims_(std::move(dims)), data_(element_count(dims_), fill) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(dims_));
  }
}

Tensor::Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + to_string(dims_));
  }
  if (element_count(dims_) != data_.size()) {
    throw ShapeError("tensor shape " + to_string(dims_) + " needs " +
                     std::to_string(element_count(dims_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::from_values(Shape dims, std::initializer_list<double> values) {
  return Tensor(std::move(dims), std::vector<double>(values));
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }

double& Tensor::at(std::size_t c, std::size_t i, std::size_t j) {
  return data_[(c * dims_[1] + i) * dims_[2] + j];
}
double Tensor::at(std::size_t c, std::size_t i, std::size_t j) const {
  return data_[(c * dims_[1] + i) * dims_[2] + j];
}

Tensor Tensor::reshaped(Shape dims) const {
  if (element_count(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
  }
  return Tensor(std::move(dims), data_);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v * v;
  return acc;
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& context) {
  if (a.dims() != b.dims()) {
    throw ShapeError(context + ": shape mismatch " + to_string(a.dims()) + " vs " +
                     to_string(b.dims()));
  }
}

void require_finite(const Tensor& t, const std::string& context) {
  if (!t.all_finite()) throw NumericalError(context + ": non-finite value");
}

}  // namespace caselab
