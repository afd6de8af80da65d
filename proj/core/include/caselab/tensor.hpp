#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace caselab {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major array of doubles (last index fastest).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0);
  Tensor(Shape dims, std::vector<double> data);

  static Tensor from_values(Shape dims, std::initializer_list<double> values);

  const Shape& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  const double& operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t c, std::size_t i, std::size_t j);
  double at(std::size_t c, std::size_t i, std::size_t j) const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape dims) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape dims_;
  std::vector<double> data_;
};

/// Sum over all entries of a*b. Shapes must match.
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);

/// Throws ShapeError naming `context` if the two shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const std::string& context);

/// Throws NumericalError naming `context` if any entry is NaN or infinite.
void require_finite(const Tensor& t, const std::string& context);

}  // namespace caselab
