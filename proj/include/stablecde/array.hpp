#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "stablecde/errors.hpp"

namespace stablecde::ad {

// Dense row-major real tensor, 64-bit throughout. Rank 0 (scalar), 1 and 2
// are what the rest of the code uses.
class Array {
 public:
  Array() = default;

  explicit Array(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Array(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size())
      throw DimensionError("Array: shape product does not match data length");
  }

  static Array scalar(double v) { return Array({}, {v}); }

  static Array vec(std::vector<double> values) {
    const std::size_t n = values.size();
    return Array({n}, std::move(values));
  }

  static Array matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Array({r, c}, std::move(v));
  }

  static Array zeros_like(const Array& a) { return Array(a.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? shape_[0] : 1); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  double& at2(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at2(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

  double scalar_value() const {
    if (data_.size() != 1)
      throw ContractError("Array: scalar_value on non-scalar");
    return data_[0];
  }

  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  // Reshape in place without touching data (same element count required).
  void set_shape(std::vector<std::size_t> shape) {
    if (count(shape) != data_.size())
      throw DimensionError("Array: reshape changes element count");
    shape_ = std::move(shape);
  }

  // Resize to match a target shape, reusing capacity; contents zeroed.
  void assign_zeros(const std::vector<std::size_t>& shape) {
    shape_ = shape;
    data_.assign(count(shape_), 0.0);
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace stablecde::ad
