#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fuzztune/error.hpp"

namespace fzt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array of doubles. Construction rejects zero-sized
/// dimensions, a value count that disagrees with the shape, and NaN/Inf.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    require(!shape_.empty(), ErrorCode::ShapeMismatch, "tensor rank must be at least 1");
    for (auto d : shape_) require(d > 0, ErrorCode::ShapeMismatch, "zero-sized dimension in " + shape_string(shape_));
    require(shape_size(shape_) == values_.size(), ErrorCode::ShapeMismatch,
            "shape " + shape_string(shape_) + " holds " + std::to_string(shape_size(shape_)) + " values, got " +
                std::to_string(values_.size()));
    for (double v : values_) require(std::isfinite(v), ErrorCode::NonFinite, "tensor value is not finite");
  }

  explicit Tensor(std::vector<double> values) : Tensor(Shape{values.size()}, values) {}

  static Tensor zeros(Shape shape) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor filled(Shape shape, double value) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  /// Same values, new shape of equal size.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.values_ == b.values_; }

 private:
  Shape shape_;
  std::vector<double> values_;
};

inline void require_same_size(const Tensor& a, const Tensor& b, const char* what) {
  require(a.size() == b.size(), ErrorCode::ShapeMismatch,
          std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l1_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}

inline double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double linf_distance(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i)
    if (a[i] > a[best]) best = i;
  return best;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace fzt
