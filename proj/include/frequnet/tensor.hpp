#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "frequnet/error.hpp"

namespace frequnet {

/// Extents of a rank-4 (batch, channel, height, width) array.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

/// Dense row-major rank-4 array of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.numel(), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    check_extents();
    if (data_.size() != shape_.numel()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape s) { return Tensor(s, 0.0); }
  static Tensor ones(Shape s) { return Tensor(s, 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape(), 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(b, c, y, x)];
  }
  double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(b, c, y, x)];
  }

  /// Pointer to the start of the (b, c) plane.
  double* plane(std::size_t b, std::size_t c) { return data_.data() + (b * shape_.c + c) * shape_.plane(); }
  const double* plane(std::size_t b, std::size_t c) const {
    return data_.data() + (b * shape_.c + c) * shape_.plane();
  }

  double item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw DimensionError(std::string(what) + ": shape " + shape_.str() + " vs " + o.shape_.str());
    }
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_extents() const {
    if (shape_.n == 0 || shape_.c == 0 || shape_.h == 0 || shape_.w == 0) {
      throw DimensionError("tensor extents must be positive, got " + shape_.str());
    }
  }

  Shape shape_{};
  std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }

/// Integer label map of extents (batch, height, width).
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(n_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::int32_t& at(std::size_t b, std::size_t y, std::size_t x) { return data[(b * h + y) * w + x]; }
  std::int32_t at(std::size_t b, std::size_t y, std::size_t x) const { return data[(b * h + y) * w + x]; }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace frequnet
