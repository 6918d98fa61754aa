#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fsaheat/common.hpp"

namespace fsaheat {

struct Shape {
  std::vector<std::int64_t> dims;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> d) : dims(d) { validate(); }
  explicit Shape(std::vector<std::int64_t> d) : dims(std::move(d)) { validate(); }

  void validate() const {
    for (auto d : dims) check(d >= 1, "Shape: all dims must be >= 1, got " + str());
  }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  int rank() const { return static_cast<int>(dims.size()); }
  std::int64_t operator[](int i) const { return dims[static_cast<std::size_t>(i)]; }

  bool operator==(const Shape& o) const { return dims == o.dims; }
  bool operator!=(const Shape& o) const { return dims != o.dims; }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
  }
};

// Dense row-major 64-bit float array. Value semantics throughout; graphs
// of network scale here are small enough that copies are not a concern.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(shape.numel()), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    check(static_cast<std::int64_t>(data.size()) == shape.numel(),
          "Tensor: data size does not match shape " + shape.str());
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool empty() const { return data.empty(); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // 4-d accessor for [C,D,H,W]-layout feature maps.
  double& at4(std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) {
    const auto& s = shape.dims;
    return data[static_cast<std::size_t>(((c * s[1] + d) * s[2] + h) * s[3] + w)];
  }
  double at4(std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t w) const {
    const auto& s = shape.dims;
    return data[static_cast<std::size_t>(((c * s[1] + d) * s[2] + h) * s[3] + w)];
  }
  double& at2(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * shape.dims[1] + c)];
  }
  double at2(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * shape.dims[1] + c)];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data) m = std::max(m, std::abs(v));
    return m;
  }
  double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }
  double min() const { return *std::min_element(data.begin(), data.end()); }
  double max() const { return *std::max_element(data.begin(), data.end()); }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check(a.shape == b.shape, "max_abs_diff: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fsaheat
