#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "biozsl/errors.hpp"

namespace biozsl {

// Dense row-major tensor of doubles. Rank 0 (scalar) through rank 2 are all
// this project needs.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape) {
    Tensor t;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    t.shape = std::move(shape);
    t.values.assign(n, 0.0);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.shape = {};
    t.values = {v};
    return t;
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    Tensor t;
    t.shape = {rows, cols};
    t.values = std::move(v);
    if (t.values.size() != rows * cols) throw ShapeError("matrix: value count does not match shape");
    return t;
  }

  static Tensor vector(std::vector<double> v) {
    Tensor t;
    t.shape = {v.size()};
    t.values = std::move(v);
    return t;
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const { return rank() == 2 ? shape[0] : (rank() == 0 ? 1 : shape[0]); }
  std::size_t cols() const { return rank() == 2 ? shape[1] : 1; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
    return values[0];
  }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool operator==(const Tensor& other) const = default;
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace biozsl
