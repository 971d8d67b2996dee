#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "posecl/error.hpp"

namespace posecl {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Just enough linear algebra for the
/// fixed-shape networks in this library.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

/// y = M x + b
inline Vector affine(const Matrix& m, std::span<const double> x, std::span<const double> b) {
  require(x.size() == m.cols && b.size() == m.rows, Errc::ShapeMismatch,
          "affine: matrix " + std::to_string(m.rows) + "x" + std::to_string(m.cols) +
              ", input " + std::to_string(x.size()) + ", bias " + std::to_string(b.size()));
  Vector y(b.begin(), b.end());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* w = m.data.data() + r * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += w[c] * x[c];
    y[r] += acc;
  }
  return y;
}

/// y = M x
inline Vector matvec(const Matrix& m, std::span<const double> x) {
  require(x.size() == m.cols, Errc::ShapeMismatch, "matvec: input size");
  Vector y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* w = m.data.data() + r * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += w[c] * x[c];
    y[r] = acc;
  }
  return y;
}

/// grad_w += g x^T, returns M^T g. The common backward step of a linear map.
inline Vector linear_backward(const Matrix& m, std::span<const double> x, std::span<const double> g,
                              Matrix& grad_w) {
  Vector gx(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    const double* w = m.data.data() + r * m.cols;
    double* gw = grad_w.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) {
      gw[c] += gr * x[c];
      gx[c] += gr * w[c];
    }
  }
  return gx;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

/// Fills with U[-bound, bound] from a seeded engine.
inline void fill_uniform(std::span<double> out, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : out) v = dist(rng);
}

/// Named view on one parameter tensor, used for SGD, serialization and
/// finite-difference checks without caring which network it belongs to.
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
};

struct ConstTensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const double> values;
};

}  // namespace posecl
