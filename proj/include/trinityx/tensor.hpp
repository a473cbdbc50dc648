// Dense row-major matrices and vectors of doubles.
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "trinityx/error.hpp"

namespace trinityx {

using Vector = std::vector<double>;

inline std::string shape_str(std::size_t rows, std::size_t cols) {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

inline std::string shape_str(std::size_t len) { return "(" + std::to_string(len) + ")"; }

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                       shape_str(rows_, cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix& operator+=(const Matrix& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }
  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }
  Matrix operator-() const { return *this * -1.0; }

  bool operator==(const Matrix&) const = default;

 private:
  void require_same(const Matrix& o, const char* op) const {
    if (!same_shape(o))
      throw ShapeError(std::string("matrix ") + op + ": " + shape_str(rows_, cols_) + " vs " +
                       shape_str(o.rows_, o.cols_));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// m * x
inline Vector matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size())
    throw ShapeError("matvec: " + shape_str(m.rows(), m.cols()) + " * " + shape_str(x.size()));
  Vector out(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    const auto r = m.row(i);
    for (std::size_t k = 0; k < x.size(); ++k) acc += r[k] * x[k];
    out[i] = acc;
  }
  return out;
}

/// m^T * x
inline Vector matvec_t(const Matrix& m, std::span<const double> x) {
  if (m.rows() != x.size())
    throw ShapeError("matvec_t: " + shape_str(m.rows(), m.cols()) + "^T * " + shape_str(x.size()));
  Vector out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const auto r = m.row(i);
    for (std::size_t k = 0; k < m.cols(); ++k) out[k] += r[k] * xi;
  }
  return out;
}

/// acc += scale * u v^T
inline void add_outer(Matrix& acc, std::span<const double> u, std::span<const double> v, double scale = 1.0) {
  if (acc.rows() != u.size() || acc.cols() != v.size())
    throw ShapeError("add_outer: " + shape_str(acc.rows(), acc.cols()) + " += " + shape_str(u.size()) +
                     " x " + shape_str(v.size()));
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = scale * u[i];
    if (ui == 0.0) continue;
    auto r = acc.row(i);
    for (std::size_t j = 0; j < v.size(); ++j) r[j] += ui * v[j];
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: " + shape_str(a.size()) + " . " + shape_str(b.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Frobenius inner product.
inline double frobenius(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw ShapeError("frobenius: " + shape_str(a.rows(), a.cols()) + " vs " + shape_str(b.rows(), b.cols()));
  return dot(a.data(), b.data());
}

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: " + shape_str(x.size()) + " vs " + shape_str(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace trinityx
