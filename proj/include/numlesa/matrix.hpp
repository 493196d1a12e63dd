#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "numlesa/errors.hpp"

namespace numlesa {

// Dense row-major matrix of doubles. Every reduction runs in a fixed
// order so results do not depend on scheduling.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged initializer list");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "-=");
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

  bool operator==(const Matrix& o) const = default;

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  void require_same_shape(const Matrix& o, const char* op) const {
    if (!same_shape(o))
      throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape_str() + " vs " +
                       o.shape_str());
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const EigenRowMajor>;
using View = Eigen::Map<EigenRowMajor>;
}  // namespace detail

// a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul " + a.shape_str() + " * " + b.shape_str());
  Matrix out(a.rows(), b.cols());
  if (out.size() == 0 || a.cols() == 0) return out;
  detail::View(out.data().data(), out.rows(), out.cols()).noalias() =
      detail::ConstView(a.data().data(), a.rows(), a.cols()) *
      detail::ConstView(b.data().data(), b.rows(), b.cols());
  return out;
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt " + a.shape_str() + " * T(" + b.shape_str() + ")");
  Matrix out(a.rows(), b.rows());
  if (out.size() == 0 || a.cols() == 0) return out;
  detail::View(out.data().data(), out.rows(), out.cols()).noalias() =
      detail::ConstView(a.data().data(), a.rows(), a.cols()) *
      detail::ConstView(b.data().data(), b.rows(), b.cols()).transpose();
  return out;
}

// a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn T(" + a.shape_str() + ") * " + b.shape_str());
  Matrix out(a.cols(), b.cols());
  if (out.size() == 0 || a.rows() == 0) return out;
  detail::View(out.data().data(), out.rows(), out.cols()).noalias() =
      detail::ConstView(a.data().data(), a.rows(), a.cols()).transpose() *
      detail::ConstView(b.data().data(), b.rows(), b.cols());
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Columns [begin, begin + count).
inline Matrix column_slice(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw ShapeError("column slice out of range");
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a(i, begin + j);
  return out;
}

inline void set_column_slice(Matrix& dst, std::size_t begin, const Matrix& src) {
  if (src.rows() != dst.rows() || begin + src.cols() > dst.cols())
    throw ShapeError("set_column_slice " + src.shape_str() + " into " + dst.shape_str());
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < src.cols(); ++j) dst(i, begin + j) = src(i, j);
}

inline void add_column_slice(Matrix& dst, std::size_t begin, const Matrix& src) {
  if (src.rows() != dst.rows() || begin + src.cols() > dst.cols())
    throw ShapeError("add_column_slice " + src.shape_str() + " into " + dst.shape_str());
  for (std::size_t i = 0; i < src.rows(); ++i)
    for (std::size_t j = 0; j < src.cols(); ++j) dst(i, begin + j) += src(i, j);
}

inline Matrix drop_first_row(const Matrix& a) {
  if (a.rows() == 0) throw ShapeError("drop_first_row on empty matrix");
  Matrix out(a.rows() - 1, a.cols());
  std::copy(a.data().begin() + static_cast<std::ptrdiff_t>(a.cols()), a.data().end(),
            out.data().begin());
  return out;
}

}  // namespace numlesa
