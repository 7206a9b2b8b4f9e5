#pragma once

#include <cstddef>
#include <vector>

#include "msel/errors.hpp"

namespace msel {

// Dense row-major matrix of doubles. The only tensor type in the engine;
// scalars are 1x1, row vectors 1xC, column vectors Nx1.
class Matrix {
 public:
  Matrix() = default;

  Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ShapeError("matrix: negative dimension");
    data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  }

  Matrix(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows < 0 || cols < 0) throw ShapeError("matrix: negative dimension");
    if (data_.size() != static_cast<std::size_t>(rows) * cols)
      throw ShapeError("matrix: data size does not match dimensions");
  }

  static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

  static Matrix full(int rows, int cols, double v) {
    Matrix m(rows, cols);
    for (double& x : m.data_) x = v;
    return m;
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* row_ptr(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row_ptr(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const;

  // Exact elementwise equality, shapes included.
  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  double frobenius_norm() const;
  double max_abs_diff(const Matrix& o) const;  // shapes must match

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// out = a * b, shapes checked.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

}  // namespace msel
