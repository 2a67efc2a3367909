#pragma once

#include <cstddef>
#include <vector>

#include "fragility/error.hpp"

namespace fragility {

/// Dense row-major matrix of doubles. Small and value-semantic; all kernels
/// in this toolkit operate on desk-scale shapes.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

  static Matrix zeros(int r, int c) { return Matrix(r, c); }
  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  Matrix transposed() const {
    Matrix t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// Columns [c0, c1) as a new matrix.
  Matrix col_block(int c0, int c1) const {
    Matrix b(rows, c1 - c0);
    for (int i = 0; i < rows; ++i)
      for (int j = c0; j < c1; ++j) b(i, j - c0) = (*this)(i, j);
    return b;
  }

  void set_col_block(int c0, const Matrix& b) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < b.cols; ++j) (*this)(i, c0 + j) = b(i, j);
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// Exact double-precision product.
Matrix matmul(const Matrix& a, const Matrix& b);

}  // namespace fragility
