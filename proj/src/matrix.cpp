#include "fragility/matrix.hpp"

namespace fragility {

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw Error(ErrorCode::DimensionMismatch, "matrix add: shape mismatch");
  Matrix r = a;
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] += b.data[i];
  return r;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b))
    throw Error(ErrorCode::DimensionMismatch, "matrix sub: shape mismatch");
  Matrix r = a;
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
  return r;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix r = a;
  for (double& v : r.data) v *= s;
  return r;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw Error(ErrorCode::DimensionMismatch, "matmul: inner dimension mismatch");
  Matrix r(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (int j = 0; j < b.cols; ++j) r(i, j) += aik * b(k, j);
    }
  }
  return r;
}

}  // namespace fragility
