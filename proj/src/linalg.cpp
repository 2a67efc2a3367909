#include "fragility/linalg.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

namespace fragility {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& a) {
  Eigen::MatrixXd m(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) m(i, j) = a(i, j);
  return m;
}

}  // namespace

Matrix gemm(const Matrix& a, const Matrix& b, const PrecisionSpec& spec) {
  if (a.cols != b.rows)
    throw Error(ErrorCode::DimensionMismatch, "gemm: inner dimension mismatch");
  if (spec.is_reference()) return matmul(a, b);
  const Rounder r(spec);
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) {
        const double p = r.c(a(i, k) * b(k, j));
        acc = r.a(acc + p);
      }
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix gemm_scaled(const Matrix& a, const Matrix& b, double scale,
                   const PrecisionSpec& spec) {
  Matrix out = gemm(a, b, spec);
  if (spec.is_reference()) {
    for (double& v : out.data) v *= scale;
  } else {
    const Rounder r(spec);
    for (double& v : out.data) v = r.c(v * scale);
  }
  return out;
}

double fro_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

SpectralResult spectral_norm(const Matrix& a, int iters, double tol) {
  const int n = a.cols;
  std::mt19937_64 rng(0xC0FFEE);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = gauss(rng);

  const Matrix at = a.transposed();
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    // y = A^T (A x)
    std::vector<double> ax(a.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += a(i, j) * x[j];
      ax[i] = s;
    }
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < a.rows; ++i) s += at(j, i) * ax[i];
      y[j] = s;
    }
  };

  auto norm2 = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
  };

  double nv = norm2(v);
  if (nv == 0.0) v[0] = 1.0, nv = 1.0;
  for (double& x : v) x /= nv;

  std::vector<double> w(n);
  double prev = 0.0;
  SpectralResult res;
  res.converged = false;
  for (int it = 0; it < iters; ++it) {
    apply(v, w);
    const double lambda = norm2(w);  // Rayleigh estimate of sigma_max^2
    if (lambda == 0.0) return SpectralResult{0.0, true};
    for (int j = 0; j < n; ++j) v[j] = w[j] / lambda;
    const double nvv = norm2(v);
    for (double& x : v) x /= nvv;
    const double sigma = std::sqrt(lambda);
    if (it > 0 && std::fabs(sigma - prev) <= tol * std::max(sigma, 1e-300)) {
      return SpectralResult{sigma, true};
    }
    prev = sigma;
  }
  res.value = prev;
  return res;
}

std::vector<double> singular_values(const Matrix& a) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(to_eigen(a));
  const auto& sv = svd.singularValues();
  return std::vector<double>(sv.data(), sv.data() + sv.size());
}

double cond_ridge(const Matrix& a, double lambda) {
  const std::vector<double> sv = singular_values(a);
  const double smax = sv.front();
  const double smin = sv.back();
  return smax / (smin + lambda);
}

Matrix softmax_rows(const Matrix& s, const PrecisionSpec& spec) {
  Matrix p(s.rows, s.cols);
  if (spec.is_reference()) {
    for (int i = 0; i < s.rows; ++i) {
      double m = s(i, 0);
      for (int j = 1; j < s.cols; ++j) m = std::max(m, s(i, j));
      double sum = 0.0;
      for (int j = 0; j < s.cols; ++j) {
        p(i, j) = std::exp(s(i, j) - m);
        sum += p(i, j);
      }
      for (int j = 0; j < s.cols; ++j) p(i, j) /= sum;
    }
    return p;
  }
  const Rounder r(spec);
  for (int i = 0; i < s.rows; ++i) {
    double m = s(i, 0);
    for (int j = 1; j < s.cols; ++j) m = std::max(m, s(i, j));
    double sum = 0.0;
    for (int j = 0; j < s.cols; ++j) {
      const double t = r.c(s(i, j) - m);
      p(i, j) = r.c(std::exp(t));
      sum = r.a(sum + p(i, j));
    }
    for (int j = 0; j < s.cols; ++j) p(i, j) = r.c(p(i, j) / sum);
  }
  return p;
}

double softmax_jac_norm(const std::vector<double>& p, int iters, double tol) {
  const int n = static_cast<int>(p.size());
  if (n <= 1) return 0.0;

  // Deterministic start vector in 1^perp.
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = (i % 2 == 0) ? 1.0 : -1.0;
  if (n % 2 == 1) v[n - 1] = 0.0;

  auto project = [&](std::vector<double>& x) {
    double mean = 0.0;
    for (double t : x) mean += t;
    mean /= n;
    for (double& t : x) t -= mean;
  };
  auto norm2 = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double t : x) s += t * t;
    return std::sqrt(s);
  };

  project(v);
  double nv = norm2(v);
  if (nv == 0.0) {
    v[0] = 1.0;
    if (n > 1) v[1] = -1.0;
    project(v);
    nv = norm2(v);
  }
  for (double& t : v) t /= nv;

  // Rayleigh-quotient power iteration with a residual stop. The Rayleigh
  // estimate never exceeds lambda_max, and for nearly degenerate top pairs it
  // lands inside the top cluster, where the successive-change rule stalls.
  double lambda = 0.0;
  std::vector<double> w(n);
  for (int it = 0; it < iters; ++it) {
    // w = J v = p .* v - p (p^T v);  J is PSD on 1^perp.
    double pv = 0.0;
    for (int i = 0; i < n; ++i) pv += p[i] * v[i];
    for (int i = 0; i < n; ++i) w[i] = p[i] * v[i] - p[i] * pv;
    project(w);
    double ray = 0.0;  // v is unit, so v.w is the Rayleigh quotient
    for (int i = 0; i < n; ++i) ray += v[i] * w[i];
    lambda = ray;
    double res2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = w[i] - ray * v[i];
      res2 += r * r;
    }
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    for (int i = 0; i < n; ++i) v[i] = w[i] / nw;
    if (std::sqrt(res2) <= tol) break;
  }
  return std::max(lambda, 0.0);
}

bool is_prob_row(const std::vector<double>& p, double tol) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0) return false;
    sum += v;
  }
  return std::fabs(sum - 1.0) <= tol;
}

}  // namespace fragility
