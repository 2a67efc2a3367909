#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "fragility/linalg.hpp"

using namespace fragility;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.data) x = scale * g(rng);
  return m;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

PrecisionSpec spec_of(FpFormat f, Accumulation a = Accumulation::Native) {
  PrecisionSpec s;
  s.compute = f;
  s.accumulate = a;
  return s;
}

}  // namespace

TEST_CASE("gemm trivia") {
  const Matrix i2 = Matrix::identity(2);
  const PrecisionSpec ref;
  const Matrix p = gemm(i2, i2, ref);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(p(i, j) == (i == j ? 1.0 : 0.0));

  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix z = Matrix::zeros(4, 2);
  const Matrix az = gemm(a, z, spec_of(FpFormat::FP16));
  for (double x : az.data) CHECK(x == 0.0);

  CHECK_THROWS_AS((void)gemm(a, i2, ref), Error);
}

TEST_CASE("reference gemm equals the exact product") {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(5, 7, rng);
  const Matrix b = random_matrix(7, 3, rng);
  const Matrix g = gemm(a, b, PrecisionSpec{});
  const Matrix m = matmul(a, b);
  for (size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == m.data[i]);
}

TEST_CASE("emulated gemm satisfies the first-order error bound") {
  std::mt19937_64 rng(3);
  const int k = 8;
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix a = random_matrix(8, k, rng);
    const Matrix b = random_matrix(k, 8, rng);
    const Matrix exact = matmul(a, b);
    const Matrix lp = gemm(a, b, spec_of(FpFormat::FP16));
    const double err = fro_norm(lp - exact);
    CHECK(err <= k * eps_mach(FpFormat::FP16) * fro_norm(a) * fro_norm(b));
  }
}

TEST_CASE("gemm error shrinks with a wider accumulator") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = random_matrix(8, 8, rng);
    const Matrix b = random_matrix(8, 8, rng);
    const Matrix exact = matmul(a, b);
    const double e_native =
        fro_norm(gemm(a, b, spec_of(FpFormat::FP16)) - exact);
    const double e_acc =
        fro_norm(gemm(a, b, spec_of(FpFormat::FP16, Accumulation::Fp32Acc)) - exact);
    CHECK(e_native >= e_acc);
  }
}

TEST_CASE("spectral norm against the dense SVD oracle") {
  CHECK(spectral_norm(Matrix::identity(3)).value == doctest::Approx(1.0).epsilon(1e-9));
  Matrix d(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  CHECK(spectral_norm(d).value == doctest::Approx(3.0).epsilon(1e-9));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(10, 10, rng);
    const SpectralResult got = spectral_norm(a);
    const double want = to_eigen(a).jacobiSvd().singularValues()(0);
    if (got.converged) {
      CHECK(std::fabs(got.value - want) <= 1e-6 * want);
    } else {
      // power iteration stalled (near-degenerate top pair): the Rayleigh
      // estimate still sits just below sigma_max and well above sigma_2-free
      // lower bounds
      CHECK(got.value <= want * (1.0 + 1e-9));
      CHECK(got.value >= 0.9 * want);
    }
    CHECK(got.value <= fro_norm(a) * (1.0 + 1e-12));
  }

  // rank-1: spectral equals Frobenius
  const Matrix u = random_matrix(6, 1, rng);
  const Matrix v = random_matrix(1, 6, rng);
  const Matrix r1 = matmul(u, v);
  CHECK(std::fabs(spectral_norm(r1).value - fro_norm(r1)) <= 1e-9 * fro_norm(r1));
}

TEST_CASE("cond_ridge pinned values") {
  CHECK(cond_ridge(Matrix::identity(4), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  Matrix d(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = 1.0;
  CHECK(cond_ridge(d, 0.0) == doctest::Approx(2.0).epsilon(1e-12));
  Matrix s(2, 2);
  s(0, 0) = 1.0;
  CHECK(cond_ridge(s, 1e-6) == doctest::Approx(1e6).epsilon(1e-9));
}

TEST_CASE("softmax rows: symmetry, shift safety, shift invariance") {
  Matrix s(1, 2);
  const PrecisionSpec ref;
  Matrix p = softmax_rows(s, ref);
  CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  Matrix big(1, 2);
  big(0, 0) = 1000.0;
  Matrix pb = softmax_rows(big, ref);
  CHECK(pb(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pb(0, 1) >= 0.0);
  CHECK(std::isfinite(pb(0, 1)));

  // exact shift invariance: entries and the shift chosen exactly representable
  Matrix a(1, 4), b(1, 4);
  const double vals[] = {0.25, -1.5, 0.75, 2.0};
  for (int j = 0; j < 4; ++j) {
    a(0, j) = vals[j];
    b(0, j) = vals[j] + 4.0;
  }
  const Matrix pa = softmax_rows(a, ref);
  const Matrix pbs = softmax_rows(b, ref);
  for (int j = 0; j < 4; ++j) CHECK(pa(0, j) == pbs(0, j));
}

TEST_CASE("softmax rows sum to one under emulation") {
  std::mt19937_64 rng(6);
  const Matrix s = random_matrix(8, 16, rng, 3.0);
  for (FpFormat f : {FpFormat::BF16, FpFormat::FP16}) {
    const Matrix p = softmax_rows(s, spec_of(f));
    for (int i = 0; i < p.rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < p.cols; ++j) acc += p(i, j);
      CHECK(std::fabs(acc - 1.0) <= p.cols * eps_mach(f));
    }
  }
}

TEST_CASE("softmax Jacobian norm: ties, one-hot, dense oracle") {
  CHECK(softmax_jac_norm({0.5, 0.5}) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(softmax_jac_norm({1.0, 0.0, 0.0}) == doctest::Approx(0.0).epsilon(1e-9));

  const auto dense_oracle = [](const std::vector<double>& p) {
    const int n = static_cast<int>(p.size());
    Eigen::MatrixXd j(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        j(a, b) = (a == b ? p[a] : 0.0) - p[a] * p[b];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    return es.eigenvalues().maxCoeff();
  };
  CHECK(softmax_jac_norm({0.7, 0.2, 0.1}) ==
        doctest::Approx(dense_oracle({0.7, 0.2, 0.1})).epsilon(1e-9));

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 15);
    std::vector<double> p(n);
    double acc = 0.0;
    for (double& x : p) acc += (x = -std::log(u(rng)));
    for (double& x : p) x /= acc;
    const double got = softmax_jac_norm(p);
    CHECK(got == doctest::Approx(dense_oracle(p)).epsilon(1e-8));
    CHECK(got >= 0.0);
    CHECK(got <= 0.5 + 1e-9);
  }
}

TEST_CASE("Jacobian bound is approached by sharpening two-way ties") {
  double prev = 0.0;
  for (double t : {0.4, 0.45, 0.49, 0.499}) {
    std::vector<double> p = {t, t, 1.0 - 2.0 * t};
    const double v = softmax_jac_norm(p);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK(prev > 0.49);
}

TEST_CASE("is_prob_row") {
  CHECK(is_prob_row({0.5, 0.5}));
  CHECK(is_prob_row({1.0}));
  CHECK_FALSE(is_prob_row({0.6, 0.5}));
  CHECK_FALSE(is_prob_row({-0.1, 1.1}));
}
