#pragma once

#include <vector>

#include "fragility/matrix.hpp"
#include "fragility/precision.hpp"

namespace fragility {

/// Emulated GEMM: each multiply is rounded in the compute format and each
/// accumulation step in the accumulation format, with fixed left-to-right
/// sequential accumulation so results are bit-deterministic. A reference
/// (FP32) spec yields the exact double-precision product.
Matrix gemm(const Matrix& a, const Matrix& b, const PrecisionSpec& spec);

/// gemm followed by an elementwise multiply with `scale` (rounded under
/// emulation); used for the 1/sqrt(d) score scaling.
Matrix gemm_scaled(const Matrix& a, const Matrix& b, double scale,
                   const PrecisionSpec& spec);

double fro_norm(const Matrix& a);

struct SpectralResult {
  double value = 0.0;
  bool converged = true;
  operator double() const { return value; }
};

/// Power iteration on A^T A from a fixed-seed random start (seed 0xC0FFEE).
/// Returns the best estimate with converged=false if the relative change is
/// still above tol after `iters` iterations.
SpectralResult spectral_norm(const Matrix& a, int iters = 50, double tol = 1e-8);

/// All singular values, descending (dense SVD).
std::vector<double> singular_values(const Matrix& a);

/// sigma_max(A) / (sigma_min(A) + lambda) over the min(m,n) spectrum.
double cond_ridge(const Matrix& a, double lambda);

/// Row-wise max-shifted softmax; under emulation the subtract, exp, sum and
/// divide are each rounded per-op.
Matrix softmax_rows(const Matrix& s, const PrecisionSpec& spec);

/// Spectral norm of Diag(p) - p p^T restricted to the subspace orthogonal to
/// the all-ones vector. Rayleigh-quotient power iteration with per-iterate
/// projection, stopped on the eigenpair residual; the result lies in [0, 1/2].
double softmax_jac_norm(const std::vector<double>& p, int iters = 10000,
                        double tol = 1e-10);

/// Checks entries are nonnegative and sum to 1 within 1e-12.
bool is_prob_row(const std::vector<double>& p, double tol = 1e-12);

}  // namespace fragility
