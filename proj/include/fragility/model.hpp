#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fragility/linalg.hpp"
#include "fragility/matrix.hpp"
#include "fragility/precision.hpp"

namespace fragility {

struct ModelConfig {
  int depth = 4;
  int seq_len = 16;
  int d_model = 32;
  int n_heads = 4;
  int ffn_hidden = 64;
  double ln_eps = 1e-5;
  uint64_t seed = 0;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

struct LayerNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  double eps = 1e-5;
};

struct LayerParams {
  // Attention projections are d_model x d_model, head-blocked by columns
  // (head h owns columns [h*d_head, (h+1)*d_head)).
  Matrix w_q, w_k, w_v, w_o;
  Matrix w1, w2;  // FFN: d_model x m, m x d_model
  LayerNormParams ln1, ln2;
};

struct Params {
  std::vector<LayerParams> layers;
};

/// Seed-reproducible init: i.i.d. Gaussians scaled 1/sqrt(fan_in), gamma=1,
/// beta=0, ln_eps from the config.
Params init_params(const ModelConfig& cfg);

/// LayerNorm over one feature row. Under emulation every reduction step,
/// the rsqrt and the affine ops are rounded in the compute precision
/// (LAYERNORM context).
std::vector<double> ln_forward(const std::vector<double>& x,
                               const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps,
                               const PrecisionSpec& spec);

/// Row-wise ln_forward over a matrix.
Matrix ln_rows(const Matrix& x, const LayerNormParams& ln,
               const PrecisionSpec& spec);

struct HeadTaps {
  Matrix s, p, v, a;
};

struct AttentionResult {
  Matrix out;                   // n x d_model, after W_O
  std::vector<HeadTaps> heads;  // populated when keep_taps
};

AttentionResult attention_forward(const Matrix& x, const LayerParams& layer,
                                  const ModelConfig& cfg,
                                  const PrecisionSpec& spec,
                                  bool keep_taps = false);

/// Two-layer FFN with GELU, per-op rounding under emulation.
Matrix ffn_forward(const Matrix& x, const LayerParams& layer,
                   const PrecisionSpec& spec);

struct LayerDual {
  // Reference-arm taps.
  Matrix ref_ln1_in, ref_after_attn, ref_ffn_branch, ref_out;
  std::vector<HeadTaps> ref_heads;
  // Low-precision-arm taps.
  Matrix lp_ln1_in, lp_after_attn, lp_ffn_branch, lp_out;
  // Forward-mismatch ratios at the three taps.
  double r_attn = 0.0, r_ffn = 0.0, r_out = 0.0;
};

struct DualTrace {
  std::vector<LayerDual> layers;
  double r_final = 0.0;  // r_out of the last layer
};

/// Runs the reference pass and the emulated pass with identical params and
/// inputs; the two passes share no rounding state.
DualTrace forward_dual(const Params& params, const ModelConfig& cfg,
                       const Matrix& x0, const PrecisionSpec& lp_spec);

using BranchFn = std::function<std::vector<double>(const std::vector<double>&)>;

/// Largest singular value of the dense central-difference Jacobian of
/// `branch` at x (step 1e-5 * max(1, ||x||_inf)). Throws DimensionTooLarge
/// above 4096 inputs.
double residual_jacobian_norm(const BranchFn& branch, const std::vector<double>& x);

/// Residual-branch Jacobian norms (attention branch, then FFN branch) for
/// layer `layer_idx`, evaluated in reference precision at the given inputs.
double attn_branch_rho(const Params& params, const ModelConfig& cfg,
                       int layer_idx, const Matrix& x_in);
double ffn_branch_rho(const Params& params, const ModelConfig& cfg,
                      int layer_idx, const Matrix& x_in);

/// Scalar loss proxy: mean squared difference against a fixed target.
double loss_proxy(const Matrix& out, const Matrix& target);

std::vector<double> flatten(const Matrix& m);
Matrix unflatten(const std::vector<double>& v, int rows, int cols);

}  // namespace fragility
