#pragma once

#include <string>
#include <vector>

#include "fragility/model.hpp"

namespace fragility {

enum class NormMode { Frobenius, Spectral };
enum class HeadAggregation { Max, Sum };

/// First-order kernel constants. c_gemm / c'_gemm default to the inner
/// accumulation length of the corresponding GEMM and are filled in per
/// call site; the rest are fixed here.
struct KernelConstants {
  double c_smx = 4.0;
  double c1 = 1.0, c2 = 1.0, c3 = 1.0;  // LayerNorm bound constants
};

struct DiagnosticsOptions {
  NormMode score_norm = NormMode::Frobenius;
  HeadAggregation head_agg = HeadAggregation::Max;
  double ridge = 1e-6;
  KernelConstants constants;
  /// "paper-budget" preset: cap power iteration at 2-3 steps. Off by
  /// default; desk scale runs to convergence.
  bool paper_budget = false;
};

struct HeadDiagnostics {
  double kappa_score = 0.0;
  double kappa_softmax = 0.0;
  double kappa_v = 0.0;
};

struct LayerDiagnostics {
  std::vector<HeadDiagnostics> heads;
  HeadDiagnostics agg;  // max or sum over heads
  double kappa_eff = 0.0;
  double c_ln = 0.0;     // summed over the layer's two LN instances
  double rho_ln = 0.0;   // max over the layer's two LN instances
  double rho_ln_1 = 0.0, rho_ln_2 = 0.0;
  double rho_resid_attn = 0.0, rho_resid_ffn = 0.0;
  double w_o_norm = 0.0;
  double sigma2_median_ln1 = 0.0, sigma2_median_ln2 = 0.0;
};

struct BoundBreakdown {
  std::vector<double> brackets;    // per layer
  std::vector<double> downstream;  // prod_{k>l} (1+rho_k), first-order factors
  std::vector<double> attn_bounds; // per-layer attention-only bound (Eq. 1 shape)
  double total = 0.0;
  bool vacuous = false;  // some rho_k >= 1
};

/// ||Q|| ||K|| / (||S|| sqrt(d)). Throws ZeroScore when ||S|| == 0.
double kappa_score(const Matrix& q, const Matrix& k, const Matrix& s, int d,
                   NormMode mode = NormMode::Frobenius);

/// max_i ||J(P_i)||_2 ||S_i|| / ||P_i||, exact over all rows.
double kappa_softmax(const Matrix& s, const Matrix& p);

/// Speed preset: evaluate only the top_m rows ranked by ||S_i||.
double kappa_softmax_sampled(const Matrix& s, const Matrix& p, int top_m);

double kappa_v(const Matrix& v, double lambda = 1e-6);

/// kappa(W1) + kappa(W2) + kappa(W_O), each via cond_ridge.
double kappa_eff(const Matrix& w1, const Matrix& w2, const Matrix& w_o,
                 double lambda);

/// (sigma2 / eps) * d_model * eps_mach.
double rho_ln(double sigma2, double eps, int d_model, double eps_mach);

/// C1 sigma/sqrt(eps) + C2 sigma^2/eps + C3.
double c_ln(double sigma, double eps, double c1, double c2, double c3);

/// [c_smx + kappa_softmax (1 + c_gemm kappa_score) + c'_gemm] eps kappa(V).
double attention_bound(const HeadDiagnostics& diag, double eps_eff,
                       double c_gemm, double c_gemm_prime, double c_smx);

/// Exact residual conditioning factor (1+rho)/(1-rho). Throws
/// SmallGainViolation for rho >= 1.
double relaxation_factor(double rho);
/// Product of exact factors over a stack.
double depth_relaxation(const std::vector<double>& rhos);
/// First-order relaxation (1+rho); heuristic, not an upper bound.
double first_order_factor(double rho);

/// Median over token rows of the per-token feature variance.
double sigma2_median(const Matrix& ln_input);

/// Assembles per-layer diagnostics from the reference taps of a DualTrace
/// layer. rho_resid_* are passed in (they come from finite differences and
/// may be refreshed at a coarser cadence).
LayerDiagnostics compute_layer_diagnostics(const LayerDual& layer,
                                           const LayerParams& params,
                                           const ModelConfig& cfg,
                                           const PrecisionSpec& lp_spec,
                                           const DiagnosticsOptions& opt,
                                           double rho_resid_attn,
                                           double rho_resid_ffn);

/// Exp-1 combined predictor for one layer:
/// kappa_softmax (1 + kappa_score) kappa(V) ||W_O||_2 + kappa_eff + C_LN.
double combined_predictor(const LayerDiagnostics& diag);

/// Unified depth-L bound: total = eps * sum_l bracket_l * prod_{k>l}(1+rho_k),
/// with brackets kappa_eff + kappa_softmax (1 + c kappa_score) kappa(V) + C_LN.
/// `rhos` holds one residual gain per residual branch in forward order
/// (attn_1, ffn_1, attn_2, ...); downstream factors for layer l use all
/// branches of layers k > l.
BoundBreakdown unified_bound(const std::vector<double>& brackets,
                             const std::vector<std::vector<double>>& rhos_per_layer,
                             double eps_eff);

/// Bracket term of Eq. 3 for one layer. c_gemm is the score-GEMM inner length.
double bound_bracket(const LayerDiagnostics& diag, double c_gemm);

/// One CSV row of the diagnostics log (per step, layer, head).
struct DiagnosticsRecord {
  int step = 0, layer = 0, head = 0;
  double kappa_score = 0.0, kappa_softmax = 0.0, kappa_v = 0.0;
  double kappa_eff = 0.0, rho_ln = 0.0, c_ln = 0.0;
  double rho_resid_attn = 0.0, rho_resid_ffn = 0.0, w_o_norm = 0.0;
  double bracket = 0.0, bound_total = 0.0;
  double r_block_attn = 0.0, r_block_ffn = 0.0, r_block_out = 0.0;
  double predictor = 0.0, predictor_eps = 0.0;
};

extern const char* const kDiagnosticsCsvHeader;
std::string diagnostics_csv_row(const DiagnosticsRecord& rec);

}  // namespace fragility
