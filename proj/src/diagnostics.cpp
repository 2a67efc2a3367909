#include "fragility/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fragility {

double kappa_score(const Matrix& q, const Matrix& k, const Matrix& s, int d,
                   NormMode mode) {
  const double ns = mode == NormMode::Frobenius ? fro_norm(s)
                                                : spectral_norm(s).value;
  if (ns == 0.0)
    throw Error(ErrorCode::ZeroScore, "kappa_score: degenerate zero scores");
  const double nq = mode == NormMode::Frobenius ? fro_norm(q)
                                                : spectral_norm(q).value;
  const double nk = mode == NormMode::Frobenius ? fro_norm(k)
                                                : spectral_norm(k).value;
  return nq * nk / (ns * std::sqrt(static_cast<double>(d)));
}

namespace {

double softmax_row_term(const Matrix& s, const Matrix& p, int i) {
  std::vector<double> prow(p.cols);
  double ns = 0.0, np = 0.0;
  for (int j = 0; j < p.cols; ++j) {
    prow[j] = p(i, j);
    ns += s(i, j) * s(i, j);
    np += p(i, j) * p(i, j);
  }
  const double jn = softmax_jac_norm(prow);
  return jn * std::sqrt(ns) / std::sqrt(np);
}

}  // namespace

double kappa_softmax(const Matrix& s, const Matrix& p) {
  double best = 0.0;
  for (int i = 0; i < s.rows; ++i)
    best = std::max(best, softmax_row_term(s, p, i));
  return best;
}

double kappa_softmax_sampled(const Matrix& s, const Matrix& p, int top_m) {
  std::vector<std::pair<double, int>> ranked(s.rows);
  for (int i = 0; i < s.rows; ++i) {
    double ns = 0.0;
    for (int j = 0; j < s.cols; ++j) ns += s(i, j) * s(i, j);
    ranked[i] = {ns, i};
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  double best = 0.0;
  const int m = std::min<int>(top_m, s.rows);
  for (int r = 0; r < m; ++r)
    best = std::max(best, softmax_row_term(s, p, ranked[r].second));
  return best;
}

double kappa_v(const Matrix& v, double lambda) { return cond_ridge(v, lambda); }

double kappa_eff(const Matrix& w1, const Matrix& w2, const Matrix& w_o,
                 double lambda) {
  return cond_ridge(w1, lambda) + cond_ridge(w2, lambda) +
         cond_ridge(w_o, lambda);
}

double rho_ln(double sigma2, double eps, int d_model, double eps_mach) {
  return sigma2 / eps * static_cast<double>(d_model) * eps_mach;
}

double c_ln(double sigma, double eps, double c1, double c2, double c3) {
  return c1 * sigma / std::sqrt(eps) + c2 * sigma * sigma / eps + c3;
}

double attention_bound(const HeadDiagnostics& diag, double eps_eff,
                       double c_gemm, double c_gemm_prime, double c_smx) {
  return (c_smx + diag.kappa_softmax * (1.0 + c_gemm * diag.kappa_score) +
          c_gemm_prime) *
         eps_eff * diag.kappa_v;
}

double relaxation_factor(double rho) {
  if (rho < 0.0 || rho >= 1.0)
    throw Error(ErrorCode::SmallGainViolation,
                "relaxation_factor: rho outside [0,1)");
  return (1.0 + rho) / (1.0 - rho);
}

double depth_relaxation(const std::vector<double>& rhos) {
  double prod = 1.0;
  for (double r : rhos) prod *= relaxation_factor(r);
  return prod;
}

double first_order_factor(double rho) { return 1.0 + rho; }

double sigma2_median(const Matrix& ln_input) {
  std::vector<double> vars(ln_input.rows);
  for (int i = 0; i < ln_input.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < ln_input.cols; ++j) mean += ln_input(i, j);
    mean /= ln_input.cols;
    double v = 0.0;
    for (int j = 0; j < ln_input.cols; ++j) {
      const double c = ln_input(i, j) - mean;
      v += c * c;
    }
    vars[i] = v / ln_input.cols;
  }
  std::sort(vars.begin(), vars.end());
  const size_t n = vars.size();
  return n % 2 == 1 ? vars[n / 2] : 0.5 * (vars[n / 2 - 1] + vars[n / 2]);
}

LayerDiagnostics compute_layer_diagnostics(const LayerDual& layer,
                                           const LayerParams& params,
                                           const ModelConfig& cfg,
                                           const PrecisionSpec& lp_spec,
                                           const DiagnosticsOptions& opt,
                                           double rho_resid_attn,
                                           double rho_resid_ffn) {
  LayerDiagnostics d;
  const int dh = cfg.d_head();
  for (const HeadTaps& h : layer.ref_heads) {
    HeadDiagnostics hd;
    hd.kappa_softmax = kappa_softmax(h.s, h.p);
    hd.kappa_v = kappa_v(h.v, opt.ridge);
    d.heads.push_back(hd);
  }
  // kappa_score per head from the reference LN output.
  const PrecisionSpec ref;
  const Matrix ln_out = ln_rows(layer.ref_ln1_in, params.ln1, ref);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const int c0 = h * dh;
    const Matrix q = matmul(ln_out, params.w_q.col_block(c0, c0 + dh));
    const Matrix k = matmul(ln_out, params.w_k.col_block(c0, c0 + dh));
    try {
      d.heads[h].kappa_score =
          kappa_score(q, k, layer.ref_heads[h].s, dh, opt.score_norm);
    } catch (const Error&) {
      d.heads[h].kappa_score = std::numeric_limits<double>::infinity();
    }
  }

  d.agg = HeadDiagnostics{};
  for (const HeadDiagnostics& h : d.heads) {
    if (opt.head_agg == HeadAggregation::Max) {
      d.agg.kappa_score = std::max(d.agg.kappa_score, h.kappa_score);
      d.agg.kappa_softmax = std::max(d.agg.kappa_softmax, h.kappa_softmax);
      d.agg.kappa_v = std::max(d.agg.kappa_v, h.kappa_v);
    } else {
      d.agg.kappa_score += h.kappa_score;
      d.agg.kappa_softmax += h.kappa_softmax;
      d.agg.kappa_v += h.kappa_v;
    }
  }

  d.kappa_eff = kappa_eff(params.w1, params.w2, params.w_o, opt.ridge);
  d.w_o_norm = spectral_norm(params.w_o).value;

  const double ln_eps_mach = eps_mach(lp_spec.compute);
  d.sigma2_median_ln1 = sigma2_median(layer.ref_ln1_in);
  d.sigma2_median_ln2 = sigma2_median(layer.ref_after_attn);
  d.rho_ln_1 = rho_ln(d.sigma2_median_ln1, params.ln1.eps, cfg.d_model, ln_eps_mach);
  d.rho_ln_2 = rho_ln(d.sigma2_median_ln2, params.ln2.eps, cfg.d_model, ln_eps_mach);
  d.rho_ln = std::max(d.rho_ln_1, d.rho_ln_2);
  const KernelConstants& kc = opt.constants;
  d.c_ln = c_ln(std::sqrt(d.sigma2_median_ln1), params.ln1.eps, kc.c1, kc.c2, kc.c3) +
           c_ln(std::sqrt(d.sigma2_median_ln2), params.ln2.eps, kc.c1, kc.c2, kc.c3);

  d.rho_resid_attn = rho_resid_attn;
  d.rho_resid_ffn = rho_resid_ffn;
  return d;
}

double combined_predictor(const LayerDiagnostics& diag) {
  return diag.agg.kappa_softmax * (1.0 + diag.agg.kappa_score) *
             diag.agg.kappa_v * diag.w_o_norm +
         diag.kappa_eff + diag.c_ln;
}

double bound_bracket(const LayerDiagnostics& diag, double c_gemm) {
  return diag.kappa_eff +
         diag.agg.kappa_softmax * (1.0 + c_gemm * diag.agg.kappa_score) *
             diag.agg.kappa_v +
         diag.c_ln;
}

BoundBreakdown unified_bound(const std::vector<double>& brackets,
                             const std::vector<std::vector<double>>& rhos_per_layer,
                             double eps_eff) {
  const size_t depth = brackets.size();
  if (rhos_per_layer.size() != depth)
    throw Error(ErrorCode::DimensionMismatch, "unified_bound: length mismatch");
  BoundBreakdown b;
  b.brackets = brackets;
  b.downstream.assign(depth, 1.0);
  for (size_t l = 0; l < depth; ++l) {
    for (size_t k = l + 1; k < depth; ++k) {
      for (double r : rhos_per_layer[k]) {
        if (r >= 1.0) b.vacuous = true;
        b.downstream[l] *= first_order_factor(r);
      }
    }
  }
  // A violation anywhere (including the leading layer) flags vacuity.
  for (const auto& layer : rhos_per_layer)
    for (double r : layer)
      if (r >= 1.0) b.vacuous = true;
  double sum = 0.0;
  for (size_t l = 0; l < depth; ++l) sum += brackets[l] * b.downstream[l];
  b.total = eps_eff * sum;
  return b;
}

const char* const kDiagnosticsCsvHeader =
    "step,layer,head,kappa_score,kappa_softmax,kappa_V,kappa_eff,rho_LN,C_LN,"
    "rho_resid_attn,rho_resid_ffn,w_o_norm,bracket,bound_total,r_block_attn,"
    "r_block_ffn,r_block_out,predictor,predictor_eps";

std::string diagnostics_csv_row(const DiagnosticsRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << r.layer << ',' << r.head << ',' << r.kappa_score
     << ',' << r.kappa_softmax << ',' << r.kappa_v << ',' << r.kappa_eff << ','
     << r.rho_ln << ',' << r.c_ln << ',' << r.rho_resid_attn << ','
     << r.rho_resid_ffn << ',' << r.w_o_norm << ',' << r.bracket << ','
     << r.bound_total << ',' << r.r_block_attn << ',' << r.r_block_ffn << ','
     << r.r_block_out << ',' << r.predictor << ',' << r.predictor_eps;
  return os.str();
}

}  // namespace fragility
