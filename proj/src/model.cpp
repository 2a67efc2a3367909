#include "fragility/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

namespace fragility {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Matrix gaussian_matrix(int rows, int cols, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data) v = scale * gauss(rng);
  return m;
}

/// Elementwise residual add, rounded in the compute format under emulation.
Matrix residual_add(const Matrix& x, const Matrix& branch,
                    const PrecisionSpec& spec) {
  Matrix out = x;
  if (spec.is_reference()) {
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += branch.data[i];
    return out;
  }
  const Rounder r(spec);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = r.c(out.data[i] + branch.data[i]);
  return out;
}

double mismatch(const Matrix& lp, const Matrix& ref) {
  const double denom = fro_norm(ref);
  if (denom == 0.0) return 0.0;
  return fro_norm(lp - ref) / denom;
}

}  // namespace

void ModelConfig::validate() const {
  if (depth < 1 || seq_len < 1 || d_model < 1 || n_heads < 1 || ffn_hidden < 1)
    throw Error(ErrorCode::ConfigInvalid, "model dimensions must be >= 1");
  if (d_model % n_heads != 0)
    throw Error(ErrorCode::ConfigInvalid, "d_model must be divisible by n_heads");
  if (ln_eps <= 0.0)
    throw Error(ErrorCode::ConfigInvalid, "ln_eps must be positive");
}

Params init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const double s_model = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const double s_ffn = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_hidden));
  Params p;
  p.layers.resize(cfg.depth);
  for (LayerParams& layer : p.layers) {
    layer.w_q = gaussian_matrix(cfg.d_model, cfg.d_model, s_model, rng);
    layer.w_k = gaussian_matrix(cfg.d_model, cfg.d_model, s_model, rng);
    layer.w_v = gaussian_matrix(cfg.d_model, cfg.d_model, s_model, rng);
    layer.w_o = gaussian_matrix(cfg.d_model, cfg.d_model, s_model, rng);
    layer.w1 = gaussian_matrix(cfg.d_model, cfg.ffn_hidden, s_model, rng);
    layer.w2 = gaussian_matrix(cfg.ffn_hidden, cfg.d_model, s_ffn, rng);
    layer.ln1.gamma.assign(cfg.d_model, 1.0);
    layer.ln1.beta.assign(cfg.d_model, 0.0);
    layer.ln1.eps = cfg.ln_eps;
    layer.ln2 = layer.ln1;
  }
  return p;
}

std::vector<double> ln_forward(const std::vector<double>& x,
                               const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps,
                               const PrecisionSpec& spec) {
  if (eps <= 0.0) throw Error(ErrorCode::ConfigInvalid, "ln_forward: eps <= 0");
  const int d = static_cast<int>(x.size());
  std::vector<double> out(d);
  if (spec.is_reference()) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= d;
    const double denom = std::sqrt(var + eps);
    for (int i = 0; i < d; ++i)
      out[i] = (x[i] - mean) / denom * gamma[i] + beta[i];
    return out;
  }
  const Rounder r(spec.with_context(KernelContext::LayerNorm));
  double sum = 0.0;
  for (double v : x) sum = r.c(sum + v);
  const double mean = r.c(sum / d);
  double var = 0.0;
  for (double v : x) {
    const double c = r.c(v - mean);
    var = r.c(var + r.c(c * c));
  }
  var = r.c(var / d);
  const double denom = r.c(std::sqrt(r.c(var + eps)));
  for (int i = 0; i < d; ++i) {
    const double n = r.c(r.c(x[i] - mean) / denom);
    out[i] = r.c(r.c(n * gamma[i]) + beta[i]);
  }
  return out;
}

Matrix ln_rows(const Matrix& x, const LayerNormParams& ln,
               const PrecisionSpec& spec) {
  Matrix out(x.rows, x.cols);
  std::vector<double> row(x.cols);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = 0; j < x.cols; ++j) row[j] = x(i, j);
    const std::vector<double> y = ln_forward(row, ln.gamma, ln.beta, ln.eps, spec);
    for (int j = 0; j < x.cols; ++j) out(i, j) = y[j];
  }
  return out;
}

AttentionResult attention_forward(const Matrix& x, const LayerParams& layer,
                                  const ModelConfig& cfg,
                                  const PrecisionSpec& spec, bool keep_taps) {
  const int dh = cfg.d_head();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix concat(x.rows, cfg.d_model);
  AttentionResult res;
  for (int h = 0; h < cfg.n_heads; ++h) {
    const int c0 = h * dh;
    const Matrix wq = layer.w_q.col_block(c0, c0 + dh);
    const Matrix wk = layer.w_k.col_block(c0, c0 + dh);
    const Matrix wv = layer.w_v.col_block(c0, c0 + dh);
    const Matrix q = gemm(x, wq, spec);
    const Matrix k = gemm(x, wk, spec);
    const Matrix v = gemm(x, wv, spec);
    const Matrix s = gemm_scaled(q, k.transposed(), inv_sqrt_d, spec);
    const Matrix p = softmax_rows(s, spec);
    const Matrix a = gemm(p, v, spec);
    concat.set_col_block(c0, a);
    if (keep_taps) res.heads.push_back(HeadTaps{s, p, v, a});
  }
  res.out = gemm(concat, layer.w_o, spec);
  return res;
}

Matrix ffn_forward(const Matrix& x, const LayerParams& layer,
                   const PrecisionSpec& spec) {
  Matrix h = gemm(x, layer.w1, spec);
  if (spec.is_reference()) {
    for (double& v : h.data) v = gelu(v);
  } else {
    const Rounder r(spec);
    for (double& v : h.data) v = r.c(gelu(v));
  }
  return gemm(h, layer.w2, spec);
}

namespace {

struct BlockOut {
  Matrix after_attn, ffn_branch, out;
  AttentionResult attn;
};

BlockOut block_forward(const Matrix& x, const LayerParams& layer,
                       const ModelConfig& cfg, const PrecisionSpec& spec,
                       bool keep_taps) {
  BlockOut b;
  b.attn = attention_forward(ln_rows(x, layer.ln1, spec), layer, cfg, spec,
                             keep_taps);
  b.after_attn = residual_add(x, b.attn.out, spec);
  b.ffn_branch = ffn_forward(ln_rows(b.after_attn, layer.ln2, spec), layer, spec);
  b.out = residual_add(b.after_attn, b.ffn_branch, spec);
  return b;
}

}  // namespace

DualTrace forward_dual(const Params& params, const ModelConfig& cfg,
                       const Matrix& x0, const PrecisionSpec& lp_spec) {
  if (x0.rows != cfg.seq_len || x0.cols != cfg.d_model)
    throw Error(ErrorCode::DimensionMismatch, "forward_dual: bad input shape");
  const PrecisionSpec ref_spec;  // FP32 compute == reference double path
  DualTrace trace;
  trace.layers.resize(params.layers.size());
  Matrix x_ref = x0;
  Matrix x_lp = x0;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    LayerDual& ld = trace.layers[l];
    ld.ref_ln1_in = x_ref;
    ld.lp_ln1_in = x_lp;
    BlockOut ref = block_forward(x_ref, params.layers[l], cfg, ref_spec, true);
    BlockOut lp = block_forward(x_lp, params.layers[l], cfg, lp_spec, false);
    ld.ref_after_attn = ref.after_attn;
    ld.ref_ffn_branch = ref.ffn_branch;
    ld.ref_out = ref.out;
    ld.ref_heads = std::move(ref.attn.heads);
    ld.lp_after_attn = lp.after_attn;
    ld.lp_ffn_branch = lp.ffn_branch;
    ld.lp_out = lp.out;
    ld.r_attn = mismatch(lp.after_attn, ref.after_attn);
    ld.r_ffn = mismatch(lp.ffn_branch, ref.ffn_branch);
    ld.r_out = mismatch(lp.out, ref.out);
    x_ref = std::move(ref.out);
    x_lp = std::move(lp.out);
  }
  trace.r_final = trace.layers.back().r_out;
  return trace;
}

double residual_jacobian_norm(const BranchFn& branch,
                              const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  if (n > 4096)
    throw Error(ErrorCode::DimensionTooLarge,
                "residual_jacobian_norm: dense limit is 4096");
  double xmax = 0.0;
  for (double v : x) xmax = std::max(xmax, std::fabs(v));
  const double h = 1e-5 * std::max(1.0, xmax);

  std::vector<double> xp = x;
  const std::vector<double> f0 = branch(x);
  const int m = static_cast<int>(f0.size());
  Eigen::MatrixXd jac(m, n);
  for (int j = 0; j < n; ++j) {
    xp[j] = x[j] + h;
    const std::vector<double> fp = branch(xp);
    xp[j] = x[j] - h;
    const std::vector<double> fm = branch(xp);
    xp[j] = x[j];
    for (int i = 0; i < m; ++i) jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
  }
  // only sigma_max is needed; a full SVD of the m x n Jacobian dominates the
  // cost at larger widths
  Matrix jm(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) jm(i, j) = jac(i, j);
  const SpectralResult sr = spectral_norm(jm, 200, 1e-12);
  if (sr.converged) return sr.value;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(jac);
  return svd.singularValues()(0);
}

double attn_branch_rho(const Params& params, const ModelConfig& cfg,
                       int layer_idx, const Matrix& x_in) {
  const PrecisionSpec ref;
  const LayerParams& layer = params.layers[layer_idx];
  BranchFn branch = [&](const std::vector<double>& v) {
    const Matrix x = unflatten(v, x_in.rows, x_in.cols);
    return flatten(
        attention_forward(ln_rows(x, layer.ln1, ref), layer, cfg, ref).out);
  };
  return residual_jacobian_norm(branch, flatten(x_in));
}

double ffn_branch_rho(const Params& params, const ModelConfig& cfg,
                      int layer_idx, const Matrix& x_in) {
  const PrecisionSpec ref;
  const LayerParams& layer = params.layers[layer_idx];
  BranchFn branch = [&](const std::vector<double>& v) {
    const Matrix x = unflatten(v, x_in.rows, x_in.cols);
    return flatten(ffn_forward(ln_rows(x, layer.ln2, ref), layer, ref));
  };
  return residual_jacobian_norm(branch, flatten(x_in));
}

double loss_proxy(const Matrix& out, const Matrix& target) {
  double s = 0.0;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double d = out.data[i] - target.data[i];
    s += d * d;
  }
  return s / static_cast<double>(out.data.size());
}

std::vector<double> flatten(const Matrix& m) { return m.data; }

Matrix unflatten(const std::vector<double>& v, int rows, int cols) {
  Matrix m(rows, cols);
  m.data = v;
  return m;
}

}  // namespace fragility
