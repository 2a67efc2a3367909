#include "fragility/driver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "fragility/csv.hpp"
#include "fragility/stats.hpp"

namespace fragility {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double quantile95(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t idx = static_cast<size_t>(0.95 * (v.size() - 1) + 0.5);
  return v[idx];
}

double tail_mean(const std::vector<double>& v, int tail_steps) {
  if (v.empty()) return 0.0;
  const size_t n = std::min<size_t>(v.size(), std::max(tail_steps, 1));
  double s = 0.0;
  for (size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(n);
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (int w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  for (auto& t : workers) t.join();
}

// Random-walk drift on the weight matrices (LayerNorm params stay put so the
// mitigation experiment owns eps). Step scale matches the init scale.
void drift_matrix(Matrix& w, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double s = scale / std::sqrt(static_cast<double>(w.rows));
  for (double& x : w.data) x += s * gauss(rng);
}

void drift_params(Params& params, double scale, std::mt19937_64& rng) {
  for (auto& layer : params.layers) {
    drift_matrix(layer.w_q, scale, rng);
    drift_matrix(layer.w_k, scale, rng);
    drift_matrix(layer.w_v, scale, rng);
    drift_matrix(layer.w_o, scale, rng);
    drift_matrix(layer.w1, scale, rng);
    drift_matrix(layer.w2, scale, rng);
  }
}

Matrix gaussian_matrix(int rows, int cols, double mean, double sigma,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& x : m.data) x = mean + sigma * gauss(rng);
  return m;
}

Matrix make_x0(const RunConfig& cfg, const ModelConfig& model,
               const PrecisionSpec& spec, uint64_t run_seed) {
  std::mt19937_64 rng(substream(cfg.root_seed, {run_seed, 1}));
  if (cfg.experiment == Experiment::Exp3) {
    // eps-dominated regime: per-feature fluctuations sized so rho_LN of the
    // first LayerNorm sits at scenario_rho_ln, riding on a large common
    // offset that the mean subtraction must cancel.
    const double sigma2 = cfg.exp3.scenario_rho_ln * model.ln_eps /
                          (model.d_model * eps_mach(spec.compute));
    return gaussian_matrix(model.seq_len, model.d_model, cfg.exp3.scenario_offset,
                           std::sqrt(sigma2), rng);
  }
  return gaussian_matrix(model.seq_len, model.d_model, 0.0, 1.0, rng);
}

Matrix make_target(const RunConfig& cfg, const ModelConfig& model,
                   uint64_t run_seed) {
  std::mt19937_64 rng(substream(cfg.root_seed, {run_seed, 2}));
  return gaussian_matrix(model.seq_len, model.d_model, 0.0, 1.0, rng);
}

Matrix pinv(const Matrix& a) {
  Eigen::MatrixXd e(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) e(i, j) = a(i, j);
  Eigen::MatrixXd p = e.completeOrthogonalDecomposition().pseudoInverse();
  Matrix out(a.cols, a.rows);
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out(i, j) = p(i, j);
  return out;
}

double tap_value(const DualTrace& trace, Tap tap) {
  const LayerDual& last = trace.layers.back();
  switch (tap) {
    case Tap::Attn: return last.r_attn;
    case Tap::Ffn: return last.r_ffn;
    case Tap::Block: return last.r_out;
  }
  return last.r_out;
}

// ---------------------------------------------------------------------------
// Scripted-tie scenario (lead-lag study)

struct ScriptedScenario {
  std::vector<int> tie_steps;
  Matrix wq_tie, wk_tie;  // layer-0 head-0 projection targets, d_model x d_head
  Matrix wq_inj, wk_inj;
  std::vector<double> v_dir;  // unit d_head vector amplified at injections
};

ScriptedScenario build_scenario(const Params& base, const ModelConfig& model,
                                const Trajectory& tj, const Matrix& x0,
                                int steps, uint64_t seed) {
  ScriptedScenario sc;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int t = tj.tie_step; t + tj.planted_lag < steps - 2;) {
    sc.tie_steps.push_back(t);
    t += tj.event_interval + static_cast<int>(rng() % 9) - 4;
  }

  const int dh = model.d_head();
  const int n = model.seq_len;
  const PrecisionSpec ref;  // reference arm
  const Matrix m0 = ln_rows(x0, base.layers[0].ln1, ref);
  const Matrix m0_pinv = pinv(m0);

  std::vector<double> u(dh);
  double un = 0.0;
  for (double& x : u) {
    x = gauss(rng);
    un += x * x;
  }
  un = std::sqrt(un);
  for (double& x : u) x /= un > 0 ? un : 1.0;

  // Two-way tie: keys 0 and 1 coincide at +g*u while the rest sit at -g*u,
  // so every score row is an exact two-way tie of magnitude tie_score.
  const auto targets = [&](double score, double delta) {
    const double g = std::sqrt(score * std::sqrt(static_cast<double>(dh)));
    Matrix q(n, dh), k(n, dh);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dh; ++j) {
        q(i, j) = g * u[j];
        const double sign = i < 2 ? 1.0 : -1.0;
        const double stretch = i == 0 ? 1.0 + delta : (i == 1 ? 1.0 - delta : 1.0);
        k(i, j) = sign * stretch * g * u[j];
      }
    return std::pair<Matrix, Matrix>(q, k);
  };
  auto [q_tie, k_tie] = targets(tj.tie_score, 0.0);
  sc.wq_tie = matmul(m0_pinv, q_tie);
  sc.wk_tie = matmul(m0_pinv, k_tie);

  // Mismatch event: a cancellation pair. Q rows ride a+b and K rows a-b for
  // orthonormal a, b, so reference scores cancel to ~0 (uniform softmax, no
  // kappa spike) while the emulated GEMM's rounding on the large cancelling
  // products leaves O(1) score noise — a pure low-precision mismatch spike.
  std::vector<double> b(dh);
  double dot_ub = 0.0, bn = 0.0;
  for (double& x : b) x = gauss(rng);
  for (int j = 0; j < dh; ++j) dot_ub += u[j] * b[j];
  for (int j = 0; j < dh; ++j) {
    b[j] -= dot_ub * u[j];
    bn += b[j] * b[j];
  }
  bn = std::sqrt(bn);
  for (double& x : b) x /= bn > 0 ? bn : 1.0;
  const double c_inj = tj.inj_score / std::sqrt(2.0);  // row norms = inj_score
  Matrix q_inj(n, dh), k_inj(n, dh);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < dh; ++j) {
      q_inj(i, j) = c_inj * (u[j] + b[j]);
      k_inj(i, j) = c_inj * (u[j] - b[j]);
    }
  sc.wq_inj = matmul(m0_pinv, q_inj);
  sc.wk_inj = matmul(m0_pinv, k_inj);

  // Unit direction of v_0 - v_1 in head-0 value space; the injection inflates
  // V along it, degrading the value conditioning right where the tied rows
  // disagree.
  const Matrix w_v0 = base.layers[0].w_v.col_block(0, dh);
  sc.v_dir.assign(dh, 0.0);
  double vn = 0.0;
  for (int j = 0; j < dh; ++j) {
    double acc = 0.0;
    for (int c = 0; c < model.d_model; ++c)
      acc += (m0(0, c) - m0(1, c)) * w_v0(c, j);
    sc.v_dir[j] = acc;
    vn += acc * acc;
  }
  vn = std::sqrt(vn);
  if (vn > 1e-12)
    for (double& x : sc.v_dir) x /= vn;
  else
    sc.v_dir[0] = 1.0;
  return sc;
}

double event_amp(int step, int center, double sharp) {
  const double dx = (step - center) / sharp;
  double a = std::exp(-0.5 * dx * dx);
  if (a >= 0.6) return 1.0;  // snap to the exact target near the event
  if (a < 0.02) return 0.0;
  return a;
}

void apply_scenario(Params& eff, const ScriptedScenario& sc, const Trajectory& tj,
                    const ModelConfig& model, int step) {
  double a_tie = 0.0, a_inj = 0.0;
  for (int t : sc.tie_steps) {
    a_tie = std::max(a_tie, event_amp(step, t, tj.tie_sharpness));
    a_inj = std::max(a_inj, event_amp(step, t + tj.planted_lag, tj.tie_sharpness));
  }
  if (a_tie <= 0.0 && a_inj <= 0.0) return;

  const int dh = model.d_head();
  LayerParams& l0 = eff.layers[0];
  const bool tie = a_tie >= a_inj;
  const double a = tie ? a_tie : a_inj;
  const Matrix& wq_t = tie ? sc.wq_tie : sc.wq_inj;
  const Matrix& wk_t = tie ? sc.wk_tie : sc.wk_inj;
  Matrix wq = l0.w_q.col_block(0, dh);
  Matrix wk = l0.w_k.col_block(0, dh);
  for (size_t i = 0; i < wq.data.size(); ++i) {
    wq.data[i] = (1.0 - a) * wq.data[i] + a * wq_t.data[i];
    wk.data[i] = (1.0 - a) * wk.data[i] + a * wk_t.data[i];
  }
  l0.w_q.set_col_block(0, wq);
  l0.w_k.set_col_block(0, wk);

  if (a_inj > 0.0) {
    const double gain = 1.0 + (tj.inj_v_gain - 1.0) * a_inj;
    Matrix wv = l0.w_v.col_block(0, dh);
    for (int i = 0; i < wv.rows; ++i) {
      double dot = 0.0;
      for (int j = 0; j < dh; ++j) dot += wv(i, j) * sc.v_dir[j];
      for (int j = 0; j < dh; ++j) wv(i, j) += (gain - 1.0) * dot * sc.v_dir[j];
    }
    l0.w_v.set_col_block(0, wv);
  }
}

// ---------------------------------------------------------------------------
// Core step loop

struct CoreOptions {
  SimOptions sim;
  const ScriptedScenario* scenario = nullptr;
  const Trajectory* trajectory = nullptr;
};

RunResult run_core(const RunConfig& cfg, const ModelConfig& model,
                   const PrecisionSpec& spec, uint64_t run_seed,
                   const CoreOptions& opt) {
  ModelConfig m = model;
  m.seed = substream(cfg.root_seed, {run_seed, 0});
  m.validate();
  Params params = init_params(m);
  const Matrix x0 = make_x0(cfg, m, spec, run_seed);
  const Matrix target = make_target(cfg, m, run_seed);
  std::mt19937_64 drift_rng(substream(cfg.root_seed, {run_seed, 3}));

  const DiagnosticsOptions dopt;
  RunResult res;
  const int steps = opt.sim.steps;
  std::vector<double> rho_attn(m.depth, 0.0), rho_ffn(m.depth, 0.0);
  bool rho_ready = false;

  for (int step = 0; step < steps; ++step) {
    if (step > 0) drift_params(params, cfg.trajectory.drift_scale, drift_rng);

    Params eff = params;
    if (opt.scenario) apply_scenario(eff, *opt.scenario, *opt.trajectory, m, step);

    const DualTrace trace = forward_dual(eff, m, x0, spec);

    double step_kappa_sm = 0.0, step_kappa_sc = 0.0, step_kappa_v = 0.0;
    double pred_sum = 0.0;
    BoundBreakdown bb;

    if (opt.sim.diag == DiagLevel::Light) {
      for (const auto& layer : trace.layers)
        for (const auto& head : layer.ref_heads)
          step_kappa_sm = std::max(step_kappa_sm, kappa_softmax(head.s, head.p));
    } else if (opt.sim.diag == DiagLevel::Full) {
      const bool refresh =
          !rho_ready ||
          (opt.sim.rho_refresh > 0 && step % opt.sim.rho_refresh == 0);
      if (refresh) {
        for (int l = 0; l < m.depth; ++l) {
          rho_attn[l] = attn_branch_rho(eff, m, l, trace.layers[l].ref_ln1_in);
          rho_ffn[l] = ffn_branch_rho(eff, m, l, trace.layers[l].ref_after_attn);
        }
        rho_ready = true;
      }
      std::vector<double> brackets;
      std::vector<std::vector<double>> rhos;
      std::vector<LayerDiagnostics> diags;
      for (int l = 0; l < m.depth; ++l) {
        LayerDiagnostics ld = compute_layer_diagnostics(
            trace.layers[l], eff.layers[l], m, spec, dopt, rho_attn[l], rho_ffn[l]);
        pred_sum += combined_predictor(ld);
        brackets.push_back(bound_bracket(ld, m.d_head()));
        rhos.push_back({ld.rho_resid_attn, ld.rho_resid_ffn});
        step_kappa_sm = std::max(step_kappa_sm, ld.agg.kappa_softmax);
        step_kappa_sc = std::max(step_kappa_sc, ld.agg.kappa_score);
        step_kappa_v = std::max(step_kappa_v, ld.agg.kappa_v);
        diags.push_back(std::move(ld));
      }
      bb = unified_bound(brackets, rhos, effective_eps(spec));
      res.bound_vacuous = res.bound_vacuous || bb.vacuous;
      if (opt.sim.records) {
        for (int l = 0; l < m.depth; ++l) {
          const LayerDiagnostics& ld = diags[l];
          const LayerDual& layer = trace.layers[l];
          for (int h = 0; h < static_cast<int>(ld.heads.size()); ++h) {
            DiagnosticsRecord rec;
            rec.step = step;
            rec.layer = l;
            rec.head = h;
            rec.kappa_score = ld.heads[h].kappa_score;
            rec.kappa_softmax = ld.heads[h].kappa_softmax;
            rec.kappa_v = ld.heads[h].kappa_v;
            rec.kappa_eff = ld.kappa_eff;
            rec.rho_ln = ld.rho_ln;
            rec.c_ln = ld.c_ln;
            rec.rho_resid_attn = ld.rho_resid_attn;
            rec.rho_resid_ffn = ld.rho_resid_ffn;
            rec.w_o_norm = ld.w_o_norm;
            rec.bracket = bb.brackets[l];
            rec.bound_total = bb.total;
            rec.r_block_attn = layer.r_attn;
            rec.r_block_ffn = layer.r_ffn;
            rec.r_block_out = layer.r_out;
            rec.predictor = pred_sum;
            rec.predictor_eps = pred_sum * effective_eps(spec);
            opt.sim.records->push_back(rec);
          }
        }
      }
    }

    {
      // Mismatch at the site the eps policy acts on: first LN of layer 0,
      // evaluated with the eps in force this step.
      const PrecisionSpec ref;
      const Matrix ln_ref =
          ln_rows(trace.layers[0].ref_ln1_in, params.layers[0].ln1, ref);
      const Matrix ln_lp =
          ln_rows(trace.layers[0].lp_ln1_in, params.layers[0].ln1, spec);
      const double denom = fro_norm(ln_ref);
      res.ln_mismatch.push_back(denom > 0.0 ? fro_norm(ln_lp - ln_ref) / denom : 0.0);
    }

    if (opt.sim.bump_policy) {
      auto events = maybe_bump(params, step, trace, m, spec.compute, cfg.mitigation);
      res.events.insert(res.events.end(), events.begin(), events.end());
    }

    res.kappa_softmax.push_back(step_kappa_sm);
    res.kappa_score.push_back(step_kappa_sc);
    res.kappa_v.push_back(step_kappa_v);
    res.predictor.push_back(pred_sum);
    res.predictor_eps.push_back(pred_sum * effective_eps(spec));
    res.bound.push_back(bb.total);
    res.fwd_error.push_back(tap_value(trace, opt.sim.tap));
    res.loss.push_back(loss_proxy(trace.layers.back().lp_out, target));
  }
  return res;
}

PrecisionSpec primary_spec(const RunConfig& cfg) {
  if (cfg.sweep.precisions.size() == 1) return cfg.sweep.precisions.front();
  PrecisionSpec spec;
  spec.compute = FpFormat::FP16;
  return spec;
}

}  // namespace

uint64_t substream(uint64_t root, std::initializer_list<uint64_t> path) {
  uint64_t h = splitmix64(root);
  for (uint64_t v : path) h = splitmix64(h ^ splitmix64(v + 0x517cc1b727220a95ULL));
  return h;
}

RunResult simulate_run(const RunConfig& cfg, const ModelConfig& model,
                       const PrecisionSpec& spec, uint64_t run_seed,
                       const SimOptions& opt) {
  CoreOptions copt;
  copt.sim = opt;
  return run_core(cfg, model, spec, run_seed, copt);
}

RunResult simulate_scripted(const RunConfig& cfg, const ModelConfig& model,
                            const PrecisionSpec& spec, uint64_t run_seed,
                            int steps) {
  ModelConfig m = model;
  m.seed = substream(cfg.root_seed, {run_seed, 0});
  Params base = init_params(m);
  const Matrix x0 = make_x0(cfg, m, spec, run_seed);
  const ScriptedScenario sc = build_scenario(
      base, m, cfg.trajectory, x0, steps, substream(cfg.root_seed, {run_seed, 4}));

  CoreOptions copt;
  copt.sim.steps = steps;
  copt.sim.diag = DiagLevel::Light;
  copt.sim.tap = cfg.sweep.tap;
  copt.scenario = &sc;
  copt.trajectory = &cfg.trajectory;
  return run_core(cfg, model, spec, run_seed, copt);
}

// ---------------------------------------------------------------------------
// exp1: width x precision x seed sweep, tail statistics, regressions

namespace {

struct Exp1Run {
  int width = 0;
  PrecisionSpec spec;
  uint64_t seed = 0;
  std::string label;
  RunResult res;
};

void regression_row(CsvWriter& out, const std::string& name,
                    const std::vector<double>& x, const std::vector<double>& y) {
  PairedSample s;
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0.0 && y[i] > 0.0) {
      s.x.push_back(x[i]);
      s.y.push_back(y[i]);
    }
  double pl = std::numeric_limits<double>::quiet_NaN();
  double sp = pl, r2 = pl, slope = pl;
  if (s.x.size() < 3) {
    std::fprintf(stderr,
                 "exp1: regression for %s skipped: %zu positive sample(s), "
                 "need at least 3\n",
                 name.c_str(), s.x.size());
  } else {
    pl = pearson_log(s);
    sp = spearman(s);
    const OlsFit fit = ols_loglog(s);
    r2 = fit.r2;
    slope = fit.slope;
  }
  out.write_row(name + "," + fmt(pl) + "," + fmt(sp) + "," + fmt(r2) + "," + fmt(slope));
}

}  // namespace

void run_exp1(const RunConfig& cfg) {
  const auto out_dir = cfg.output_dir / "exp1";
  write_manifest(cfg, out_dir);

  std::vector<Exp1Run> runs;
  for (int width : cfg.sweep.widths)
    for (size_t pi = 0; pi < cfg.sweep.precisions.size(); ++pi)
      for (uint64_t seed : cfg.sweep.seeds) {
        Exp1Run r;
        r.width = width;
        r.spec = cfg.sweep.precisions[pi];
        r.seed = seed;
        r.label = "w" + std::to_string(width) + "_" + format_name(r.spec.compute) +
                  "_" + accumulation_name(r.spec.accumulate) + "_s" +
                  std::to_string(seed);
        runs.push_back(std::move(r));
      }

  std::vector<std::vector<DiagnosticsRecord>> records(runs.size());
  parallel_for(static_cast<int>(runs.size()), cfg.jobs, [&](int i) {
    Exp1Run& r = runs[i];
    ModelConfig m = cfg.model;
    m.d_model = r.width;
    m.ffn_hidden = 2 * r.width;
    SimOptions opt;
    opt.steps = cfg.steps();
    opt.diag = DiagLevel::Full;
    opt.tap = cfg.sweep.tap;
    opt.records = &records[i];
    const uint64_t run_seed =
        substream(cfg.root_seed, {static_cast<uint64_t>(r.width),
                                  static_cast<uint64_t>(mantissa_bits(r.spec.compute)),
                                  r.seed});
    r.res = simulate_run(cfg, m, r.spec, run_seed, opt);
  });

  CsvWriter summary(out_dir / "summary.csv",
                    "width,compute,accumulate,seed,fwd_tail,loss_tail,"
                    "predictor_tail,predictor_eps_tail,kappa_softmax_tail,"
                    "kappa_score_tail,kappa_v_tail,bound_tail,bound_vacuous");
  std::vector<double> fwd, pred, pred_eps, ksm, ksc, kv, bound;
  for (size_t i = 0; i < runs.size(); ++i) {
    const Exp1Run& r = runs[i];
    CsvWriter diag(out_dir / "runs" / r.label / "diagnostics.csv",
                   kDiagnosticsCsvHeader);
    for (const auto& rec : records[i]) diag.write_row(diagnostics_csv_row(rec));

    const double fwd_tail = quantile95(r.res.fwd_error);
    fwd.push_back(fwd_tail);
    pred.push_back(quantile95(r.res.predictor));
    pred_eps.push_back(quantile95(r.res.predictor_eps));
    ksm.push_back(quantile95(r.res.kappa_softmax));
    ksc.push_back(quantile95(r.res.kappa_score));
    kv.push_back(quantile95(r.res.kappa_v));
    bound.push_back(quantile95(r.res.bound));
    summary.write_row(std::to_string(r.width) + "," + format_name(r.spec.compute) +
                      "," + accumulation_name(r.spec.accumulate) + "," +
                      std::to_string(r.seed) + "," + fmt(fwd_tail) + "," +
                      fmt(quantile95(r.res.loss)) + "," + fmt(pred.back()) + "," +
                      fmt(pred_eps.back()) + "," + fmt(ksm.back()) + "," +
                      fmt(ksc.back()) + "," + fmt(kv.back()) + "," +
                      fmt(bound.back()) + "," +
                      (r.res.bound_vacuous ? "1" : "0"));
  }

  CsvWriter reg(out_dir / "regressions.csv",
                "proxy_name,pearson_log,spearman,r2,slope");
  regression_row(reg, "combined", pred, fwd);
  regression_row(reg, "combined_eps", pred_eps, fwd);
  regression_row(reg, "kappa_softmax", ksm, fwd);
  regression_row(reg, "kappa_score", ksc, fwd);
  regression_row(reg, "kappa_v", kv, fwd);
  regression_row(reg, "bound", bound, fwd);
}

// ---------------------------------------------------------------------------
// exp2: scripted lead-lag study

void run_exp2(const RunConfig& cfg) {
  const auto out_dir = cfg.output_dir / "exp2";
  write_manifest(cfg, out_dir);
  const PrecisionSpec spec = primary_spec(cfg);
  const int steps = cfg.steps();

  std::vector<RunResult> results(cfg.sweep.seeds.size());
  parallel_for(static_cast<int>(cfg.sweep.seeds.size()), cfg.jobs, [&](int i) {
    results[i] = simulate_scripted(cfg, cfg.model, spec, cfg.sweep.seeds[i], steps);
  });

  CsvWriter leadlag(out_dir / "leadlag.csv", kLeadLagCsvHeader);
  for (size_t i = 0; i < cfg.sweep.seeds.size(); ++i) {
    const uint64_t seed = cfg.sweep.seeds[i];
    const RunResult& res = results[i];
    CsvWriter series(out_dir / "runs" / ("seed" + std::to_string(seed)) / "series.csv",
                     "step,kappa_softmax,fwd_error,loss");
    for (int t = 0; t < steps; ++t)
      series.write_row(std::to_string(t) + "," + fmt(res.kappa_softmax[t]) + "," +
                       fmt(res.fwd_error[t]) + "," + fmt(res.loss[t]));

    const TimeSeries predictor{"kappa_softmax", res.kappa_softmax};
    const std::pair<const char*, const std::vector<double>*> targets[] = {
        {"fwd_error", &res.fwd_error}, {"loss_proxy", &res.loss}};
    for (const auto& [name, values] : targets) {
      const TimeSeries target{name, *values};
      LeadLagReport rep;
      rep.seed = seed;
      rep.target_name = name;
      const LagScanResult scan = lag_scan(predictor, target, cfg.earlywarning);
      rep.best_lag = scan.best_lag;
      rep.best_corr = scan.best_corr;
      rep.p_value = permutation_pvalue(predictor, target, cfg.earlywarning,
                                       substream(cfg.root_seed, {seed, 77}));
      rep.precision = precision_at_k(predictor, target, cfg.earlywarning);
      leadlag.write_row(leadlag_csv_row(rep));
    }
  }
}

// ---------------------------------------------------------------------------
// exp3: epsilon-bump mitigation grid

void run_exp3(const RunConfig& cfg) {
  const auto out_dir = cfg.output_dir / "exp3";
  write_manifest(cfg, out_dir);
  const PrecisionSpec spec = primary_spec(cfg);
  const int steps = cfg.steps();
  const int n_seeds = static_cast<int>(cfg.sweep.seeds.size());

  struct Cell {
    double rho_star = 0.0, eps_cap = 0.0;
    std::vector<RunResult> control, policy;
  };
  std::vector<Cell> cells;
  for (double rho_star : cfg.exp3.rho_stars)
    for (double cap : cfg.exp3.eps_caps) {
      Cell c;
      c.rho_star = rho_star;
      c.eps_cap = cap;
      c.control.resize(n_seeds);
      c.policy.resize(n_seeds);
      cells.push_back(std::move(c));
    }

  const int n_tasks = static_cast<int>(cells.size()) * n_seeds;
  parallel_for(n_tasks, cfg.jobs, [&](int task) {
    Cell& cell = cells[task / n_seeds];
    const int si = task % n_seeds;
    const uint64_t seed = cfg.sweep.seeds[si];

    RunConfig local = cfg;
    local.mitigation.rho_star = cell.rho_star;
    local.mitigation.eps_max = cell.eps_cap;

    SimOptions opt;
    opt.steps = steps;
    opt.diag = DiagLevel::None;
    opt.tap = cfg.sweep.tap;
    // Matched arms: the run seed ignores the grid cell and the arm, so both
    // arms consume identical random streams until the first bump.
    opt.bump_policy = false;
    cell.control[si] = simulate_run(local, cfg.model, spec, seed, opt);
    opt.bump_policy = true;
    cell.policy[si] = simulate_run(local, cfg.model, spec, seed, opt);
  });

  CsvWriter summary(out_dir / "mitigation_summary.csv",
                    "rho_star,eps_cap,ln_tail_control,ln_tail_policy,"
                    "ln_delta_rel,fwd_tail_control,fwd_tail_policy,"
                    "fwd_delta_rel,loss_tail_control,loss_tail_policy,"
                    "n_bumps,n_seeds_improved");
  for (const Cell& cell : cells) {
    double nc = 0.0, np = 0.0, fc = 0.0, fp = 0.0, lc = 0.0, lp = 0.0;
    int n_bumps = 0, improved = 0;
    for (int si = 0; si < n_seeds; ++si) {
      const uint64_t seed = cfg.sweep.seeds[si];
      const double c_tail = tail_mean(cell.control[si].ln_mismatch, cfg.exp3.tail_steps);
      const double p_tail = tail_mean(cell.policy[si].ln_mismatch, cfg.exp3.tail_steps);
      nc += c_tail;
      np += p_tail;
      fc += tail_mean(cell.control[si].fwd_error, cfg.exp3.tail_steps);
      fp += tail_mean(cell.policy[si].fwd_error, cfg.exp3.tail_steps);
      lc += tail_mean(cell.control[si].loss, cfg.exp3.tail_steps);
      lp += tail_mean(cell.policy[si].loss, cfg.exp3.tail_steps);
      n_bumps += static_cast<int>(cell.policy[si].events.size());
      if (p_tail < c_tail) ++improved;

      std::ostringstream label;
      label << "rho" << cell.rho_star << "_cap" << cell.eps_cap << "_s" << seed;
      CsvWriter events(out_dir / "cells" / label.str() / "events.csv",
                       kEventsCsvHeader);
      for (const auto& e : cell.policy[si].events)
        events.write_row(events_csv_row(e));
    }
    nc /= n_seeds;
    np /= n_seeds;
    fc /= n_seeds;
    fp /= n_seeds;
    lc /= n_seeds;
    lp /= n_seeds;
    const double ln_delta = nc > 0.0 ? (nc - np) / nc : 0.0;
    const double fwd_delta = fc > 0.0 ? (fc - fp) / fc : 0.0;
    summary.write_row(fmt(cell.rho_star) + "," + fmt(cell.eps_cap) + "," + fmt(nc) +
                      "," + fmt(np) + "," + fmt(ln_delta) + "," + fmt(fc) + "," +
                      fmt(fp) + "," + fmt(fwd_delta) + "," + fmt(lc) + "," +
                      fmt(lp) + "," + std::to_string(n_bumps) + "," +
                      std::to_string(improved));
  }
}

// ---------------------------------------------------------------------------
// diag: one-shot report

void run_diag(const RunConfig& cfg) {
  const auto out_dir = cfg.output_dir / "diag";
  write_manifest(cfg, out_dir);
  const PrecisionSpec spec = primary_spec(cfg);

  SimOptions opt;
  opt.steps = 1;
  opt.diag = DiagLevel::Full;
  opt.tap = cfg.sweep.tap;
  std::vector<DiagnosticsRecord> records;
  opt.records = &records;
  const RunResult res = simulate_run(cfg, cfg.model, spec, cfg.root_seed, opt);

  CsvWriter diag(out_dir / "diagnostics.csv", kDiagnosticsCsvHeader);
  for (const auto& rec : records) diag.write_row(diagnostics_csv_row(rec));

  std::printf("compute=%s accumulate=%s eps_eff=%.3e\n",
              format_name(spec.compute).c_str(),
              accumulation_name(spec.accumulate).c_str(), effective_eps(spec));
  std::printf("kappa_softmax=%.6g kappa_score=%.6g kappa_v=%.6g\n",
              res.kappa_softmax[0], res.kappa_score[0], res.kappa_v[0]);
  std::printf("predictor=%.6g bound=%.6g%s fwd_error=%.3e loss=%.6g\n",
              res.predictor[0], res.bound[0],
              res.bound_vacuous ? " (vacuous)" : "", res.fwd_error[0],
              res.loss[0]);
}

}  // namespace fragility
