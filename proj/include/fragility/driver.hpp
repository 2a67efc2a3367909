#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <vector>

#include "fragility/config.hpp"
#include "fragility/diagnostics.hpp"
#include "fragility/earlywarning.hpp"
#include "fragility/mitigation.hpp"
#include "fragility/model.hpp"

namespace fragility {

/// Deterministic RNG substream derivation: every consumer hashes the root
/// seed with its own path so runs never share or reorder draws.
uint64_t substream(uint64_t root, std::initializer_list<uint64_t> path);

/// Per-step series collected from one simulated run.
struct RunResult {
  std::vector<double> kappa_softmax;  // max over layers and heads
  std::vector<double> kappa_score;
  std::vector<double> kappa_v;
  std::vector<double> predictor;      // combined predictor, summed over layers
  std::vector<double> predictor_eps;  // predictor * effective eps
  std::vector<double> bound;          // unified bound (0 when diagnostics off)
  std::vector<double> fwd_error;      // mismatch at the configured tap
  std::vector<double> ln_mismatch;    // mismatch at layer 0's first LN output
  std::vector<double> loss;           // loss proxy on the low-precision arm
  std::vector<EpsBumpEvent> events;
  bool bound_vacuous = false;
};

enum class DiagLevel { None, Light, Full };  // Light skips SVD-heavy terms

struct SimOptions {
  int steps = 60;
  DiagLevel diag = DiagLevel::Full;
  bool bump_policy = false;
  /// Residual-gain refresh cadence for the Full level; 0 = once at step 0.
  int rho_refresh = 0;
  Tap tap = Tap::Block;
  /// Per step, layer, head diagnostics rows (Full level only).
  std::vector<DiagnosticsRecord>* records = nullptr;
};

/// One drifting run: weights take a Gaussian random walk, the dual forward
/// pass runs every step, diagnostics and mismatch series are collected.
RunResult simulate_run(const RunConfig& cfg, const ModelConfig& model,
                       const PrecisionSpec& spec, uint64_t run_seed,
                       const SimOptions& opt);

/// Scripted-tie run for the lead-lag study: planted score ties spike the
/// softmax diagnostic, and a value-space conditioning degradation planted
/// `planted_lag` steps later spikes the forward mismatch.
RunResult simulate_scripted(const RunConfig& cfg, const ModelConfig& model,
                            const PrecisionSpec& spec, uint64_t run_seed,
                            int steps);

/// Width x precision x seed sweep; writes runs/<label>/diagnostics.csv,
/// summary.csv and regressions.csv under <output_dir>/exp1.
void run_exp1(const RunConfig& cfg);

/// Lead-lag study over sweep.seeds; writes per-seed series and leadlag.csv
/// under <output_dir>/exp2.
void run_exp2(const RunConfig& cfg);

/// Epsilon-bump grid over exp3.rho_stars x exp3.eps_caps with matched
/// control/intervention arms; writes events and mitigation_summary.csv
/// under <output_dir>/exp3.
void run_exp3(const RunConfig& cfg);

/// One-shot diagnostic report for a fresh model; writes diagnostics.csv
/// under <output_dir>/diag and prints the bound breakdown.
void run_diag(const RunConfig& cfg);

}  // namespace fragility
