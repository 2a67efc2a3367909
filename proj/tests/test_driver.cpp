#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "fragility/csv.hpp"
#include "fragility/driver.hpp"

using namespace fragility;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.depth = 2;
  m.seq_len = 8;
  m.d_model = 16;
  m.n_heads = 2;
  m.ffn_hidden = 32;
  m.seed = 5;
  return m;
}

PrecisionSpec fp16_native() {
  PrecisionSpec s;
  s.compute = FpFormat::FP16;
  return s;
}

fs::path scratch_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / leaf;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("substream derivation") {
  const uint64_t a = substream(7, {1, 2, 3});
  CHECK(a == substream(7, {1, 2, 3}));         // deterministic
  CHECK(a != substream(8, {1, 2, 3}));         // root matters
  CHECK(a != substream(7, {3, 2, 1}));         // order matters
  CHECK(a != substream(7, {1, 2}));            // length matters
  std::set<uint64_t> seen;
  for (uint64_t i = 0; i < 200; ++i) seen.insert(substream(7, {i}));
  CHECK(seen.size() == 200);                   // no trivial collisions
}

TEST_CASE("simulate_run is bit-deterministic and seed-sensitive") {
  const RunConfig cfg = validate_config("{}");
  const ModelConfig model = small_model();
  SimOptions opt;
  opt.steps = 8;
  opt.diag = DiagLevel::Light;

  const RunResult a = simulate_run(cfg, model, fp16_native(), 11, opt);
  const RunResult b = simulate_run(cfg, model, fp16_native(), 11, opt);
  CHECK(a.fwd_error == b.fwd_error);
  CHECK(a.kappa_softmax == b.kappa_softmax);
  CHECK(a.loss == b.loss);
  CHECK(a.ln_mismatch == b.ln_mismatch);

  const RunResult c = simulate_run(cfg, model, fp16_native(), 12, opt);
  CHECK(a.fwd_error != c.fwd_error);

  CHECK(static_cast<int>(a.fwd_error.size()) == opt.steps);
  for (double e : a.fwd_error) CHECK(e > 0.0);
}

TEST_CASE("reference precision has zero dual mismatch") {
  const RunConfig cfg = validate_config("{}");
  const ModelConfig model = small_model();
  SimOptions opt;
  opt.steps = 5;
  opt.diag = DiagLevel::None;
  PrecisionSpec ref;  // fp32 compute = reference arm on both sides
  ref.compute = FpFormat::FP32;

  const RunResult r = simulate_run(cfg, model, ref, 3, opt);
  for (double e : r.fwd_error) CHECK(e == 0.0);
  for (double e : r.ln_mismatch) CHECK(e == 0.0);
}

TEST_CASE("disabled policy leaves the run bit-identical") {
  RunConfig cfg = validate_config("{}");
  // rho_star close to 1 with eps_max at the current eps: the policy can
  // never propose an increase, so the intervention arm must match control
  cfg.mitigation.eps_max = cfg.model.ln_eps;
  const ModelConfig model = small_model();
  SimOptions control;
  control.steps = 10;
  control.diag = DiagLevel::None;
  SimOptions policy = control;
  policy.bump_policy = true;

  const RunResult a = simulate_run(cfg, model, fp16_native(), 21, control);
  const RunResult b = simulate_run(cfg, model, fp16_native(), 21, policy);
  CHECK(b.events.empty());
  CHECK(a.fwd_error == b.fwd_error);
  CHECK(a.ln_mismatch == b.ln_mismatch);
  CHECK(a.loss == b.loss);
}

TEST_CASE("scripted ties spike the softmax diagnostic") {
  RunConfig cfg = validate_config(
      R"({"experiment":"exp2","trajectory":{"mode":"scripted_tie"}})");
  const ModelConfig model = small_model();
  const int steps = 120;
  const RunResult r = simulate_scripted(cfg, model, fp16_native(), 2, steps);
  REQUIRE(static_cast<int>(r.kappa_softmax.size()) == steps);

  // baseline well before the first event vs the planted tie step
  const int tie = cfg.trajectory.tie_step;
  double base = 0.0;
  for (int t = 5; t < 15; ++t) base = std::max(base, r.kappa_softmax[t]);
  CHECK(r.kappa_softmax[tie] > 5.0 * base);

  // mismatch spikes planted_lag later, not at the tie itself
  const int lag = cfg.trajectory.planted_lag;
  double err_base = 0.0;
  for (int t = 5; t < 15; ++t) err_base = std::max(err_base, r.fwd_error[t]);
  CHECK(r.fwd_error[tie + lag] > 3.0 * err_base);
}

TEST_CASE("exp1 emits readable CSV artifacts") {
  RunConfig cfg = validate_config(
      R"({"experiment":"exp1",
          "model":{"depth":1,"seq_len":6,"d_model":8,"n_heads":2,"ffn_hidden":16},
          "sweep":{"widths":[8],"seeds":[0,1,2],"steps":6,
                   "precisions":["fp16"]},
          "earlywarning":{"window":2}})");
  cfg.output_dir = scratch_dir("fragility_exp1_smoke");
  run_exp1(cfg);

  const CsvTable summary = read_csv(cfg.output_dir / "exp1" / "summary.csv");
  CHECK(summary.rows.size() == 3);  // one row per (width, precision, seed)
  const int fwd_col = summary.column("fwd_tail");
  for (size_t i = 0; i < summary.rows.size(); ++i)
    CHECK(summary.number(i, fwd_col) > 0.0);

  const CsvTable reg = read_csv(cfg.output_dir / "exp1" / "regressions.csv");
  CHECK(reg.header ==
        std::vector<std::string>{"proxy_name", "pearson_log", "spearman", "r2",
                                 "slope"});
  const int name_col = reg.column("proxy_name");
  bool has_combined_eps = false;
  for (const auto& row : reg.rows)
    if (row[name_col] == "combined_eps") has_combined_eps = true;
  CHECK(has_combined_eps);

  const CsvTable diag =
      read_csv(cfg.output_dir / "exp1" / "runs" / "w8_fp16_native_s0" /
               "diagnostics.csv");
  CHECK(diag.header.front() == "step");
  CHECK(diag.rows.size() == 6 * 1 * 2);  // steps x layers x heads
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("matched arms rerun identically from the same config") {
  RunConfig cfg = validate_config(
      R"({"experiment":"exp2",
          "model":{"depth":1,"seq_len":6,"d_model":8,"n_heads":2,"ffn_hidden":16},
          "sweep":{"seeds":[0],"steps":140},
          "earlywarning":{"n_perm":49},
          "trajectory":{"mode":"scripted_tie"}})");
  cfg.output_dir = scratch_dir("fragility_exp2_smoke_a");
  run_exp2(cfg);
  RunConfig cfg2 = cfg;
  cfg2.output_dir = scratch_dir("fragility_exp2_smoke_b");
  run_exp2(cfg2);

  const CsvTable a = read_csv(cfg.output_dir / "exp2" / "leadlag.csv");
  const CsvTable b = read_csv(cfg2.output_dir / "exp2" / "leadlag.csv");
  CHECK(a.header == b.header);
  CHECK(a.rows == b.rows);
  CHECK(a.rows.size() == 2);  // fwd_error and loss_proxy targets
  fs::remove_all(cfg.output_dir);
  fs::remove_all(cfg2.output_dir);
}
