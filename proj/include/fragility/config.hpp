#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fragility/earlywarning.hpp"
#include "fragility/mitigation.hpp"
#include "fragility/model.hpp"
#include "fragility/precision.hpp"

namespace fragility {

enum class Experiment { Exp1, Exp2, Exp3, Diag };
enum class Tap { Attn, Ffn, Block };
enum class TrajectoryMode { Drift, ScriptedTie };

struct SweepConfig {
  std::vector<int> widths = {32, 64};
  std::vector<PrecisionSpec> precisions;  // default: bf16-native, fp16-native
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
  int steps = 0;  // 0 = per-experiment default (exp1 60, exp2 195, exp3 100)
  double tail_fraction = 0.25;
  Tap tap = Tap::Block;
};

struct Trajectory {
  TrajectoryMode mode = TrajectoryMode::Drift;
  double drift_scale = 0.002;
  // SCRIPTED_TIE: tie events start at tie_step and repeat at jittered
  // intervals; each plants a kappa_softmax spike, followed planted_lag steps
  // later by a value-conditioning degradation that spikes the mismatch.
  int tie_step = 40;
  double tie_sharpness = 1.2;
  int event_interval = 30;
  int planted_lag = 16;
  double tie_score = 40.0;  // tied-score magnitude at the diagnostic event
  double inj_score = 80.0;  // score magnitude at the mismatch event
  double inj_gap = 2.5;     // near-tie score gap at the mismatch event
  double inj_v_gain = 8.0;  // amplification of V along the tie-difference direction
};

struct Exp3Grid {
  std::vector<double> rho_stars = {0.5, 0.6, 0.7};
  std::vector<double> eps_caps = {5e-3, 1e-2};
  int tail_steps = 50;
  // eps-dominated scenario shape: per-token common offset and the target
  // rho_LN of layer 0's first LayerNorm at the initial eps.
  double scenario_offset = 10.0;
  double scenario_rho_ln = 0.8;
};

struct RunConfig {
  Experiment experiment = Experiment::Diag;
  uint64_t root_seed = 0;
  std::filesystem::path output_dir = "out";
  ModelConfig model;
  SweepConfig sweep;
  SpikeConfig earlywarning;
  EpsBumpConfig mitigation;
  Trajectory trajectory;
  Exp3Grid exp3;
  int jobs = 1;

  int steps() const;  // sweep.steps with the per-experiment default applied
};

/// Parses and validates a JSON config text, filling defaults and rejecting
/// unknown keys. Reports every violation, not just the first. Also accepts a
/// previously emitted manifest (the config is taken from its "config" key).
RunConfig validate_config(const std::string& json_text);

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides);

/// Effective config as canonical JSON (round-trips through validate_config).
std::string config_to_json(const RunConfig& cfg);

void write_manifest(const RunConfig& cfg, const std::filesystem::path& out_dir);

std::string experiment_name(Experiment e);
std::string tap_name(Tap t);

extern const char* const kToolkitVersion;

}  // namespace fragility
