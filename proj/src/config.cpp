#include "fragility/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fragility/error.hpp"

namespace fragility {

using nlohmann::json;

const char* const kToolkitVersion = "0.1.0";

namespace {

// Collects validation violations so a bad config reports all of them at once.
struct Checker {
  std::vector<std::string> errors;

  void fail(const std::string& msg) { errors.push_back(msg); }

  void known_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> keys) {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : obj.items()) {
      (void)v;
      if (!allowed.count(k)) fail(where + ": unknown key \"" + k + "\"");
    }
  }

  bool want_object(const json& v, const std::string& where) {
    if (v.is_object()) return true;
    fail(where + ": expected an object");
    return false;
  }

  template <class T>
  void get(const json& obj, const std::string& where, const char* key, T& out) {
    if (!obj.contains(key)) return;
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception&) {
      fail(where + "." + key + ": wrong type");
    }
  }

  void get_int(const json& obj, const std::string& where, const char* key,
               int& out, int lo, int hi) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
      fail(where + "." + key + ": expected an integer");
      return;
    }
    const auto x = v.get<int64_t>();
    if (x < lo || x > hi) {
      fail(where + "." + key + ": " + std::to_string(x) + " outside [" +
           std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return;
    }
    out = static_cast<int>(x);
  }

  void get_pos(const json& obj, const std::string& where, const char* key,
               double& out) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number()) {
      fail(where + "." + key + ": expected a number");
      return;
    }
    const double x = v.get<double>();
    if (!(x > 0.0)) {
      fail(where + "." + key + ": must be positive");
      return;
    }
    out = x;
  }
};

PrecisionSpec parse_precision(Checker& ck, const json& v, const std::string& where) {
  PrecisionSpec spec;
  if (v.is_string()) {
    try {
      spec.compute = parse_format(v.get<std::string>());
    } catch (const Error& e) {
      ck.fail(where + ": " + e.what());
    }
    return spec;
  }
  if (!ck.want_object(v, where)) return spec;
  ck.known_keys(v, where, {"compute", "accumulate", "flush_subnormals"});
  std::string compute = "fp16";
  std::string accumulate = "native";
  ck.get(v, where, "compute", compute);
  ck.get(v, where, "accumulate", accumulate);
  ck.get(v, where, "flush_subnormals", spec.flush_subnormals);
  try {
    spec.compute = parse_format(compute);
    spec.accumulate = parse_accumulation(accumulate);
  } catch (const Error& e) {
    ck.fail(where + ": " + e.what());
  }
  return spec;
}

json precision_to_json(const PrecisionSpec& spec) {
  json v;
  v["compute"] = format_name(spec.compute);
  v["accumulate"] = accumulation_name(spec.accumulate);
  v["flush_subnormals"] = spec.flush_subnormals;
  return v;
}

void parse_model(Checker& ck, const json& v, ModelConfig& m) {
  if (!ck.want_object(v, "model")) return;
  ck.known_keys(v, "model",
                {"depth", "seq_len", "d_model", "n_heads", "ffn_hidden",
                 "ln_eps", "seed"});
  ck.get_int(v, "model", "depth", m.depth, 1, 64);
  ck.get_int(v, "model", "seq_len", m.seq_len, 2, 4096);
  ck.get_int(v, "model", "d_model", m.d_model, 2, 4096);
  ck.get_int(v, "model", "n_heads", m.n_heads, 1, 64);
  ck.get_int(v, "model", "ffn_hidden", m.ffn_hidden, 1, 16384);
  ck.get_pos(v, "model", "ln_eps", m.ln_eps);
  uint64_t seed = m.seed;
  ck.get(v, "model", "seed", seed);
  m.seed = seed;
  if (m.d_model % m.n_heads != 0)
    ck.fail("model: d_model must be divisible by n_heads");
}

void parse_sweep(Checker& ck, const json& v, SweepConfig& s) {
  if (!ck.want_object(v, "sweep")) return;
  ck.known_keys(v, "sweep",
                {"widths", "precisions", "seeds", "steps", "tail_fraction",
                 "tap"});
  ck.get(v, "sweep", "widths", s.widths);
  ck.get(v, "sweep", "seeds", s.seeds);
  ck.get_int(v, "sweep", "steps", s.steps, 0, 100000);  // 0 = per-experiment default
  ck.get(v, "sweep", "tail_fraction", s.tail_fraction);
  if (!(s.tail_fraction > 0.0 && s.tail_fraction <= 1.0))
    ck.fail("sweep.tail_fraction: must be in (0, 1]");
  if (s.widths.empty()) ck.fail("sweep.widths: must be non-empty");
  if (s.seeds.empty()) ck.fail("sweep.seeds: must be non-empty");
  for (int w : s.widths)
    if (w < 2 || w > 4096) ck.fail("sweep.widths: entries must be in [2, 4096]");
  if (v.contains("precisions")) {
    s.precisions.clear();
    if (!v.at("precisions").is_array()) {
      ck.fail("sweep.precisions: expected an array");
    } else {
      int i = 0;
      for (const auto& p : v.at("precisions"))
        s.precisions.push_back(
            parse_precision(ck, p, "sweep.precisions[" + std::to_string(i++) + "]"));
      if (s.precisions.empty()) ck.fail("sweep.precisions: must be non-empty");
    }
  }
  if (v.contains("tap")) {
    std::string tap;
    ck.get(v, "sweep", "tap", tap);
    if (tap == "attn") s.tap = Tap::Attn;
    else if (tap == "ffn") s.tap = Tap::Ffn;
    else if (tap == "block") s.tap = Tap::Block;
    else ck.fail("sweep.tap: expected \"attn\", \"ffn\" or \"block\"");
  }
}

void parse_earlywarning(Checker& ck, const json& v, SpikeConfig& e) {
  if (!ck.want_object(v, "earlywarning")) return;
  ck.known_keys(v, "earlywarning",
                {"horizon", "window", "z_threshold", "k", "max_lag", "n_perm"});
  ck.get_int(v, "earlywarning", "horizon", e.horizon, 1, 100000);
  ck.get_int(v, "earlywarning", "window", e.window, 2, 100000);
  ck.get_pos(v, "earlywarning", "z_threshold", e.z_threshold);
  ck.get_int(v, "earlywarning", "k", e.k, 0, 100000);
  ck.get_int(v, "earlywarning", "max_lag", e.max_lag, 1, 100000);
  ck.get_int(v, "earlywarning", "n_perm", e.n_perm, 0, 1000000);
}

void parse_mitigation(Checker& ck, const json& v, EpsBumpConfig& m) {
  if (!ck.want_object(v, "mitigation")) return;
  ck.known_keys(v, "mitigation",
                {"rho_star", "check_interval", "subsample_size", "eps_min",
                 "eps_max", "restore_at_end"});
  ck.get_pos(v, "mitigation", "rho_star", m.rho_star);
  ck.get_int(v, "mitigation", "check_interval", m.check_interval, 1, 100000);
  ck.get_int(v, "mitigation", "subsample_size", m.subsample_size, 1, 100000);
  ck.get_pos(v, "mitigation", "eps_min", m.eps_min);
  ck.get_pos(v, "mitigation", "eps_max", m.eps_max);
  ck.get(v, "mitigation", "restore_at_end", m.restore_at_end);
  if (m.rho_star >= 1.0) ck.fail("mitigation.rho_star: must be in (0, 1)");
  if (m.eps_min > m.eps_max) ck.fail("mitigation: eps_min must be <= eps_max");
}

void parse_trajectory(Checker& ck, const json& v, Trajectory& t) {
  if (!ck.want_object(v, "trajectory")) return;
  ck.known_keys(v, "trajectory",
                {"mode", "drift_scale", "tie_step", "tie_sharpness",
                 "event_interval", "planted_lag", "tie_score", "inj_score",
                 "inj_gap", "inj_v_gain"});
  if (v.contains("mode")) {
    std::string mode;
    ck.get(v, "trajectory", "mode", mode);
    if (mode == "drift") t.mode = TrajectoryMode::Drift;
    else if (mode == "scripted_tie") t.mode = TrajectoryMode::ScriptedTie;
    else ck.fail("trajectory.mode: expected \"drift\" or \"scripted_tie\"");
  }
  ck.get_pos(v, "trajectory", "drift_scale", t.drift_scale);
  ck.get_int(v, "trajectory", "tie_step", t.tie_step, 1, 100000);
  ck.get_pos(v, "trajectory", "tie_sharpness", t.tie_sharpness);
  ck.get_int(v, "trajectory", "event_interval", t.event_interval, 2, 100000);
  ck.get_int(v, "trajectory", "planted_lag", t.planted_lag, 1, 100000);
  ck.get_pos(v, "trajectory", "tie_score", t.tie_score);
  ck.get_pos(v, "trajectory", "inj_score", t.inj_score);
  ck.get_pos(v, "trajectory", "inj_gap", t.inj_gap);
  ck.get_pos(v, "trajectory", "inj_v_gain", t.inj_v_gain);
  if (t.planted_lag >= t.event_interval)
    ck.fail("trajectory: planted_lag must be < event_interval");
}

void parse_exp3(Checker& ck, const json& v, Exp3Grid& g) {
  if (!ck.want_object(v, "exp3")) return;
  ck.known_keys(v, "exp3",
                {"rho_stars", "eps_caps", "tail_steps", "scenario_offset",
                 "scenario_rho_ln"});
  ck.get(v, "exp3", "rho_stars", g.rho_stars);
  ck.get(v, "exp3", "eps_caps", g.eps_caps);
  ck.get_int(v, "exp3", "tail_steps", g.tail_steps, 1, 100000);
  ck.get_pos(v, "exp3", "scenario_offset", g.scenario_offset);
  ck.get_pos(v, "exp3", "scenario_rho_ln", g.scenario_rho_ln);
  if (g.rho_stars.empty()) ck.fail("exp3.rho_stars: must be non-empty");
  if (g.eps_caps.empty()) ck.fail("exp3.eps_caps: must be non-empty");
  for (double r : g.rho_stars)
    if (!(r > 0.0 && r < 1.0)) ck.fail("exp3.rho_stars: entries must be in (0, 1)");
  for (double c : g.eps_caps)
    if (!(c > 0.0)) ck.fail("exp3.eps_caps: entries must be positive");
  if (!(g.scenario_rho_ln > 0.0 && g.scenario_rho_ln < 1.0))
    ck.fail("exp3.scenario_rho_ln: must be in (0, 1)");
}

json json_from_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: invalid JSON: ") + e.what());
  }
}

void apply_override(json& doc, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorCode::ConfigInvalid, "--set expects KEY=VALUE, got \"" + kv + "\"");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings need no quoting on the command line
  }
  json* node = &doc;
  size_t pos = 0;
  while (true) {
    const auto dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty())
      throw Error(ErrorCode::ConfigInvalid, "--set: empty key segment in \"" + path + "\"");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    pos = dot + 1;
  }
}

}  // namespace

int RunConfig::steps() const {
  if (sweep.steps > 0) return sweep.steps;
  switch (experiment) {
    case Experiment::Exp2: return 195;
    case Experiment::Exp3: return 100;
    default: return 60;
  }
}

std::string experiment_name(Experiment e) {
  switch (e) {
    case Experiment::Exp1: return "exp1";
    case Experiment::Exp2: return "exp2";
    case Experiment::Exp3: return "exp3";
    case Experiment::Diag: return "diag";
  }
  return "diag";
}

std::string tap_name(Tap t) {
  switch (t) {
    case Tap::Attn: return "attn";
    case Tap::Ffn: return "ffn";
    case Tap::Block: return "block";
  }
  return "block";
}

RunConfig validate_config(const std::string& json_text) {
  json doc = json_from_text(json_text);
  if (!doc.is_object())
    throw Error(ErrorCode::ConfigInvalid, "config: top level must be an object");
  // A manifest emitted by a previous run doubles as a config.
  if (doc.contains("config") && doc.contains("toolkit_version"))
    doc = doc.at("config");

  Checker ck;
  ck.known_keys(doc, "config",
                {"experiment", "root_seed", "output_dir", "model", "sweep",
                 "earlywarning", "mitigation", "trajectory", "exp3", "jobs"});

  RunConfig cfg;
  cfg.sweep.precisions = {
      PrecisionSpec{FpFormat::BF16, Accumulation::Native, KernelContext::General, false},
      PrecisionSpec{FpFormat::FP16, Accumulation::Native, KernelContext::General, false}};

  if (doc.contains("experiment")) {
    std::string name;
    ck.get(doc, "config", "experiment", name);
    if (name == "exp1") cfg.experiment = Experiment::Exp1;
    else if (name == "exp2") cfg.experiment = Experiment::Exp2;
    else if (name == "exp3") cfg.experiment = Experiment::Exp3;
    else if (name == "diag") cfg.experiment = Experiment::Diag;
    else ck.fail("experiment: expected one of exp1, exp2, exp3, diag");
  }
  uint64_t root_seed = cfg.root_seed;
  ck.get(doc, "config", "root_seed", root_seed);
  cfg.root_seed = root_seed;
  std::string out = cfg.output_dir.string();
  ck.get(doc, "config", "output_dir", out);
  cfg.output_dir = out;
  ck.get_int(doc, "config", "jobs", cfg.jobs, 1, 1024);

  if (doc.contains("model")) parse_model(ck, doc.at("model"), cfg.model);
  if (doc.contains("sweep")) parse_sweep(ck, doc.at("sweep"), cfg.sweep);
  if (doc.contains("earlywarning"))
    parse_earlywarning(ck, doc.at("earlywarning"), cfg.earlywarning);
  if (doc.contains("mitigation"))
    parse_mitigation(ck, doc.at("mitigation"), cfg.mitigation);
  if (doc.contains("trajectory"))
    parse_trajectory(ck, doc.at("trajectory"), cfg.trajectory);
  if (doc.contains("exp3")) parse_exp3(ck, doc.at("exp3"), cfg.exp3);

  if (cfg.earlywarning.window >= cfg.steps())
    ck.fail("earlywarning.window: must be smaller than the step count");

  if (!ck.errors.empty()) {
    std::ostringstream msg;
    msg << "config validation failed (" << ck.errors.size() << " violation"
        << (ck.errors.size() == 1 ? "" : "s") << "):";
    for (const auto& e : ck.errors) msg << "\n  - " << e;
    throw Error(ErrorCode::ConfigInvalid, msg.str());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides) {
  std::string text = "{}";
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  if (overrides.empty() && !std::getenv("FRAGILITY_SEED")) return validate_config(text);

  json doc = json_from_text(text);
  if (doc.contains("config") && doc.contains("toolkit_version")) doc = doc.at("config");
  for (const auto& kv : overrides) apply_override(doc, kv);
  if (const char* env = std::getenv("FRAGILITY_SEED")) {
    try {
      doc["root_seed"] = json::parse(env).get<uint64_t>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::ConfigInvalid, "FRAGILITY_SEED: expected an integer");
    }
  }
  return validate_config(doc.dump());
}

std::string config_to_json(const RunConfig& cfg) {
  json doc;
  doc["experiment"] = experiment_name(cfg.experiment);
  doc["root_seed"] = cfg.root_seed;
  doc["output_dir"] = cfg.output_dir.string();
  doc["jobs"] = cfg.jobs;
  doc["model"] = {{"depth", cfg.model.depth},
                  {"seq_len", cfg.model.seq_len},
                  {"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},
                  {"ffn_hidden", cfg.model.ffn_hidden},
                  {"ln_eps", cfg.model.ln_eps},
                  {"seed", cfg.model.seed}};
  json precs = json::array();
  for (const auto& p : cfg.sweep.precisions) precs.push_back(precision_to_json(p));
  doc["sweep"] = {{"widths", cfg.sweep.widths},
                  {"precisions", precs},
                  {"seeds", cfg.sweep.seeds},
                  {"steps", cfg.sweep.steps},
                  {"tail_fraction", cfg.sweep.tail_fraction},
                  {"tap", tap_name(cfg.sweep.tap)}};
  doc["earlywarning"] = {{"horizon", cfg.earlywarning.horizon},
                         {"window", cfg.earlywarning.window},
                         {"z_threshold", cfg.earlywarning.z_threshold},
                         {"k", cfg.earlywarning.k},
                         {"max_lag", cfg.earlywarning.max_lag},
                         {"n_perm", cfg.earlywarning.n_perm}};
  doc["mitigation"] = {{"rho_star", cfg.mitigation.rho_star},
                       {"check_interval", cfg.mitigation.check_interval},
                       {"subsample_size", cfg.mitigation.subsample_size},
                       {"eps_min", cfg.mitigation.eps_min},
                       {"eps_max", cfg.mitigation.eps_max},
                       {"restore_at_end", cfg.mitigation.restore_at_end}};
  doc["trajectory"] = {
      {"mode", cfg.trajectory.mode == TrajectoryMode::Drift ? "drift" : "scripted_tie"},
      {"drift_scale", cfg.trajectory.drift_scale},
      {"tie_step", cfg.trajectory.tie_step},
      {"tie_sharpness", cfg.trajectory.tie_sharpness},
      {"event_interval", cfg.trajectory.event_interval},
      {"planted_lag", cfg.trajectory.planted_lag},
      {"tie_score", cfg.trajectory.tie_score},
      {"inj_score", cfg.trajectory.inj_score},
      {"inj_gap", cfg.trajectory.inj_gap},
      {"inj_v_gain", cfg.trajectory.inj_v_gain}};
  doc["exp3"] = {{"rho_stars", cfg.exp3.rho_stars},
                 {"eps_caps", cfg.exp3.eps_caps},
                 {"tail_steps", cfg.exp3.tail_steps},
                 {"scenario_offset", cfg.exp3.scenario_offset},
                 {"scenario_rho_ln", cfg.exp3.scenario_rho_ln}};
  return doc.dump(2);
}

void write_manifest(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  json doc;
  doc["toolkit_version"] = kToolkitVersion;
  doc["root_seed"] = cfg.root_seed;
  doc["experiment"] = experiment_name(cfg.experiment);
  doc["config"] = json::parse(config_to_json(cfg));
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out)
    throw Error(ErrorCode::IoError,
                "cannot write manifest in " + out_dir.string());
  out << doc.dump(2) << "\n";
}

}  // namespace fragility
