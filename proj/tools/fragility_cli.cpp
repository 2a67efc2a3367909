#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fragility/config.hpp"
#include "fragility/driver.hpp"
#include "fragility/error.hpp"

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CliArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (or a prior manifest)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.overrides,
                  "Override a config value by dotted path, e.g. --set model.d_model=64");
  cmd->add_option("--out", args.out_dir, "Output directory");
  cmd->add_option("--jobs", args.jobs, "Worker threads for independent runs")
      ->check(CLI::PositiveNumber);
}

int run(fragility::Experiment exp, const CliArgs& args) {
  fragility::RunConfig cfg =
      fragility::load_config(args.config_path, args.overrides);
  cfg.experiment = exp;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  switch (exp) {
    case fragility::Experiment::Exp1: fragility::run_exp1(cfg); break;
    case fragility::Experiment::Exp2: fragility::run_exp2(cfg); break;
    case fragility::Experiment::Exp3: fragility::run_exp3(cfg); break;
    case fragility::Experiment::Diag: fragility::run_diag(cfg); break;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-precision transformer fragility toolkit"};
  app.require_subcommand(1);

  struct Sub {
    fragility::Experiment exp;
    CLI::App* cmd;
    CliArgs args;
  };
  std::vector<Sub> subs;
  subs.push_back({fragility::Experiment::Exp1,
                  app.add_subcommand("exp1", "Predictor-vs-mismatch sweep"), {}});
  subs.push_back({fragility::Experiment::Exp2,
                  app.add_subcommand("exp2", "Early-warning lead-lag study"), {}});
  subs.push_back({fragility::Experiment::Exp3,
                  app.add_subcommand("exp3", "Epsilon-bump mitigation grid"), {}});
  subs.push_back({fragility::Experiment::Diag,
                  app.add_subcommand("diag", "One-shot diagnostic report"), {}});
  for (auto& s : subs) add_common(s.cmd, s.args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    for (auto& s : subs)
      if (s.cmd->parsed()) return run(s.exp, s.args);
  } catch (const fragility::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == fragility::ErrorCode::ConfigInvalid ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
