#pragma once

#include <string>
#include <vector>

#include "fragility/model.hpp"

namespace fragility {

struct EpsBumpConfig {
  double rho_star = 0.6;      // target in (0,1); paper sweep {0.5, 0.6, 0.7}
  int check_interval = 5;
  int subsample_size = 16;
  double eps_min = 1e-6;
  double eps_max = 1e-2;
  bool restore_at_end = true;

  void validate() const;
};

struct EpsBumpEvent {
  int step = 0;
  int layer = 0;
  int ln = 0;  // 1 or 2
  double sigma2_median = 0.0;
  double rho_before = 0.0;
  double eps_before = 0.0;
  double eps_after = 0.0;
};

/// clip(sigma2_median * d_model * eps_mach / rho_star, eps_min, eps_max).
double propose_eps(double sigma2_median, int d_model, double eps_mach_value,
                   const EpsBumpConfig& cfg);

/// The monotone epsilon-bump policy. Acts only when step % check_interval
/// == 0; evaluates rho_LN on the first subsample_size token rows of each LN
/// input from the low-precision arm, bumps eps only upward, and records one
/// event per applied update. eps_mach is that of the compute precision.
std::vector<EpsBumpEvent> maybe_bump(Params& params, int step,
                                     const DualTrace& trace,
                                     const ModelConfig& cfg,
                                     FpFormat compute_format,
                                     const EpsBumpConfig& bump_cfg);

/// Returns every LN eps touched by `events` to its pre-run value.
void restore_eps(Params& params, const std::vector<EpsBumpEvent>& events);

extern const char* const kEventsCsvHeader;
std::string events_csv_row(const EpsBumpEvent& e);

}  // namespace fragility
