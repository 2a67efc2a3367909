#include "fragility/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "fragility/diagnostics.hpp"

namespace fragility {

void EpsBumpConfig::validate() const {
  if (rho_star <= 0.0 || rho_star >= 1.0)
    throw Error(ErrorCode::ConfigInvalid, "rho_star must lie in (0,1)");
  if (eps_min > eps_max)
    throw Error(ErrorCode::ConfigInvalid, "eps_min must not exceed eps_max");
  if (check_interval <= 0 || subsample_size <= 0)
    throw Error(ErrorCode::ConfigInvalid,
                "check_interval and subsample_size must be positive");
}

double propose_eps(double sigma2_median, int d_model, double eps_mach_value,
                   const EpsBumpConfig& cfg) {
  const double cand =
      sigma2_median * static_cast<double>(d_model) * eps_mach_value / cfg.rho_star;
  return std::clamp(cand, cfg.eps_min, cfg.eps_max);
}

namespace {

Matrix head_rows(const Matrix& m, int k) {
  const int rows = std::min(k, m.rows);
  Matrix out(rows, m.cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < m.cols; ++j) out(i, j) = m(i, j);
  return out;
}

}  // namespace

std::vector<EpsBumpEvent> maybe_bump(Params& params, int step,
                                     const DualTrace& trace,
                                     const ModelConfig& cfg,
                                     FpFormat compute_format,
                                     const EpsBumpConfig& bump_cfg) {
  std::vector<EpsBumpEvent> events;
  if (step % bump_cfg.check_interval != 0) return events;
  const double em = eps_mach(compute_format);
  for (size_t l = 0; l < params.layers.size(); ++l) {
    LayerParams& layer = params.layers[l];
    for (int ln_id = 1; ln_id <= 2; ++ln_id) {
      LayerNormParams& ln = ln_id == 1 ? layer.ln1 : layer.ln2;
      const Matrix& tap = ln_id == 1 ? trace.layers[l].lp_ln1_in
                                     : trace.layers[l].lp_after_attn;
      const double s2 =
          sigma2_median(head_rows(tap, bump_cfg.subsample_size));
      const double rho = rho_ln(s2, ln.eps, cfg.d_model, em);
      if (rho >= 1.0) continue;  // not epsilon-dominated
      const double eps_new = propose_eps(s2, cfg.d_model, em, bump_cfg);
      if (eps_new <= ln.eps) continue;  // monotone guard
      EpsBumpEvent e;
      e.step = step;
      e.layer = static_cast<int>(l);
      e.ln = ln_id;
      e.sigma2_median = s2;
      e.rho_before = rho;
      e.eps_before = ln.eps;
      e.eps_after = eps_new;
      ln.eps = eps_new;
      events.push_back(e);
    }
  }
  return events;
}

void restore_eps(Params& params, const std::vector<EpsBumpEvent>& events) {
  // The first event per LN instance holds the pre-run eps.
  std::map<std::pair<int, int>, double> original;
  for (const EpsBumpEvent& e : events)
    original.try_emplace({e.layer, e.ln}, e.eps_before);
  for (const auto& [key, eps0] : original) {
    LayerParams& layer = params.layers[key.first];
    (key.second == 1 ? layer.ln1 : layer.ln2).eps = eps0;
  }
}

const char* const kEventsCsvHeader =
    "step,layer,ln,sigma2_median,rho_before,eps_before,eps_after";

std::string events_csv_row(const EpsBumpEvent& e) {
  std::ostringstream os;
  os.precision(17);
  os << e.step << ',' << e.layer << ',' << e.ln << ',' << e.sigma2_median
     << ',' << e.rho_before << ',' << e.eps_before << ',' << e.eps_after;
  return os.str();
}

}  // namespace fragility
