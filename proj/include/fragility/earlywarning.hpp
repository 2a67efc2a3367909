#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fragility/error.hpp"

namespace fragility {

struct TimeSeries {
  std::string name;
  std::vector<double> values;
  int size() const { return static_cast<int>(values.size()); }
};

struct SpikeConfig {
  int horizon = 40;
  int window = 20;
  double z_threshold = 1.5;
  int k = 0;  // 0 = derive as ceil(0.1 T)
  int max_lag = 60;
  int n_perm = 999;

  int effective_k(int t) const {
    return k > 0 ? k : static_cast<int>((t + 9) / 10);
  }
};

struct LagScanResult {
  int best_lag = 0;        // positive = predictor leads
  double best_corr = 0.0;
  double p_value = 1.0;
};

/// Z-score with population stddev. Throws ConstantSeries.
std::vector<double> zscore(const std::vector<double>& v);

/// Pearson correlation of predictor[t] vs target[t+lag] over the overlap of
/// the z-scored series, maximized in |corr| over lags in [-max_lag, max_lag].
/// Ties break toward smaller |lag|, then toward positive lag.
LagScanResult lag_scan(const TimeSeries& predictor, const TimeSeries& target,
                       const SpikeConfig& cfg);

/// Permutation test: n_perm surrogates, each a uniform circular shift >= window
/// followed by a shuffle of window-sized block order (the shuffle keeps the lag
/// re-scan from undoing the shift), each re-scanned for its own best |corr|;
/// p = (1 + #{>= observed}) / (n_perm+1).
double permutation_pvalue(const TimeSeries& predictor, const TimeSeries& target,
                          const SpikeConfig& cfg, uint64_t seed);

/// Trailing-window rolling z-score detector; std floor 1e-12.
std::set<int> detect_spikes(const std::vector<double>& v, const SpikeConfig& cfg);

/// Alarms are the K largest predictor values (ties to the earlier step); a
/// hit is a target spike in (t, t+H]. Returns hits / K.
double precision_at_k(const TimeSeries& predictor, const TimeSeries& target,
                      const SpikeConfig& cfg);

struct LeadLagReport {
  uint64_t seed = 0;
  std::string target_name;
  int best_lag = 0;
  double best_corr = 0.0;
  double p_value = 1.0;
  double precision = 0.0;
};

extern const char* const kLeadLagCsvHeader;
std::string leadlag_csv_row(const LeadLagReport& r);

}  // namespace fragility
