#include "fragility/earlywarning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace fragility {

std::vector<double> zscore(const std::vector<double>& v) {
  const size_t n = v.size();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  if (var == 0.0)
    throw Error(ErrorCode::ConstantSeries, "zscore: constant series");
  const double sd = std::sqrt(var);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = (v[i] - mean) / sd;
  return out;
}

namespace {

double overlap_corr(const std::vector<double>& zp, const std::vector<double>& zt,
                    int lag) {
  // predictor[t] vs target[t+lag]
  const int t_len = static_cast<int>(zp.size());
  const int lo = std::max(0, -lag);
  const int hi = std::min(t_len, t_len - lag);
  const int n = hi - lo;
  double mp = 0.0, mt = 0.0;
  for (int i = lo; i < hi; ++i) {
    mp += zp[i];
    mt += zt[i + lag];
  }
  mp /= n;
  mt /= n;
  double spt = 0.0, spp = 0.0, stt = 0.0;
  for (int i = lo; i < hi; ++i) {
    const double dp = zp[i] - mp, dt = zt[i + lag] - mt;
    spt += dp * dt;
    spp += dp * dp;
    stt += dt * dt;
  }
  if (spp == 0.0 || stt == 0.0) return 0.0;
  return spt / std::sqrt(spp * stt);
}

LagScanResult scan_impl(const std::vector<double>& zp,
                        const std::vector<double>& zt, int max_lag) {
  LagScanResult best;
  bool first = true;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    const double c = overlap_corr(zp, zt, lag);
    const bool better =
        first || std::fabs(c) > std::fabs(best.best_corr) ||
        (std::fabs(c) == std::fabs(best.best_corr) &&
         (std::abs(lag) < std::abs(best.best_lag) ||
          (std::abs(lag) == std::abs(best.best_lag) && lag > best.best_lag)));
    if (better) {
      best.best_lag = lag;
      best.best_corr = c;
      first = false;
    }
  }
  return best;
}

}  // namespace

LagScanResult lag_scan(const TimeSeries& predictor, const TimeSeries& target,
                       const SpikeConfig& cfg) {
  const int t_len = predictor.size();
  if (target.size() != t_len || t_len < 2 * cfg.max_lag + 2)
    throw Error(ErrorCode::SampleTooSmall,
                "lag_scan: series too short for max_lag");
  return scan_impl(zscore(predictor.values), zscore(target.values), cfg.max_lag);
}

double permutation_pvalue(const TimeSeries& predictor, const TimeSeries& target,
                          const SpikeConfig& cfg, uint64_t seed) {
  const std::vector<double> zp = zscore(predictor.values);
  const std::vector<double> zt = zscore(target.values);
  const int t_len = static_cast<int>(zp.size());
  const double observed = std::fabs(scan_impl(zp, zt, cfg.max_lag).best_corr);

  if (cfg.n_perm <= 0) return 1.0;
  std::mt19937_64 rng(seed);
  // Shift alone is not enough: the per-permutation lag re-scan can undo any
  // shift within max_lag of the planted alignment. Scrambling the order of
  // window-sized blocks after the shift removes that realignment while still
  // preserving autocorrelation at scales below the detector window.
  const int block = std::max(1, cfg.window);
  const int lo = std::min(block, t_len);
  const int hi = std::max(lo, t_len - block);
  std::uniform_int_distribution<int> shift_dist(lo, hi);
  const int n_blocks = (t_len + block - 1) / block;
  std::vector<int> order(n_blocks);
  int count = 0;
  std::vector<double> shifted(t_len);
  std::vector<double> perm(t_len);
  for (int p = 0; p < cfg.n_perm; ++p) {
    const int s = shift_dist(rng);
    for (int i = 0; i < t_len; ++i) shifted[i] = zp[(i + s) % t_len];
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    int out = 0;
    for (const int b : order) {
      const int b_lo = b * block;
      const int b_hi = std::min(t_len, b_lo + block);
      for (int i = b_lo; i < b_hi; ++i) perm[out++] = shifted[i];
    }
    const double c = std::fabs(scan_impl(perm, zt, cfg.max_lag).best_corr);
    if (c >= observed) ++count;
  }
  return static_cast<double>(1 + count) / static_cast<double>(cfg.n_perm + 1);
}

std::set<int> detect_spikes(const std::vector<double>& v, const SpikeConfig& cfg) {
  std::set<int> spikes;
  const int t_len = static_cast<int>(v.size());
  for (int t = cfg.window; t < t_len; ++t) {
    double mean = 0.0;
    for (int i = t - cfg.window; i < t; ++i) mean += v[i];
    mean /= cfg.window;
    double var = 0.0;
    for (int i = t - cfg.window; i < t; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= cfg.window;
    const double sd = std::max(std::sqrt(var), 1e-12);
    if ((v[t] - mean) / sd > cfg.z_threshold) spikes.insert(t);
  }
  return spikes;
}

double precision_at_k(const TimeSeries& predictor, const TimeSeries& target,
                      const SpikeConfig& cfg) {
  const int t_len = predictor.size();
  const int k = std::min(cfg.effective_k(t_len), t_len);
  std::vector<int> idx(t_len);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (predictor.values[a] != predictor.values[b])
      return predictor.values[a] > predictor.values[b];
    return a < b;  // ties to the earlier step
  });
  const std::set<int> spikes = detect_spikes(target.values, cfg);
  int hits = 0;
  for (int r = 0; r < k; ++r) {
    const int t = idx[r];
    auto it = spikes.upper_bound(t);
    if (it != spikes.end() && *it <= t + cfg.horizon) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

const char* const kLeadLagCsvHeader =
    "seed,target_name,best_lag,best_corr,p_value,precision_at_k";

std::string leadlag_csv_row(const LeadLagReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.seed << ',' << r.target_name << ',' << r.best_lag << ','
     << r.best_corr << ',' << r.p_value << ',' << r.precision;
  return os.str();
}

}  // namespace fragility
