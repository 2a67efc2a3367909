#include "fragility/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fragility {

namespace {

void check_sample(const PairedSample& s, bool need_positive) {
  if (s.x.size() != s.y.size() || s.x.size() < 3)
    throw Error(ErrorCode::SampleTooSmall,
                "paired sample needs equal lengths >= 3");
  if (need_positive) {
    for (double v : s.x)
      if (v <= 0.0)
        throw Error(ErrorCode::NonPositiveValue, "log-space stat on x <= 0");
    for (double v : s.y)
      if (v <= 0.0)
        throw Error(ErrorCode::NonPositiveValue, "log-space stat on y <= 0");
  }
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw Error(ErrorCode::ConstantSeries, "pearson: constant input");
  return sxy / std::sqrt(sxx * syy);
}

double pearson_log(const PairedSample& s) {
  check_sample(s, true);
  std::vector<double> lx(s.x.size()), ly(s.y.size());
  for (size_t i = 0; i < s.x.size(); ++i) {
    lx[i] = std::log(s.x[i]);
    ly[i] = std::log(s.y[i]);
  }
  return pearson(lx, ly);
}

double spearman(const PairedSample& s) {
  check_sample(s, false);
  return pearson(average_ranks(s.x), average_ranks(s.y));
}

OlsFit ols(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  OlsFit fit;
  fit.slope = sxx == 0.0 ? 0.0 : sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (syy == 0.0) {
    fit.r2 = 1.0;
  } else {
    double ssr = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double e = y[i] - (fit.intercept + fit.slope * x[i]);
      ssr += e * e;
    }
    fit.r2 = 1.0 - ssr / syy;
  }
  return fit;
}

OlsFit ols_loglog(const PairedSample& s) {
  check_sample(s, true);
  std::vector<double> lx(s.x.size()), ly(s.y.size());
  for (size_t i = 0; i < s.x.size(); ++i) {
    lx[i] = std::log(s.x[i]);
    ly[i] = std::log(s.y[i]);
  }
  return ols(lx, ly);
}

}  // namespace fragility
