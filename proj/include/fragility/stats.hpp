#pragma once

#include <string>
#include <vector>

#include "fragility/error.hpp"

namespace fragility {

struct PairedSample {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<std::string> labels;
};

/// Pearson correlation of (log x, log y). Throws NonPositiveValue.
double pearson_log(const PairedSample& s);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Rank correlation with averaged ties.
double spearman(const PairedSample& s);

struct OlsFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares fit of log y on log x (natural log).
OlsFit ols_loglog(const PairedSample& s);

/// Raw-space fit, for comparison dumps.
OlsFit ols(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace fragility
