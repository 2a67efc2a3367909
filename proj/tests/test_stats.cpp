#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "fragility/error.hpp"
#include "fragility/stats.hpp"

using namespace fragility;

namespace {

PairedSample make_sample(const std::vector<double>& x, const std::vector<double>& y) {
  PairedSample s;
  s.x = x;
  s.y = y;
  return s;
}

// textbook two-pass Pearson, written independently
double pearson_oracle(std::vector<double> x, std::vector<double> y) {
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
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("pearson_log on power laws") {
  std::vector<double> x = {0.5, 1.0, 2.0, 7.0, 31.0};
  std::vector<double> y_pow, y_inv;
  for (double v : x) {
    y_pow.push_back(3.0 * std::pow(v, 1.7));
    y_inv.push_back(5.0 / v);
  }
  CHECK(pearson_log(make_sample(x, y_pow)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson_log(make_sample(x, y_inv)) == doctest::Approx(-1.0).epsilon(1e-12));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  std::vector<double> rx, ry, lx, ly;
  for (int i = 0; i < 200; ++i) {
    rx.push_back(u(rng));
    ry.push_back(u(rng));
    lx.push_back(std::log(rx.back()));
    ly.push_back(std::log(ry.back()));
  }
  CHECK(pearson_log(make_sample(rx, ry)) ==
        doctest::Approx(pearson_oracle(lx, ly)).epsilon(1e-12));
}

TEST_CASE("pearson_log guards") {
  CHECK_THROWS_AS((void)pearson_log(make_sample({1.0, 2.0, -3.0}, {1.0, 2.0, 3.0})),
                  Error);
  try {
    (void)pearson_log(make_sample({1.0, 0.0, 3.0}, {1.0, 2.0, 3.0}));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveValue);
  }
  CHECK_THROWS_AS((void)pearson_log(make_sample({1.0, 2.0}, {1.0, 2.0})), Error);
  try {
    (void)pearson_log(make_sample({1.0, 2.0}, {1.0, 2.0}));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SampleTooSmall);
  }
  CHECK_THROWS_AS(pearson({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), Error);
}

TEST_CASE("spearman monotone and tie handling") {
  std::vector<double> x = {1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<double> up = {2.0, 9.0, 11.0, 30.0, 31.0};
  std::vector<double> down = {31.0, 30.0, 11.0, 9.0, 2.0};
  CHECK(spearman(make_sample(x, up)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(spearman(make_sample(x, down)) == doctest::Approx(-1.0).epsilon(1e-12));

  // ties: brute-force average ranks then Pearson
  std::vector<double> xt = {1.0, 2.0, 2.0, 4.0, 5.0};
  std::vector<double> yt = {3.0, 3.0, 7.0, 7.0, 9.0};
  std::vector<double> rx = {1.0, 2.5, 2.5, 4.0, 5.0};
  std::vector<double> ry = {1.5, 1.5, 3.5, 3.5, 5.0};
  CHECK(spearman(make_sample(xt, yt)) ==
        doctest::Approx(pearson_oracle(rx, ry)).epsilon(1e-12));
}

TEST_CASE("log-log OLS on exact and noisy power laws") {
  std::vector<double> x = {0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  std::vector<double> y1, y2;
  for (double v : x) {
    y1.push_back(v);
    y2.push_back(0.3 * v * v);
  }
  OlsFit f1 = ols_loglog(make_sample(x, y1));
  CHECK(f1.slope == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f1.r2 == doctest::Approx(1.0).epsilon(1e-12));
  OlsFit f2 = ols_loglog(make_sample(x, y2));
  CHECK(f2.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f2.r2 == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.1);
  std::uniform_real_distribution<double> u(0.2, 20.0);
  std::vector<double> slopes;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xs, ys;
    for (int i = 0; i < 60; ++i) {
      xs.push_back(u(rng));
      ys.push_back(2.0 * std::pow(xs.back(), 0.8) * std::exp(g(rng)));
    }
    slopes.push_back(ols_loglog(make_sample(xs, ys)).slope);
  }
  std::sort(slopes.begin(), slopes.end());
  CHECK(std::fabs(slopes[50] - 0.8) <= 0.1);
}

TEST_CASE("invariance to positive rescaling and value ranges") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 5.0);
  std::vector<double> x, y, xs, ys;
  for (int i = 0; i < 40; ++i) {
    x.push_back(u(rng));
    y.push_back(u(rng));
    xs.push_back(13.0 * x.back());
    ys.push_back(0.001 * y.back());
  }
  CHECK(pearson_log(make_sample(x, y)) ==
        doctest::Approx(pearson_log(make_sample(xs, ys))).epsilon(1e-12));
  CHECK(spearman(make_sample(x, y)) ==
        doctest::Approx(spearman(make_sample(xs, ys))).epsilon(1e-12));
  CHECK(std::fabs(pearson_log(make_sample(x, y))) <= 1.0);
  CHECK(std::fabs(spearman(make_sample(x, y))) <= 1.0);
  const OlsFit f = ols_loglog(make_sample(x, y));
  CHECK(f.r2 >= 0.0);
  CHECK(f.r2 <= 1.0);
}

TEST_CASE("raw-space ols sanity") {
  const OlsFit f = ols({1.0, 2.0, 3.0, 4.0}, {3.0, 5.0, 7.0, 9.0});
  CHECK(f.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f.intercept == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-12));
}
