#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "fragility/linalg.hpp"
#include "fragility/model.hpp"

using namespace fragility;

namespace {

ModelConfig small_cfg(uint64_t seed = 0) {
  ModelConfig c;
  c.depth = 2;
  c.seq_len = 6;
  c.d_model = 8;
  c.n_heads = 2;
  c.ffn_hidden = 16;
  c.seed = seed;
  return c;
}

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (double& x : m.data) x = scale * g(rng);
  return m;
}

PrecisionSpec fp16_spec(Accumulation a = Accumulation::Native) {
  PrecisionSpec s;
  s.compute = FpFormat::FP16;
  s.accumulate = a;
  return s;
}

// Naive single-head attention written independently of the library kernels.
Matrix naive_attention(const Matrix& x, const LayerParams& layer,
                       const ModelConfig& cfg) {
  const int n = x.rows, d = cfg.d_model, dh = cfg.d_head();
  Matrix out(n, d);
  Matrix concat(n, d);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const int c0 = h * dh;
    // Q, K, V
    std::vector<std::vector<double>> q(n, std::vector<double>(dh, 0.0)), k = q, v = q;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dh; ++j)
        for (int c = 0; c < d; ++c) {
          q[i][j] += x(i, c) * layer.w_q(c, c0 + j);
          k[i][j] += x(i, c) * layer.w_k(c, c0 + j);
          v[i][j] += x(i, c) * layer.w_v(c, c0 + j);
        }
    for (int i = 0; i < n; ++i) {
      std::vector<double> s(n, 0.0);
      double mx = -1e300;
      for (int t = 0; t < n; ++t) {
        for (int j = 0; j < dh; ++j) s[t] += q[i][j] * k[t][j];
        s[t] /= std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[t]);
      }
      double z = 0.0;
      for (int t = 0; t < n; ++t) z += std::exp(s[t] - mx);
      for (int j = 0; j < dh; ++j) {
        double a = 0.0;
        for (int t = 0; t < n; ++t) a += (std::exp(s[t] - mx) / z) * v[t][j];
        concat(i, c0 + j) = a;
      }
    }
  }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += concat(i, j) * layer.w_o(j, c);
      out(i, c) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("init_params determinism and shapes") {
  const ModelConfig c = small_cfg(7);
  const Params a = init_params(c);
  const Params b = init_params(c);
  REQUIRE(a.layers.size() == 2);
  for (size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].w_q.data == b.layers[l].w_q.data);
    CHECK(a.layers[l].w2.data == b.layers[l].w2.data);
    CHECK(a.layers[l].w_q.rows == 8);
    CHECK(a.layers[l].w_q.cols == 8);
    CHECK(a.layers[l].w1.cols == 16);
    CHECK(a.layers[l].w2.rows == 16);
    for (double g : a.layers[l].ln1.gamma) CHECK(g == 1.0);
    for (double bb : a.layers[l].ln1.beta) CHECK(bb == 0.0);
  }
  ModelConfig c2 = c;
  c2.seed = 8;
  const Params diff = init_params(c2);
  CHECK(diff.layers[0].w_q.data != a.layers[0].w_q.data);
  // head blocks: d_model=8, heads=2 -> each block 8x4
  CHECK(a.layers[0].w_q.col_block(0, c.d_head()).cols == 4);
}

TEST_CASE("ln_forward trivia and statistics") {
  const PrecisionSpec ref;
  const int d = 32;
  std::vector<double> gamma(d, 1.0), beta(d, 0.0);
  std::vector<double> x(d, 3.25);
  const auto y = ln_forward(x, gamma, beta, 1e-5, ref);
  for (double v : y) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 5.0);
  for (double& v : x) v = g(rng);
  const auto z = ln_forward(x, gamma, beta, 1e-10, ref);
  double mean = 0.0, var = 0.0;
  for (double v : z) mean += v;
  mean /= d;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= d;
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ln_forward eps-dominated amplification under FP16") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  const int d = 64;
  const double eps = 1e-4;
  std::vector<double> gamma(d, 1.0), beta(d, 0.0);
  const PrecisionSpec ref;
  const auto mismatch = [&](double sigma2, std::mt19937_64& r) {
    std::vector<double> x(d);
    for (double& v : x) v = 1.0 + std::sqrt(sigma2) * g(r);
    const auto lo = ln_forward(x, gamma, beta, eps, fp16_spec());
    const auto hi = ln_forward(x, gamma, beta, eps, ref);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < d; ++i) {
      num += (lo[i] - hi[i]) * (lo[i] - hi[i]);
      den += hi[i] * hi[i];
    }
    return std::sqrt(num / (den > 0 ? den : 1.0));
  };
  std::vector<double> dominated, safe;
  for (int t = 0; t < 100; ++t) {
    dominated.push_back(mismatch(eps / 100.0, rng));
    safe.push_back(mismatch(100.0 * eps, rng));
  }
  std::sort(dominated.begin(), dominated.end());
  std::sort(safe.begin(), safe.end());
  CHECK(dominated[50] > safe[50]);
}

TEST_CASE("attention_forward degenerate and pinned cases") {
  const ModelConfig c = small_cfg(3);
  Params p = init_params(c);
  const PrecisionSpec ref;
  std::mt19937_64 rng(13);
  const Matrix x = random_matrix(c.seq_len, c.d_model, rng);

  SUBCASE("zero projections give uniform rows and mean-of-values") {
    LayerParams layer = p.layers[0];
    layer.w_q = Matrix::zeros(c.d_model, c.d_model);
    layer.w_k = Matrix::zeros(c.d_model, c.d_model);
    const AttentionResult res = attention_forward(x, layer, c, ref, true);
    for (const auto& head : res.heads) {
      for (int i = 0; i < head.p.rows; ++i)
        for (int j = 0; j < head.p.cols; ++j)
          CHECK(head.p(i, j) == doctest::Approx(1.0 / c.seq_len).epsilon(1e-12));
      for (int j = 0; j < head.v.cols; ++j) {
        double mean = 0.0;
        for (int i = 0; i < head.v.rows; ++i) mean += head.v(i, j);
        mean /= head.v.rows;
        for (int i = 0; i < head.a.rows; ++i)
          CHECK(head.a(i, j) == doctest::Approx(mean).epsilon(1e-12));
      }
    }
  }

  SUBCASE("single token, single head: P=[1], A=V") {
    ModelConfig c1 = c;
    c1.seq_len = 1;
    c1.n_heads = 1;
    Params p1 = init_params(c1);
    const Matrix x1 = random_matrix(1, c1.d_model, rng);
    const AttentionResult res = attention_forward(x1, p1.layers[0], c1, ref, true);
    REQUIRE(res.heads.size() == 1);
    CHECK(res.heads[0].p(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    for (int j = 0; j < c1.d_model; ++j)
      CHECK(res.heads[0].a(0, j) == doctest::Approx(res.heads[0].v(0, j)).epsilon(1e-14));
  }

  SUBCASE("matches the naive independent reimplementation") {
    const AttentionResult res = attention_forward(x, p.layers[0], c, ref, false);
    const Matrix naive = naive_attention(x, p.layers[0], c);
    CHECK(fro_norm(res.out - naive) <= 1e-12 * std::max(1.0, fro_norm(naive)));
  }
}

TEST_CASE("forward_dual reference arm has zero mismatch and is deterministic") {
  const ModelConfig c = small_cfg(21);
  const Params p = init_params(c);
  std::mt19937_64 rng(14);
  const Matrix x0 = random_matrix(c.seq_len, c.d_model, rng);
  const PrecisionSpec ref;
  const DualTrace t = forward_dual(p, c, x0, ref);
  for (const auto& layer : t.layers) {
    CHECK(layer.r_attn == 0.0);
    CHECK(layer.r_ffn == 0.0);
    CHECK(layer.r_out == 0.0);
  }
  const DualTrace a = forward_dual(p, c, x0, fp16_spec());
  const DualTrace b = forward_dual(p, c, x0, fp16_spec());
  CHECK(a.r_final == b.r_final);
  CHECK(a.layers[0].lp_out.data == b.layers[0].lp_out.data);
  CHECK(a.r_final > 0.0);
}

TEST_CASE("wider accumulator does not increase mismatch (median over configs)") {
  int no_worse = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const ModelConfig c = small_cfg(100 + trial);
    const Params p = init_params(c);
    std::mt19937_64 rng(200 + trial);
    const Matrix x0 = random_matrix(c.seq_len, c.d_model, rng);
    const double r_native = forward_dual(p, c, x0, fp16_spec()).r_final;
    const double r_acc =
        forward_dual(p, c, x0, fp16_spec(Accumulation::Fp32Acc)).r_final;
    if (r_native >= r_acc) ++no_worse;
  }
  CHECK(no_worse >= 25);
}

TEST_CASE("mismatch trends upward with depth (median over seeds)") {
  int up = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig c = small_cfg(300 + trial);
    c.depth = 4;
    const Params p = init_params(c);
    std::mt19937_64 rng(400 + trial);
    const Matrix x0 = random_matrix(c.seq_len, c.d_model, rng);
    const DualTrace t = forward_dual(p, c, x0, fp16_spec());
    if (t.layers.back().r_out >= t.layers.front().r_out) ++up;
  }
  CHECK(up >= 25);
}

TEST_CASE("residual_jacobian_norm on known maps") {
  std::vector<double> x = {0.3, -1.2, 0.8, 2.0};
  const BranchFn zero = [](const std::vector<double>& v) {
    return std::vector<double>(v.size(), 0.0);
  };
  CHECK(residual_jacobian_norm(zero, x) == doctest::Approx(0.0).epsilon(1e-9));

  const BranchFn half = [](const std::vector<double>& v) {
    std::vector<double> out(v);
    for (double& e : out) e *= 0.5;
    return out;
  };
  CHECK(residual_jacobian_norm(half, x) == doctest::Approx(0.5).epsilon(1e-6));

  std::mt19937_64 rng(15);
  const Matrix m = random_matrix(4, 4, rng);
  const BranchFn linear = [&](const std::vector<double>& v) {
    std::vector<double> out(4, 0.0);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) out[i] += m(i, j) * v[j];
    return out;
  };
  const double want = spectral_norm(m);
  CHECK(std::fabs(residual_jacobian_norm(linear, x) - want) <= 1e-4 * want);

  CHECK_THROWS_AS((void)residual_jacobian_norm(zero, std::vector<double>(5000, 0.0)),
                  Error);
}

TEST_CASE("softmax rows of the LP arm sum to one within n*eps") {
  const ModelConfig c = small_cfg(31);
  const Params p = init_params(c);
  std::mt19937_64 rng(16);
  const Matrix x0 = random_matrix(c.seq_len, c.d_model, rng);
  const Matrix ln = ln_rows(x0, p.layers[0].ln1, fp16_spec());
  const AttentionResult res = attention_forward(ln, p.layers[0], c, fp16_spec(), true);
  for (const auto& head : res.heads)
    for (int i = 0; i < head.p.rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < head.p.cols; ++j) acc += head.p(i, j);
      CHECK(std::fabs(acc - 1.0) <= head.p.cols * eps_mach(FpFormat::FP16));
    }
}
