#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "jessi/graph.hpp"
#include "jessi/ops.hpp"
#include "jessi/rng.hpp"

using namespace jessi;

namespace {

// Independent oracles; deliberately naive re-implementations.

Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<double> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c(i, j) += a(i, p) * b(p, j);
  return c;
}

Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& kern,
                           const Tensor<double>& bias) {
  const std::size_t T = x.shape[0], din = x.shape[1];
  const std::size_t h = kern.shape[0], dout = kern.shape[2];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((h - 1) / 2);
  Tensor<double> out({T, dout});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = bias[o];
      for (std::size_t tau = 0; tau < h; ++tau) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + tau) - pad;
        if (s < 0 || s >= static_cast<std::ptrdiff_t>(T)) continue;
        for (std::size_t i = 0; i < din; ++i)
          acc += x(static_cast<std::size_t>(s), i) * kern(tau, i, o);
      }
      out(t, o) = acc;
    }
  return out;
}

std::vector<double> softmax_oracle(const std::vector<double>& logits) {
  double total = 0.0;
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) total += std::exp(logits[i]);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = std::exp(logits[i]) / total;
  return out;
}

template <typename Real>
Tensor<Real> rand_tensor(std::vector<std::size_t> shape, RngStream& rng, double lo = -2.0,
                         double hi = 2.0) {
  return Tensor<Real>::uniform(std::move(shape), static_cast<Real>(lo), static_cast<Real>(hi), rng);
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor<double> t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(Tensor<double>::scalar(4.0).rank() == 0);
  CHECK(Tensor<double>::scalar(4.0).size() == 1);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>{1.0, 2.0}), ShapeError);
  Tensor<double> bad({2});
  bad[0] = std::nan("");
  CHECK(!bad.all_finite());
  CHECK_THROWS_AS(bad.check_finite("test"), ValueError);
}

TEST_CASE("matmul identity and hand cases") {
  Graph<double> g;
  Var I = g.input(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  Var v = g.input(Tensor<double>({2, 1}, {5, 7}));
  Var out = matmul(g, I, v);
  CHECK(g.val(out).data == std::vector<double>{5, 7});

  Var a = g.input(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  Var ones = g.input(Tensor<double>({2, 1}, {1, 1}));
  Var out2 = matmul(g, a, ones);
  CHECK(g.val(out2).data == std::vector<double>{3, 7});
}

TEST_CASE("matmul equals triple-loop oracle") {
  RngStream rng(101);
  Graph<double> g;
  Tensor<double> A = rand_tensor<double>({7, 5}, rng);
  Tensor<double> B = rand_tensor<double>({5, 3}, rng);
  Var out = matmul(g, g.input(A), g.input(B));
  Tensor<double> expect = matmul_oracle(A, B);
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(g.val(out).data[i] - expect.data[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph<double> g;
  Var a = g.input(Tensor<double>({2, 3}));
  Var b = g.input(Tensor<double>({2, 3}));
  CHECK_THROWS_WITH_AS(matmul(g, a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("conv1d_same preserves time length for odd widths") {
  RngStream rng(5);
  for (std::size_t h : {3ul, 5ul, 7ul}) {
    Graph<double> g;
    Var x = g.input(rand_tensor<double>({5, 2}, rng));
    Var k = g.input(rand_tensor<double>({h, 2, 4}, rng));
    Var b = g.input(Tensor<double>({4}));
    Var out = conv1d_same(g, x, k, b);
    CHECK(g.val(out).shape == std::vector<std::size_t>{5, 4});
  }
}

TEST_CASE("conv1d_same matches sliding-window oracle") {
  Graph<double> g;
  Tensor<double> x({3, 1}, {1, 2, 3});
  Tensor<double> k({3, 1, 1}, {1, 1, 1});
  Tensor<double> b({1}, {0});
  Var out = conv1d_same(g, g.input(x), g.input(k), g.input(b));
  CHECK(g.val(out).data == std::vector<double>{3, 6, 5});
  Tensor<double> expect = conv_oracle(x, k, b);
  CHECK(g.val(out).data == expect.data);

  RngStream rng(55);
  Tensor<double> xr = rand_tensor<double>({9, 3}, rng);
  Tensor<double> kr = rand_tensor<double>({5, 3, 4}, rng);
  Tensor<double> br = rand_tensor<double>({4}, rng);
  Graph<double> g2;
  Var out2 = conv1d_same(g2, g2.input(xr), g2.input(kr), g2.input(br));
  Tensor<double> want = conv_oracle(xr, kr, br);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(g2.val(out2).data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("conv1d_same zero kernel gives constant bias") {
  Graph<double> g;
  Var x = g.input(Tensor<double>({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  Var k = g.input(Tensor<double>({3, 2, 2}));
  Var b = g.input(Tensor<double>({2}, {0.25, -1.5}));
  Var out = conv1d_same(g, x, k, b);
  for (std::size_t t = 0; t < 4; ++t) {
    CHECK(g.val(out)(t, 0) == 0.25);
    CHECK(g.val(out)(t, 1) == -1.5);
  }
}

TEST_CASE("conv1d_same rejects even widths") {
  Graph<double> g;
  Var x = g.input(Tensor<double>({4, 2}));
  Var k = g.input(Tensor<double>({4, 2, 2}));
  Var b = g.input(Tensor<double>({2}));
  CHECK_THROWS_AS(conv1d_same(g, x, k, b), ValueError);
}

TEST_CASE("max_pool_time hand cases and mask semantics") {
  Graph<double> g;
  Var x = g.input(Tensor<double>({2, 2}, {1, 3, 2, 0}));
  Tensor<double> mask({2}, {1, 1});
  Var out = max_pool_time(g, x, mask);
  CHECK(g.val(out).data == std::vector<double>{2, 3});

  Var y = g.input(Tensor<double>({3, 2}, {1, 3, 9, 9, 2, 0}));
  Tensor<double> hide({3}, {1, 0, 1});
  Var out2 = max_pool_time(g, y, hide);
  CHECK(g.val(out2).data == std::vector<double>{2, 3});

  Tensor<double> none({3}, {0, 0, 0});
  CHECK_THROWS_AS(max_pool_time(g, y, none), ValueError);
}

TEST_CASE("max_pool_time equals per-column scan oracle") {
  RngStream rng(77);
  Tensor<double> x = rand_tensor<double>({11, 4}, rng);
  Tensor<double> mask({11}, 1.0);
  mask[2] = 0.0;
  mask[9] = 0.0;
  Graph<double> g;
  Var out = max_pool_time(g, g.input(x), mask);
  for (std::size_t d = 0; d < 4; ++d) {
    double best = -1e300;
    for (std::size_t t = 0; t < 11; ++t)
      if (mask[t] != 0.0 && x(t, d) > best) best = x(t, d);
    CHECK(g.val(out)[d] == best);
  }
}

TEST_CASE("masked_softmax symmetry and single-survivor") {
  Graph<double> g;
  Var a = g.input(Tensor<double>({2}, {0, 0}));
  Var out = masked_softmax(g, a);
  CHECK(g.val(out)[0] == doctest::Approx(0.5));
  CHECK(g.val(out)[1] == doctest::Approx(0.5));

  Var b = g.input(Tensor<double>({2}, {3.7, 123.0}));
  Tensor<double> mask({2}, {1, 0});
  Var out2 = masked_softmax(g, b, &mask);
  CHECK(g.val(out2)[0] == 1.0);
  CHECK(g.val(out2)[1] == 0.0);

  Tensor<double> none({2}, {0, 0});
  CHECK_THROWS_AS(masked_softmax(g, b, &none), ValueError);
}

TEST_CASE("masked_softmax matches direct exp/sum oracle and its contract") {
  RngStream rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.next_below(9);
    Tensor<double> logits = rand_tensor<double>({n}, rng, -8.0, 8.0);
    Graph<double> g;
    Var out = masked_softmax(g, g.input(logits));
    auto expect = softmax_oracle(logits.data);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(g.val(out)[i] - expect[i]) < 1e-10);
      CHECK(g.val(out)[i] >= 0.0);
      total += g.val(out)[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("cross_entropy values and clamp") {
  Graph<double> g;
  Var sure = g.input(Tensor<double>({2}, {0, 1}));
  CHECK(g.val(cross_entropy(g, sure, 1)).data[0] == 0.0);

  Var half = g.input(Tensor<double>({2}, {0.5, 0.5}));
  CHECK(g.val(cross_entropy(g, half, 0)).data[0] == doctest::Approx(0.6931471805599453));

  Var zero = g.input(Tensor<double>({2}, {0, 1}));
  CHECK(g.val(cross_entropy(g, zero, 0)).data[0] == doctest::Approx(-std::log(1e-12)));

  CHECK_THROWS_AS(cross_entropy(g, half, 2), ValueError);
  Var bad = g.input(Tensor<double>({2}, {0.9, 0.3}));
  CHECK_THROWS_AS(cross_entropy(g, bad, 0), ValueError);
}

TEST_CASE("dropout identity modes") {
  RngStream rng(9);
  Graph<double> g;
  Tensor<double> x = rand_tensor<double>({4, 4}, rng);
  Var xv = g.input(x);
  CHECK(g.val(dropout(g, xv, 0.0, Mode::Train, rng)).data == x.data);
  CHECK(g.val(dropout(g, xv, 0.5, Mode::Eval, rng)).data == x.data);
  CHECK_THROWS_AS(dropout(g, xv, 1.0, Mode::Train, rng), ValueError);
}

TEST_CASE("dropout train-mode mean is preserved within 2 percent") {
  RngStream rng(4242);
  const std::size_t n = 100000;
  Graph<double> g;
  Var x = g.input(Tensor<double>({n}, 1.0));
  Var out = dropout(g, x, 0.5, Mode::Train, rng);
  double mean = 0.0;
  for (double v : g.val(out).data) mean += v;
  mean /= static_cast<double>(n);
  CHECK(std::abs(mean - 1.0) < 0.02);
}

TEST_CASE("dropout replays bitwise under a fixed seed") {
  Tensor<double> x({257}, 3.25);
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    RngStream rng(99);
    Graph<double> g;
    Var out = dropout(g, g.input(x), 0.5, Mode::Train, rng);
    if (run == 0)
      first = g.val(out).data;
    else
      CHECK(first == g.val(out).data);
  }
}

TEST_CASE("grad_reverse is the exact identity forward and negates backward") {
  Graph<double> g;
  Tensor<double> x({2}, {1.0, -2.0});
  Var xv = g.input(x);
  Var rev = grad_reverse(g, xv);
  CHECK(g.val(rev).data == x.data);

  // feed a known upstream gradient through a dot with constants
  Var w = g.input(Tensor<double>({2}, {0.3, -0.5}));
  Var prod = mul(g, rev, w);
  Var loss = sum(g, prod);
  g.backward(loss);
  CHECK(g.grad(xv).data[0] == doctest::Approx(-0.3));
  CHECK(g.grad(xv).data[1] == doctest::Approx(0.5));
}

TEST_CASE("backward product rule and accumulation") {
  Graph<double> g;
  Var x = g.input(Tensor<double>::scalar(2.0));
  Var y = g.input(Tensor<double>::scalar(3.0));
  Var prod = mul(g, x, y);
  g.backward(prod);
  CHECK(g.grad(x).data[0] == 3.0);
  CHECK(g.grad(y).data[0] == 2.0);

  // repeated backward accumulates into parameters additively
  Parameter<double> p("p", Tensor<double>({3}, {1, 2, 3}));
  Graph<double> g2;
  Var pv = g2.param(p);
  Var loss = sum(g2, grad_reverse(g2, pv));
  g2.backward(loss);
  CHECK(p.grad.data == std::vector<double>{-1, -1, -1});
  g2.backward(loss);
  CHECK(p.grad.data == std::vector<double>{-2, -2, -2});
}

TEST_CASE("backward rejects non-scalar roots") {
  Graph<double> g;
  Var x = g.input(Tensor<double>({2}, {1, 2}));
  CHECK_THROWS_AS(g.backward(x), ValueError);
}

TEST_CASE("elementwise ops shape checks") {
  Graph<double> g;
  Var a = g.input(Tensor<double>({2, 2}));
  Var b = g.input(Tensor<double>({4}));
  CHECK_THROWS_AS(add(g, a, b), ShapeError);
  CHECK_THROWS_AS(mul(g, a, b), ShapeError);
}

TEST_CASE("ops stay finite on random inputs in [-10,10]") {
  RngStream rng(3131);
  Graph<double> g;
  Tensor<double> x = rand_tensor<double>({6, 8}, rng, -10.0, 10.0);
  Var xv = g.input(x);
  CHECK(g.val(tanh_op(g, xv)).all_finite());
  CHECK(g.val(sigmoid(g, xv)).all_finite());
  CHECK(g.val(relu(g, xv)).all_finite());
  CHECK(g.val(masked_softmax(g, xv)).all_finite());
}
