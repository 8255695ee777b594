#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "msnmt/autodiff.hpp"
#include "msnmt/grad_check.hpp"
#include "msnmt/kernels.hpp"

using namespace msnmt;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (T& x : t.data) x = static_cast<T>(dist(rng));
  return t;
}

// Naive i-j-p triple loop, independent of the kernel loop order.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Reduces an arbitrary output to a scalar with fixed random weights so that
// every output coordinate carries a distinct gradient.
template <typename T>
Var<T> probe(const Var<T>& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, out.tape()->constant(random_tensor<T>(out.shape(), rng))));
}

template <typename T>
double check(const LossBuilder<T>& build, std::vector<Tensor<T>*> params, T eps) {
  return grad_check<T>(build, params, eps).max_relative_error;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape<double> tape;
  auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  CHECK(matmul(eye, m).value().data == std::vector<double>{1, 2, 3, 4});

  auto zero = tape.constant(Tensor<double>({2, 2}, 0.0));
  auto wide = tape.constant(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(matmul(zero, wide).value().data == std::vector<double>(6, 0.0));

  auto b = tape.constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  const auto expected = naive_matmul({1, 2, 3, 4}, {5, 6, 7, 8}, 2, 2, 2);
  CHECK(expected == std::vector<double>{19, 22, 43, 50});
  CHECK(matmul(m, b).value().data == expected);
}

TEST_CASE("matmul shape error names both shapes") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({2, 2}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("[2x3]") != std::string::npos);
    CHECK(what.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("parallel and serial kernels agree bit for bit and match the naive oracle") {
  Rng rng(7);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {3, 5, 2}, {64, 48, 96}, {129, 33, 70}}) {
    auto a = random_tensor<double>({std::size_t(m), std::size_t(k)}, rng);
    auto b = random_tensor<double>({std::size_t(k), std::size_t(n)}, rng);
    std::vector<double> par(m * n), ser(m * n);
    kernels::gemm_nn(a.data.data(), b.data.data(), par.data(), m, k, n, false);
    kernels::serial::gemm_nn(a.data.data(), b.data.data(), ser.data(), m, k, n, false);
    CHECK(par == ser);
    const auto ref = naive_matmul(a.data, b.data, m, k, n);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(par[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // A * (B^T)^T and (A^T)^T * B through the transposed kernels.
    std::vector<double> bt(k * n), at(m * k);
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) bt[j * k + p] = b.data[p * n + j];
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) at[p * m + i] = a.data[i * k + p];
    std::vector<double> nt(m * n), nt_ser(m * n), tn(m * n), tn_ser(m * n);
    kernels::gemm_nt(a.data.data(), bt.data(), nt.data(), m, k, n, false);
    kernels::serial::gemm_nt(a.data.data(), bt.data(), nt_ser.data(), m, k, n, false);
    kernels::gemm_tn(at.data(), b.data.data(), tn.data(), m, k, n, false);
    kernels::serial::gemm_tn(at.data(), b.data.data(), tn_ser.data(), m, k, n, false);
    CHECK(nt == nt_ser);
    CHECK(tn == tn_ser);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(nt[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      CHECK(tn[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax") {
  const std::vector<double> same{2.5, 2.5, 2.5};
  for (double p : softmax<double>(same)) CHECK(p == doctest::Approx(1.0 / 3.0));
  CHECK(softmax<double>(std::vector<double>{-4.0}) == std::vector<double>{1.0});

  // mpmath at 30 digits
  const auto p = softmax<double>(std::vector<double>{1, 2, 3});
  CHECK(p[0] == doctest::Approx(0.0900305731703804580).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.2447284710547976525).epsilon(1e-14));
  CHECK(p[2] == doctest::Approx(0.6652409557748218895).epsilon(1e-14));

  CHECK_THROWS_AS(softmax<double>(std::vector<double>{}), DomainError);

  // Large inputs stay finite thanks to max-subtraction.
  const auto big = softmax<float>(std::vector<float>{1000.f, 1001.f});
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] + big[1] == doctest::Approx(1.0f));
}

TEST_CASE("softmax is shift invariant and normalized on random inputs") {
  Rng rng(11);
  std::uniform_real_distribution<double> dist(-20, 20);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 9);
    for (double& x : v) x = dist(rng);
    const double shift = dist(rng);
    auto shifted = v;
    for (double& x : shifted) x += shift;
    const auto a = softmax<double>(v);
    const auto b = softmax<double>(shifted);
    double total = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i] >= 0.0);
      CHECK(std::abs(a[i] - b[i]) <= 1e-6);
      total += a[i];
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("cross entropy") {
  SUBCASE("uniform logits give ln V") {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>({3, 7}, 0.25));
    const std::vector<int> targets{0, 3, 6};
    CHECK(cross_entropy_loss(logits, targets).value()[0] == doctest::Approx(std::log(7.0)));
  }
  SUBCASE("peaked logits drive loss to zero") {
    Tape<double> tape;
    Tensor<double> t({1, 4}, 0.0);
    t.data[2] = 60.0;
    const std::vector<int> targets{2};
    CHECK(cross_entropy_loss(tape.constant(t), targets).value()[0] < 1e-20);
  }
  SUBCASE("two steps against the arbitrary-precision oracle") {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>({2, 3}, {0.5, -1.0, 2.0, 1.5, 0.25, -0.75}));
    const std::vector<int> targets{2, 1};
    CHECK(cross_entropy_loss(logits, targets).value()[0] ==
          doctest::Approx(0.910991953032190586).epsilon(1e-14));
  }
  SUBCASE("out of range target") {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>({1, 3}));
    const std::vector<int> targets{3};
    CHECK_THROWS_AS(cross_entropy_loss(logits, targets), IndexError);
  }
}

TEST_CASE("backward analytic cases") {
  Rng rng(3);
  Tensor<double> x = random_tensor<double>({2, 3}, rng);
  {
    Tape<double> tape;
    auto loss = sum(tape.param(x));
    tape.backward(loss);
    CHECK(x.grad == std::vector<double>(6, 1.0));
  }
  x.clear_grad();
  {
    Tape<double> tape;
    auto xv = tape.param(x);
    tape.backward(sum(mul(xv, xv)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad[i] == doctest::Approx(2 * x.data[i]));
  }
}

TEST_CASE("backward rejects non-scalar loss and leaves unreachable tensors untouched") {
  Rng rng(4);
  Tensor<double> used = random_tensor<double>({2, 2}, rng);
  Tensor<double> unused = random_tensor<double>({2, 2}, rng);
  Tape<double> tape;
  auto u = tape.param(used);
  tape.param(unused);
  CHECK_THROWS_AS(tape.backward(tanh(u)), ContractError);
  Tape<double> tape2;
  auto u2 = tape2.param(used);
  tape2.param(unused);
  tape2.backward(sum(tanh(u2)));
  CHECK(used.has_grad());
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("grad_check is exact for linear functions") {
  Rng rng(5);
  Tensor<double> x = random_tensor<double>({3, 4}, rng);
  Tensor<double> w = random_tensor<double>({4, 2}, rng);
  LossBuilder<double> f = [&](Tape<double>& t) { return probe(matmul(t.param(x), t.frozen(w)), 9); };
  CHECK(check<double>(f, {&x}, 1e-3) <= 1e-9);
}

TEST_CASE("grad_check detects a nondeterministic function") {
  Rng rng(6);
  Tensor<double> x = random_tensor<double>({2}, rng);
  double drift = 0.0;
  LossBuilder<double> f = [&](Tape<double>& t) {
    drift += 1.0;
    return scale(sum(t.param(x)), drift);
  };
  std::vector<Tensor<double>*> params{&x};
  CHECK_THROWS_AS(grad_check<double>(f, params, 1e-6), ContractError);
}

TEST_CASE("softmax plus cross entropy on a random 5-vector (wide)") {
  Rng rng(8);
  Tensor<double> logits = random_tensor<double>({1, 5}, rng, -2, 2);
  const std::vector<int> target{3};
  LossBuilder<double> f = [&](Tape<double>& t) { return cross_entropy_loss(t.param(logits), target); };
  CHECK(check<double>(f, {&logits}, 1e-6) <= 1e-6);
}

TEST_CASE("every differentiable op passes grad_check in wide precision") {
  Rng rng(21);
  constexpr double eps = 1e-6;
  constexpr double tol = 1e-6;
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 5}, rng);
  auto c = random_tensor<double>({3, 4}, rng);
  auto d = random_tensor<double>({5, 4}, rng);
  auto bias = random_tensor<double>({5}, rng);
  auto bias4 = random_tensor<double>({4}, rng);
  auto w = random_tensor<double>({3, 1}, rng);

  SUBCASE("matmul") {
    LossBuilder<double> f = [&](Tape<double>& t) { return probe(matmul(t.param(a), t.param(b)), 1); };
    CHECK(check<double>(f, {&a, &b}, eps) <= tol);
  }
  SUBCASE("matmul_nt") {
    LossBuilder<double> f = [&](Tape<double>& t) { return probe(matmul_nt(t.param(a), t.param(d)), 2); };
    CHECK(check<double>(f, {&a, &d}, eps) <= tol);
  }
  SUBCASE("linear") {
    LossBuilder<double> f = [&](Tape<double>& t) {
      return probe(linear(t.param(a), t.param(b), t.param(bias)), 3);
    };
    CHECK(check<double>(f, {&a, &b, &bias}, eps) <= tol);
  }
  SUBCASE("add, add_bias, mul, scale") {
    LossBuilder<double> f = [&](Tape<double>& t) {
      auto x = t.param(a);
      auto y = t.param(c);
      return probe(scale(mul(add_bias(add(x, y), t.param(bias4)), x), 0.7), 4);
    };
    CHECK(check<double>(f, {&a, &c, &bias4}, eps) <= tol);
  }
  SUBCASE("tanh, sigmoid") {
    LossBuilder<double> f = [&](Tape<double>& t) { return probe(sigmoid(tanh(t.param(a))), 5); };
    CHECK(check<double>(f, {&a}, eps) <= tol);
  }
  SUBCASE("reshape, stack, concat_cols, column, mul_col, softmax_rows") {
    LossBuilder<double> f = [&](Tape<double>& t) {
      auto x = t.param(a);
      auto y = t.param(c);
      std::vector<Var<double>> items{x, y};
      auto s = reshape(stack<double>(items), {6, 4});
      auto cat = concat_cols(x, y);
      auto sm = softmax_rows(cat);
      auto scaled = mul_col(sm, add(column(cat, 2), t.param(w)));
      return add(probe(s, 6), probe(scaled, 7));
    };
    CHECK(check<double>(f, {&a, &c, &w}, eps) <= tol);
  }
  SUBCASE("embedding") {
    auto table = random_tensor<double>({6, 3}, rng);
    const std::vector<int> ids{1, 4, 1, 0};
    LossBuilder<double> f = [&](Tape<double>& t) { return probe(embedding(t.param(table), ids), 8); };
    CHECK(check<double>(f, {&table}, eps) <= tol);
  }
  SUBCASE("dropout with a fixed mask seed") {
    LossBuilder<double> f = [&](Tape<double>& t) {
      Rng mask_rng(99);
      return probe(dropout(t.param(a), 0.5, mask_rng), 9);
    };
    CHECK(check<double>(f, {&a}, eps) <= tol);
  }
  SUBCASE("gru_cell") {
    auto x = random_tensor<double>({2, 3}, rng);
    auto h = random_tensor<double>({2, 4}, rng);
    auto wx = random_tensor<double>({3, 12}, rng);
    auto wh = random_tensor<double>({4, 12}, rng);
    auto bx = random_tensor<double>({12}, rng);
    auto bh = random_tensor<double>({12}, rng);
    LossBuilder<double> f = [&](Tape<double>& t) {
      return probe(gru_cell(t.param(x), t.param(h), t.param(wx), t.param(wh), t.param(bx), t.param(bh)),
                   10);
    };
    CHECK(check<double>(f, {&x, &h, &wx, &wh, &bx, &bh}, eps) <= tol);
  }
  SUBCASE("attention with per-row limits") {
    auto q = random_tensor<double>({2, 3}, rng);
    auto keys = random_tensor<double>({4, 2, 3}, rng);
    auto vals = random_tensor<double>({4, 2, 5}, rng);
    auto v = random_tensor<double>({3}, rng);
    const std::vector<std::size_t> limits{2, 4};
    LossBuilder<double> f = [&](Tape<double>& t) {
      return probe(attention(t.param(q), t.param(keys), t.param(vals), t.param(v), limits).context, 11);
    };
    CHECK(check<double>(f, {&q, &keys, &vals, &v}, eps) <= tol);
  }
}

// Central differences in 32-bit are dominated by rounding noise, so the
// standard-precision backward pass is checked against differences taken on a
// 64-bit copy of the same function.
TEST_CASE("standard precision gradients match wide finite differences within 1e-4") {
  Rng rng(31);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 5}, rng);
  auto bias = random_tensor<double>({5}, rng);
  auto af = tensor_cast<float>(a), bf = tensor_cast<float>(b), biasf = tensor_cast<float>(bias);

  Tape<float> tape;
  auto loss = probe(tanh(linear(tape.param(af), tape.param(bf), tape.param(biasf))), 12);
  tape.backward(loss);

  auto wide = [&]() {
    Tape<double> t;
    t.set_grad_enabled(false);
    return probe(tanh(linear(t.frozen(a), t.frozen(b), t.frozen(bias))), 12).value()[0];
  };
  double worst = 0.0;
  for (auto [wide_t, narrow_t] : {std::pair{&a, &af}, {&b, &bf}, {&bias, &biasf}}) {
    for (std::size_t i = 0; i < wide_t->size(); ++i) {
      const double saved = wide_t->data[i];
      wide_t->data[i] = saved + 1e-6;
      const double up = wide();
      wide_t->data[i] = saved - 1e-6;
      const double down = wide();
      wide_t->data[i] = saved;
      const double numeric = (up - down) / 2e-6;
      const double analytic = narrow_t->grad[i];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("attention masks positions past the limit") {
  Rng rng(41);
  Tape<double> tape;
  auto q = tape.constant(random_tensor<double>({1, 3}, rng));
  auto keys = random_tensor<double>({4, 1, 3}, rng);
  auto vals = random_tensor<double>({4, 1, 2}, rng);
  auto v = tape.constant(random_tensor<double>({3}, rng));
  const std::vector<std::size_t> limit{2};
  auto out1 = attention(q, tape.constant(keys), tape.constant(vals), v, limit);
  for (std::size_t i = 2 * 3; i < keys.size(); ++i) keys.data[i] = 1e6;
  for (std::size_t i = 2 * 2; i < vals.size(); ++i) vals.data[i] = -1e6;
  auto out2 = attention(q, tape.constant(keys), tape.constant(vals), v, limit);
  CHECK(out1.context.value().data == out2.context.value().data);
  CHECK(out1.weights[2] == 0.0);
  CHECK(out1.weights[3] == 0.0);
  CHECK(out1.weights[0] + out1.weights[1] == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<std::size_t> bad{0};
  CHECK_THROWS_AS(attention(q, tape.constant(keys), tape.constant(vals), v, bad), ContractError);
}
