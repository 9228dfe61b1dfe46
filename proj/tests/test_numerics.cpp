#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mccot/autograd.hpp"
#include "mccot/error.hpp"
#include "mccot/gradcheck.hpp"
#include "test_helpers.hpp"

using namespace mccot;
using mccot::testing::random_param;
using mccot::testing::random_tensor;

TEST_CASE("tensor rejects data that does not match its shape") {
  CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t(Shape{2, 3});
  CHECK(t.size() == 6);
  CHECK(t.ensure_grad().size() == 6);
}

TEST_CASE("matmul identity and projector") {
  const Var eye = Var::constant(Tensor({2, 2}, {1, 0, 0, 1}));
  const Var m = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(matmul(eye, m).value() == m.value());

  const Var proj = Var::constant(Tensor({2, 2}, {1, 0, 0, 0}));
  const Var b = Var::constant(Tensor({2, 2}, {5, 6, 7, 8}));
  CHECK(matmul(proj, b).value() == Tensor({2, 2}, {5, 6, 0, 0}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Var a = Var::constant(Tensor(Shape{2, 3}));
  const Var b = Var::constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("x [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  RngStream rng(7, 1);
  std::vector<Var> params = {random_param({3, 4}, rng), random_param({4, 2}, rng)};
  const Var weights = Var::constant(random_tensor({3, 2}, rng));
  auto f = [&] { return sum(mul(matmul(params[0], params[1]), weights)); };
  CHECK(finite_difference_check(f, params, 1e-6).max_rel_error <= 1e-6);
}

TEST_CASE("softmax cross-entropy reference values") {
  CHECK(softmax_cross_entropy(Var::constant(Tensor({2}, {0, 0})), 0).item() ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-12));
  CHECK(softmax_cross_entropy(Var::constant(Tensor({3}, {10, 10, 10})), 2).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // Unstabilised direct formula.
  const double brute = -4.0 + std::log(std::exp(1.0) + std::exp(4.0) + std::exp(0.0));
  CHECK(std::abs(softmax_cross_entropy(Var::constant(Tensor({3}, {1, 4, 0})), 1).item() - brute) <= 1e-12);

  CHECK_THROWS_AS(softmax_cross_entropy(Var::constant(Tensor({3}, {1, 4, 0})), 3), IndexError);
  CHECK_THROWS_AS(softmax_cross_entropy(Var::constant(Tensor({3}, {1, 4, 0})), -1), IndexError);
}

TEST_CASE("softmax cross-entropy is shift invariant") {
  RngStream rng(11, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t V = 2 + rng.uniform_index(15);
    Tensor logits = random_tensor({V}, rng, 5.0);
    const int target = static_cast<int>(rng.uniform_index(V));
    const double c = 20.0 * (2.0 * rng.uniform() - 1.0);
    Tensor shifted = logits;
    for (double& x : shifted.data()) x += c;
    CHECK(std::abs(cross_entropy(logits.data(), target) - cross_entropy(shifted.data(), target)) <= 1e-12);
  }
}

TEST_CASE("cross-entropy is convex in the logits") {
  RngStream rng(13, 3);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t V = 2 + rng.uniform_index(15);
    const Tensor a = random_tensor({V}, rng, 4.0), b = random_tensor({V}, rng, 4.0);
    const int y = static_cast<int>(rng.uniform_index(V));
    const double t = rng.uniform();
    Tensor mix({V});
    for (std::size_t i = 0; i < V; ++i) mix[i] = t * a[i] + (1 - t) * b[i];
    const double lhs = cross_entropy(mix.data(), y);
    const double rhs = t * cross_entropy(a.data(), y) + (1 - t) * cross_entropy(b.data(), y);
    if (lhs > rhs + 1e-12) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("dropout degenerate cases are identities") {
  RngStream rng(3, 4);
  const Var x = Var::constant(random_tensor({4, 5}, rng));
  RngStream r1(1, 1);
  CHECK(dropout(x, 0.0, r1, true).value() == x.value());
  CHECK(dropout(x, 0.5, r1, false).value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, r1, true), ConfigError);
  CHECK_THROWS_AS(dropout(x, -0.1, r1, true), ConfigError);
}

TEST_CASE("dropout keeps about 1-p of the elements and preserves the mean") {
  Tensor ones(Shape{100000});
  for (double& v : ones.data()) v = 1.0;
  RngStream rng(5, 9);
  const Var y = dropout(Var::constant(ones), 0.5, rng, true);
  std::size_t survivors = 0;
  double total = 0.0;
  for (double v : y.value().data()) {
    survivors += v != 0.0;
    total += v;
  }
  CHECK(std::abs(static_cast<double>(survivors) / 1e5 - 0.5) <= 0.01);
  CHECK(std::abs(total / 1e5 - 1.0) <= 0.02);
}

TEST_CASE("dropout masks are reproducible per stream") {
  const Var x = Var::constant(Tensor(Shape{64}, std::vector<double>(64, 1.0)));
  RngStream a(42, 7), b(42, 7), c(42, 8);
  const Tensor ya = dropout(x, 0.3, a, true).value();
  CHECK(ya == dropout(x, 0.3, b, true).value());
  CHECK_FALSE(ya == dropout(x, 0.3, c, true).value());
}

TEST_CASE("backward basics") {
  const Var x = Var::parameter(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  const Var s = Var::parameter(Tensor::scalar(3.0));
  backward(mul(s, s));
  CHECK(s.grad()[0] == 6.0);
  // Gradients accumulate across calls until cleared.
  backward(mul(s, s));
  CHECK(s.grad()[0] == 12.0);

  CHECK_THROWS_AS(backward(x), DimensionError);
}

TEST_CASE("shared subexpressions accumulate all contributions") {
  const Var x = Var::parameter(Tensor({3}, {1, -2, 0.5}));
  const Var y = add(x, x);
  backward(sum(mul(y, x)));  // d/dx 2x^2 = 4x
  CHECK(x.grad()[0] == 4.0);
  CHECK(x.grad()[1] == -8.0);
  CHECK(x.grad()[2] == 2.0);
}

TEST_CASE("no-grad mode builds no graph") {
  const Var x = Var::parameter(Tensor({2}, {1, 2}));
  NoGradGuard guard;
  const Var y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("finite-difference check on a quadratic") {
  RngStream rng(1, 1);
  std::vector<Var> params = {random_param({5}, rng)};
  auto f = [&] { return scale(sum(mul(params[0], params[0])), 0.5); };
  CHECK(finite_difference_check(f, params, 1e-5).max_rel_error <= 1e-8);
}

TEST_CASE("finite-difference check on a softmax cross-entropy layer") {
  RngStream rng(2, 1);
  std::vector<Var> params = {random_param({4, 6}, rng), random_param({6}, rng)};
  const Var x = Var::constant(random_tensor({3, 4}, rng));
  const std::vector<int> targets = {1, 5, 0};
  auto f = [&] { return sequence_cross_entropy(add_row(matmul(x, params[0]), params[1]), targets); };
  CHECK(finite_difference_check(f, params, 1e-6).max_rel_error <= 1e-6);
}

TEST_CASE("finite-difference check reports non-finite functions") {
  std::vector<Var> params = {Var::parameter(Tensor({1}, {1.0}))};
  auto f = [&] { return scale(sum(params[0]), std::numeric_limits<double>::infinity()); };
  CHECK_THROWS_AS(finite_difference_check(f, params), NumericError);
}

TEST_CASE("primitive gradients match central differences") {
  RngStream rng(21, 5);
  const Var out_w = Var::constant(random_tensor({4, 8}, rng));

  SUBCASE("layer norm") {
    std::vector<Var> p = {random_param({4, 8}, rng), random_param({8}, rng), random_param({8}, rng)};
    auto f = [&] { return sum(mul(layer_norm(p[0], p[1], p[2]), out_w)); };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
  SUBCASE("gelu") {
    std::vector<Var> p = {random_param({4, 8}, rng, 2.0)};
    auto f = [&] { return sum(mul(gelu(p[0]), out_w)); };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
  SUBCASE("embedding with repeated ids") {
    std::vector<Var> p = {random_param({5, 8}, rng)};
    const std::vector<int> ids = {3, 0, 3, 1};
    auto f = [&] { return sum(mul(embedding(p[0], ids), out_w)); };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
  SUBCASE("causal self-attention") {
    std::vector<Var> p = {random_param({4, 8}, rng), random_param({4, 8}, rng), random_param({4, 8}, rng)};
    auto f = [&] { return sum(mul(attention(p[0], p[1], p[2], 2, true), out_w)); };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
  SUBCASE("cross-attention") {
    std::vector<Var> p = {random_param({4, 8}, rng), random_param({6, 8}, rng), random_param({6, 8}, rng)};
    auto f = [&] { return sum(mul(attention(p[0], p[1], p[2], 4, false), out_w)); };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
  SUBCASE("dropout with a replayed stream") {
    std::vector<Var> p = {random_param({4, 8}, rng)};
    auto f = [&] {
      RngStream r(99, 3);
      return sum(mul(mul(dropout(p[0], 0.4, r, true), p[0]), out_w));
    };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
  SUBCASE("add, sub, add_row, scale") {
    std::vector<Var> p = {random_param({4, 8}, rng), random_param({4, 8}, rng), random_param({8}, rng)};
    auto f = [&] { return sum(mul(scale(add_row(sub(mul(p[0], p[1]), p[1]), p[2]), 1.5), out_w)); };
    CHECK(finite_difference_check(f, p, 1e-6).max_rel_error <= 1e-6);
  }
}

TEST_CASE("causal attention ignores future keys") {
  RngStream rng(8, 8);
  Tensor q = random_tensor({5, 8}, rng), k = random_tensor({5, 8}, rng), v = random_tensor({5, 8}, rng);
  const Tensor base = attention(Var(q), Var(k), Var(v), 2, true).value();
  k[4 * 8 + 1] += 3.0;
  v[4 * 8 + 2] -= 3.0;
  const Tensor moved = attention(Var(q), Var(k), Var(v), 2, true).value();
  for (std::size_t i = 0; i < 4 * 8; ++i) CHECK(base[i] == moved[i]);
}

TEST_CASE("rng streams are deterministic and distinct") {
  RngStream a(123, 5), b(123, 5), c(123, 6), d(124, 5);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 16; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs_c = differs_c || x != c.next_u64();
    differs_d = differs_d || x != d.next_u64();
  }
  CHECK(differs_c);
  CHECK(differs_d);
}

TEST_CASE("rng matches the Philox4x32-10 known-answer vector") {
  RngStream zero(0, 0);
  CHECK(zero.next_u32() == 0x6627e8d5u);
  CHECK(zero.next_u32() == 0xe169c58du);
  CHECK(zero.next_u32() == 0xbc57ac4cu);
  CHECK(zero.next_u32() == 0x9b00dbd8u);
  CHECK(zero.counter() == 1);
}

TEST_CASE("rng uniform moments") {
  RngStream rng(77, 0);
  double mean = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    mean += z;
    sq += z * z;
  }
  CHECK(std::abs(mean / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
