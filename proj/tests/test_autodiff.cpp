#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pflow/autodiff.hpp"

using namespace pflow;
using ad::Tape;
using ad::Var;

namespace {

// Central finite difference oracle, h = 1e-5 unless stated otherwise.
double central_diff(const std::function<double(const std::vector<double>&)>& f,
                    std::vector<double> x, std::size_t i, double h = 1e-5) {
  x[i] += h;
  const double fp = f(x);
  x[i] -= 2 * h;
  const double fm = f(x);
  return (fp - fm) / (2 * h);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("record: elementary op values") {
  Tape t;
  Var a = t.leaf(2.0), b = t.leaf(3.0);
  CHECK((a * b).value() == 6.0);
  Var z = t.leaf(0.0);
  CHECK(ad::tanh(z).value() == 0.0);
  CHECK(ad::sigmoid(z).value() == 0.5);
  CHECK(ad::exp(t.leaf(1.0)).value() == doctest::Approx(std::exp(1.0)));
  CHECK(ad::sqrt(t.leaf(4.0)).value() == doctest::Approx(2.0));
  CHECK(ad::pow(t.leaf(2.0), 3.0).value() == doctest::Approx(8.0));
}

TEST_CASE("record: domain errors identify the node") {
  Tape t;
  Var a = t.leaf(1.0), zero = t.leaf(0.0);
  CHECK_THROWS_AS(a / zero, ad::DomainError);
  CHECK_THROWS_AS(ad::sqrt(t.leaf(-1.0)), ad::DomainError);
  CHECK_THROWS_AS(ad::log(t.leaf(0.0)), ad::DomainError);
  CHECK_THROWS_AS(ad::log(t.leaf(-2.0)), ad::DomainError);
  try {
    ad::log(t.leaf(-2.0));
  } catch (const ad::DomainError& e) {
    CHECK(e.node_index >= 0);
  }
}

TEST_CASE("gradient: product rule and tanh'") {
  Tape t;
  Var x = t.leaf(2.0), y = t.leaf(3.0);
  Var f = x * y;
  auto g = t.gradient(f, std::vector<Var>{x, y});
  CHECK(g[0] == 3.0);
  CHECK(g[1] == 2.0);

  Var z = t.leaf(0.0);
  Var th = ad::tanh(z);
  auto gt = t.gradient(th, std::vector<Var>{z});
  CHECK(gt[0] == 1.0);
}

TEST_CASE("gradient: sigma(2x) at x=0 vs finite difference") {
  // oracle: central difference with step 1e-6 on sigma(2x)
  auto f = [](const std::vector<double>& v) { return sigmoid(2.0 * v[0]); };
  const double fd = central_diff(f, {0.0}, 0, 1e-6);

  Tape t;
  Var x = t.leaf(0.0);
  Var s = ad::sigmoid(x * 2.0);
  auto g = t.gradient(s, std::vector<Var>{x});
  CHECK(g[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g[0] == doctest::Approx(fd).epsilon(1e-8));
}

TEST_CASE("gradient: vars from another tape are rejected") {
  Tape t1, t2;
  Var a = t1.leaf(1.0);
  Var b = t2.leaf(2.0);
  CHECK_THROWS_AS(a + b, ad::TapeMismatch);
  Var f = a * 2.0;
  CHECK_THROWS_AS(t1.gradient(f, std::vector<Var>{b}), ad::TapeMismatch);
}

TEST_CASE("gradient_as_vars: second and mixed derivatives") {
  // d/dx x^3 = 3x^2, then d/dx again = 6x = 12 at x=2
  Tape t;
  Var x = t.leaf(2.0);
  Var f = x * x * x;
  auto g1 = t.gradient_as_vars(f, std::vector<Var>{x});
  CHECK(g1[0].value() == doctest::Approx(12.0));
  auto g2 = t.gradient(g1[0], std::vector<Var>{x});
  CHECK(g2[0] == doctest::Approx(12.0));

  // mixed partial of x*y
  Tape t2;
  Var a = t2.leaf(5.0), b = t2.leaf(-3.0);
  Var p = a * b;
  auto ga = t2.gradient_as_vars(p, std::vector<Var>{a});
  auto gab = t2.gradient(ga[0], std::vector<Var>{b});
  CHECK(gab[0] == 1.0);

  // sigma''(0) = 0 by symmetry
  Tape t3;
  Var u = t3.leaf(0.0);
  Var s = ad::sigmoid(u);
  auto gs = t3.gradient_as_vars(s, std::vector<Var>{u});
  auto gss = t3.gradient(gs[0], std::vector<Var>{u});
  CHECK(gss[0] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("hessian of quadratic form equals A + A^T") {
  const int n = 4;
  Eigen::MatrixXd A(n, n);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = uni(rng);

  Tape t;
  std::vector<Var> x;
  for (int i = 0; i < n; ++i) x.push_back(t.leaf(uni(rng)));
  Var f = t.constant(0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) f = f + A(i, j) * x[i] * x[j];

  auto grad_vars = t.gradient_as_vars(f, x);
  Eigen::MatrixXd H(n, n);
  for (int i = 0; i < n; ++i) {
    auto row = t.gradient(grad_vars[i], x);
    for (int j = 0; j < n; ++j) H(i, j) = row[j];
  }
  const Eigen::MatrixXd expected = A + A.transpose();
  CHECK((H - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("detached subexpressions receive zero adjoint") {
  // f = detach(g(x)) * x : df/dx must see only the outer factor
  Tape t;
  Var x = t.leaf(1.5);
  Var g = ad::tanh(x * x);  // would contribute if not detached
  Var f = ad::detach(g) * x;
  auto grad = t.gradient(f, std::vector<Var>{x});
  CHECK(grad[0] == doctest::Approx(g.value()).epsilon(1e-15));

  // same through gradient_as_vars
  auto gv = t.gradient_as_vars(f, std::vector<Var>{x});
  CHECK(gv[0].value() == doctest::Approx(g.value()).epsilon(1e-15));
}

TEST_CASE("unreachable input has zero gradient") {
  Tape t;
  Var x = t.leaf(1.0);
  Var f = x * 3.0;
  Var later = t.leaf(4.0);  // recorded after f, not a dependency
  auto g = t.gradient(f, std::vector<Var>{later});
  CHECK(g[0] == 0.0);
}

TEST_CASE("backward pass visits O(n) nodes") {
  Tape t;
  Var x = t.leaf(0.3);
  Var f = x;
  for (int i = 0; i < 100; ++i) f = ad::tanh(f + 0.01);
  const std::size_t nodes = t.size();
  const std::size_t before = t.backward_visits();
  (void)t.gradient(f, std::vector<Var>{x});
  const std::size_t visited = t.backward_visits() - before;
  CHECK(visited <= nodes);
}

// Randomized composite expressions vs central differences (property test).
namespace {

struct ExprGen {
  Tape& tape;
  std::mt19937_64 rng;
  std::vector<Var> pool;

  explicit ExprGen(Tape& t, std::uint64_t seed, std::span<const Var> leaves)
      : tape(t), rng(seed), pool(leaves.begin(), leaves.end()) {}

  Var pick() {
    std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
    return pool[d(rng)];
  }

  Var positive(Var v) { return 1.0 + v * v; }  // >= 1, keeps log/div/sqrt safe

  Var grow() {
    std::uniform_int_distribution<int> d(0, 9);
    Var a = pick(), b = pick();
    Var r{};
    switch (d(rng)) {
      case 0: r = a + b; break;
      case 1: r = a - b; break;
      case 2: r = a * b; break;
      case 3: r = a / positive(b); break;
      case 4: r = ad::tanh(a); break;
      case 5: r = ad::sigmoid(a); break;
      case 6: r = ad::exp(a * 0.1); break;
      case 7: r = ad::log(positive(a)); break;
      case 8: r = ad::sqrt(positive(a)); break;
      default: r = ad::abs_smooth(a, 1e-6); break;
    }
    pool.push_back(r);
    return r;
  }
};

}  // namespace

TEST_CASE("property: random expressions match central differences") {
  std::mt19937_64 seed_rng(2024);
  for (int rep = 0; rep < 25; ++rep) {
    const std::uint64_t seed = seed_rng();
    const int n_inputs = 3, n_ops = 24;

    std::mt19937_64 init(seed);
    std::uniform_real_distribution<double> uni(-1.2, 1.2);
    std::vector<double> x0(n_inputs);
    for (auto& v : x0) v = uni(init);

    auto eval = [&](const std::vector<double>& xs) {
      Tape t;
      std::vector<Var> leaves;
      for (double v : xs) leaves.push_back(t.leaf(v));
      ExprGen gen(t, seed, leaves);
      Var out{};
      for (int i = 0; i < n_ops; ++i) out = gen.grow();
      return out.value();
    };

    Tape t;
    std::vector<Var> leaves;
    for (double v : x0) leaves.push_back(t.leaf(v));
    ExprGen gen(t, seed, leaves);
    Var out{};
    for (int i = 0; i < n_ops; ++i) out = gen.grow();
    auto grad = t.gradient(out, leaves);

    for (int i = 0; i < n_inputs; ++i) {
      const double fd = central_diff(eval, x0, static_cast<std::size_t>(i));
      CHECK(std::abs(grad[i] - fd) <= 1e-6 * (1.0 + std::abs(grad[i])));
    }
  }
}
