#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "oracles.hpp"
#include "planted/polynomial.hpp"
#include "planted/rng.hpp"

using namespace planted;

namespace {

oracle::SetPoly to_setpoly(const SparsePolynomial& p) {
  oracle::SetPoly s;
  if (p.constant_term() != 0.0) s[{}] = p.constant_term();
  for (const auto& [m, c] : p.terms()) {
    std::set<int> vars;
    for (const auto& [v, e] : m.factors) vars.insert(v);
    s[vars] = c;
  }
  return s;
}

}  // namespace

TEST_CASE("monomial invariants") {
  Monomial m({{2, 1}, {0, 3}});
  CHECK(m.factors.front().first == 0);  // sorted
  CHECK(m.exponent(0) == 3);
  CHECK(m.max_exponent() == 3);
  CHECK_THROWS_AS(Monomial({{0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(Monomial({{1, 1}, {1, 2}}), std::invalid_argument);
}

TEST_CASE("partial derivative of degree-1 polynomials") {
  // P = X1 X2 + X1  ->  dP/dX1 = X2 + 1
  SparsePolynomial p;
  p.add_term(Monomial::vars({0, 1}), 1.0);
  p.add_term(Monomial::vars({0}), 1.0);
  auto q = partial_derivative(p, 0);
  CHECK(q.constant_term() == 1.0);
  CHECK(q.linear_coeff(1) == 1.0);
  CHECK(q.terms().size() == 1);

  // P = X2, dP/dX1 = 0
  SparsePolynomial p2;
  p2.add_term(Monomial::vars({1}), 1.0);
  auto q2 = partial_derivative(p2, 0);
  CHECK(q2.constant_term() == 0.0);
  CHECK(q2.terms().empty());

  // P = sum X_i + 0.5 sum_{i<j} X_i X_j on d=4: dP/dX1 = 1 + 0.5(X2+X3+X4)
  auto p3 = SparsePolynomial::linear_plus_pairs(4, 1.0, 0.5);
  auto split = partial_split(p3, 0);
  CHECK(split.q.constant_term() == 1.0);
  for (int j : {1, 2, 3}) CHECK(split.q.linear_coeff(j) == 0.5);
  // remainder holds everything not involving X1
  CHECK(split.r.linear_coeff(0) == 0.0);
  for (int j : {1, 2, 3}) CHECK(split.r.linear_coeff(j) == 1.0);

  SparsePolynomial high;
  high.add_term(Monomial({{0, 2}}), 1.0);
  CHECK_THROWS_AS(partial_derivative(high, 0), unsupported_mode);
}

TEST_CASE("substitute_shifted expansions") {
  // P = X1 X2 -> mu^2 (X1 X2 + X1 + X2 + 1)
  SparsePolynomial p;
  p.add_term(Monomial::vars({0, 1}), 1.0);
  const double mu = 0.3;
  auto s = substitute_shifted(p, mu);
  CHECK(s.constant_term() == Catch::Approx(mu * mu));
  CHECK(s.linear_coeff(0) == Catch::Approx(mu * mu));
  CHECK(s.linear_coeff(1) == Catch::Approx(mu * mu));

  // P = X1, mu = 0.1 -> 0.1 X1 + 0.1
  SparsePolynomial p1;
  p1.add_term(Monomial::vars({0}), 1.0);
  auto s1 = substitute_shifted(p1, 0.1);
  CHECK(s1.constant_term() == Catch::Approx(0.1));
  CHECK(s1.linear_coeff(0) == Catch::Approx(0.1));
}

TEST_CASE("substitute_shifted matches the independent expansion oracle") {
  // random degree-1 polynomial on d = 3 variables
  Xoshiro256pp gen(RngSeed{12345});
  for (int trial = 0; trial < 10; ++trial) {
    SparsePolynomial p(gen.uniform01() - 0.5);
    for (unsigned mask = 1; mask < 8; ++mask) {
      if (gen.uniform01() < 0.3) continue;
      std::vector<int> idx;
      for (int i = 0; i < 3; ++i)
        if (mask & (1u << i)) idx.push_back(i);
      p.add_term(Monomial::vars(idx), 2.0 * gen.uniform01() - 1.0);
    }
    const double mu = 0.5 * gen.uniform01() + 0.05;
    auto got = to_setpoly(substitute_shifted(p, mu));
    auto want = oracle::expand_shifted(to_setpoly(p), mu);
    REQUIRE(got.size() == want.size());
    for (const auto& [m, c] : want) {
      REQUIRE(got.count(m) == 1);
      CHECK(got[m] == Catch::Approx(c).margin(1e-14));
    }
  }
}

TEST_CASE("substitute_shifted at mu=1 evaluated at X=0 gives the coefficient sum") {
  auto p = SparsePolynomial::linear_plus_pairs(4, 1.0, 0.5);
  p.set_constant(0.25);
  auto s = substitute_shifted(p, 1.0);
  double coeff_sum = p.constant_term();
  for (const auto& [m, c] : p.terms()) coeff_sum += c;
  std::vector<double> zeros(4, 0.0);
  CHECK(s.eval(zeros) == Catch::Approx(coeff_sum).margin(1e-14));
}

TEST_CASE("disjunction polynomial equals 1 - prod(1 - X_i) pointwise") {
  auto p = SparsePolynomial::disjunction(4);
  Xoshiro256pp gen(RngSeed{5});
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(4);
    for (auto& v : x) v = gen.uniform01() < 0.5 ? 0.0 : 1.0;
    double prod = 1.0;
    for (double v : x) prod *= 1.0 - v;
    CHECK(p.eval(x) == Catch::Approx(1.0 - prod).margin(1e-14));
  }
}
