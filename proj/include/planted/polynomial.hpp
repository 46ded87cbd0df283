#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "planted/errors.hpp"

namespace planted {

// Monomial prod_j X_j^{e_j}: sorted (variable, exponent>=1) pairs, strictly
// increasing variable indices.
struct Monomial {
  std::vector<std::pair<int, int>> factors;

  Monomial() = default;
  explicit Monomial(std::vector<std::pair<int, int>> f) : factors(std::move(f)) {
    normalize();
  }
  // Degree-1 monomial over a variable set.
  static Monomial vars(std::vector<int> idx) {
    std::vector<std::pair<int, int>> f;
    f.reserve(idx.size());
    for (int i : idx) f.emplace_back(i, 1);
    return Monomial(std::move(f));
  }

  void normalize() {
    std::sort(factors.begin(), factors.end());
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (factors[i].second < 1)
        throw std::invalid_argument("Monomial: exponents must be >= 1");
      if (factors[i].first < 0)
        throw std::invalid_argument("Monomial: negative variable index");
      if (i + 1 < factors.size() && factors[i].first == factors[i + 1].first)
        throw std::invalid_argument("Monomial: duplicate variable index");
    }
  }

  bool contains(int var) const {
    for (const auto& [v, e] : factors)
      if (v == var) return true;
    return false;
  }
  int exponent(int var) const {
    for (const auto& [v, e] : factors)
      if (v == var) return e;
    return 0;
  }
  int num_vars() const { return static_cast<int>(factors.size()); }
  int total_degree() const {
    int d = 0;
    for (const auto& [v, e] : factors) d += e;
    return d;
  }
  int max_exponent() const {
    int m = 0;
    for (const auto& [v, e] : factors) m = std::max(m, e);
    return m;
  }
  int max_var() const { return factors.empty() ? -1 : factors.back().first; }

  Monomial without(int var) const {
    Monomial m;
    for (const auto& f : factors)
      if (f.first != var) m.factors.push_back(f);
    return m;
  }

  double eval(std::span<const double> x) const {
    double p = 1.0;
    for (const auto& [v, e] : factors) {
      const double xv = x[static_cast<std::size_t>(v)];
      double q = xv;
      for (int i = 1; i < e; ++i) q *= xv;
      p *= q;
    }
    return p;
  }

  auto operator<=>(const Monomial&) const = default;
};

// Sparse multivariate polynomial P(X) = c0 + sum_m c_m * m(X). Zero
// coefficients are never stored; term order is deterministic (map order).
class SparsePolynomial {
 public:
  SparsePolynomial() = default;
  explicit SparsePolynomial(double c0) : c0_(c0) {}

  static SparsePolynomial constant(double c) { return SparsePolynomial(c); }

  // sum_i c * X_i over [0, d)
  static SparsePolynomial linear(int d, double c = 1.0) {
    SparsePolynomial p;
    for (int i = 0; i < d; ++i) p.add_term(Monomial::vars({i}), c);
    return p;
  }

  // sum_i X_i + c_pair * sum_{i<j} X_i X_j
  static SparsePolynomial linear_plus_pairs(int d, double c_lin, double c_pair) {
    SparsePolynomial p = linear(d, c_lin);
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) p.add_term(Monomial::vars({i, j}), c_pair);
    return p;
  }

  // OR polynomial 1 - prod_i (1 - X_i): inclusion-exclusion coefficients.
  static SparsePolynomial disjunction(int d) {
    if (d < 1 || d > 20) throw std::invalid_argument("disjunction: d outside [1,20]");
    SparsePolynomial p;
    std::vector<int> idx;
    // iterate nonempty subsets of [0, d)
    for (unsigned mask = 1; mask < (1u << d); ++mask) {
      idx.clear();
      for (int i = 0; i < d; ++i)
        if (mask & (1u << i)) idx.push_back(i);
      const double sign = (idx.size() % 2 == 1) ? 1.0 : -1.0;
      p.add_term(Monomial::vars(idx), sign);
    }
    return p;
  }

  double constant_term() const { return c0_; }
  void set_constant(double c) { c0_ = c; }
  const std::map<Monomial, double>& terms() const { return terms_; }

  void add_term(const Monomial& m, double coeff) {
    if (coeff == 0.0) return;
    if (m.factors.empty()) {
      c0_ += coeff;
      return;
    }
    auto it = terms_.find(m);
    if (it == terms_.end()) {
      terms_.emplace(m, coeff);
    } else {
      it->second += coeff;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  bool degree_one() const {
    for (const auto& [m, c] : terms_)
      if (m.max_exponent() > 1) return false;
    return true;
  }

  int num_vars_upper_bound() const {
    int n = 0;
    for (const auto& [m, c] : terms_) n = std::max(n, m.max_var() + 1);
    return n;
  }

  int max_set_size() const {
    int s = 0;
    for (const auto& [m, c] : terms_) s = std::max(s, m.num_vars());
    return s;
  }

  int max_total_degree() const {
    int s = 0;
    for (const auto& [m, c] : terms_) s = std::max(s, m.total_degree());
    return s;
  }

  double coeff_abs_sum() const {
    double s = 0.0;
    for (const auto& [m, c] : terms_) s += std::abs(c);
    return s;
  }

  // Coefficient of the degree-1 monomial X_i (0 if absent).
  double linear_coeff(int var) const {
    auto it = terms_.find(Monomial::vars({var}));
    return it == terms_.end() ? 0.0 : it->second;
  }

  double eval(std::span<const double> x) const {
    double s = c0_;
    for (const auto& [m, c] : terms_) s += c * m.eval(x);
    return s;
  }

  // Linear part c0 + sum_i c_i X_i.
  double eval_linear_part(std::span<const double> x) const {
    double s = c0_;
    for (const auto& [m, c] : terms_)
      if (m.num_vars() == 1 && m.factors[0].second == 1)
        s += c * x[static_cast<std::size_t>(m.factors[0].first)];
    return s;
  }

  // Univariate part c0 + sum_i q_i(X_i), where q_i keeps all terms involving
  // only variable i (any exponent).
  double eval_univariate_part(std::span<const double> x) const {
    double s = c0_;
    for (const auto& [m, c] : terms_)
      if (m.num_vars() == 1) s += c * m.eval(x);
    return s;
  }

  SparsePolynomial scaled(double a) const {
    SparsePolynomial p(c0_ * a);
    for (const auto& [m, c] : terms_) p.add_term(m, c * a);
    return p;
  }

  bool operator==(const SparsePolynomial& o) const {
    return c0_ == o.c0_ && terms_ == o.terms_;
  }

 private:
  double c0_ = 0.0;
  std::map<Monomial, double> terms_;
};

// P = X_i * Q_i + R_i for degree-1 P; the symbolic partial derivative of P
// with respect to X_i is Q_i.
struct PartialSplit {
  SparsePolynomial q;  // dP/dX_i
  SparsePolynomial r;  // remainder, free of X_i
};

inline PartialSplit partial_split(const SparsePolynomial& p, int var) {
  if (!p.degree_one())
    throw unsupported_mode("partial_split: polynomial has degree > 1 in some variable");
  PartialSplit out;
  out.r.set_constant(p.constant_term());
  for (const auto& [m, c] : p.terms()) {
    if (m.contains(var))
      out.q.add_term(m.without(var), c);
    else
      out.r.add_term(m, c);
  }
  return out;
}

inline SparsePolynomial partial_derivative(const SparsePolynomial& p, int var) {
  return partial_split(p, var).q;
}

// Full expansion of P(mu (X_1 + 1), ..., mu (X_d + 1)) for degree-1 P.
// Each term c_S mu^{|S|} prod_{j in S}(X_j + 1) contributes c_S mu^{|S|} to
// every subset monomial of S.
inline SparsePolynomial substitute_shifted(const SparsePolynomial& p, double mu) {
  if (!p.degree_one())
    throw unsupported_mode("substitute_shifted: polynomial has degree > 1 in some variable");
  SparsePolynomial out(p.constant_term());
  std::vector<int> idx;
  for (const auto& [m, c] : p.terms()) {
    idx.clear();
    for (const auto& [v, e] : m.factors) idx.push_back(v);
    const int k = static_cast<int>(idx.size());
    const double w = c * std::pow(mu, k);
    std::vector<int> sub;
    for (unsigned mask = 0; mask < (1u << k); ++mask) {
      sub.clear();
      for (int i = 0; i < k; ++i)
        if (mask & (1u << i)) sub.push_back(idx[static_cast<std::size_t>(i)]);
      out.add_term(Monomial::vars(sub), w);
    }
  }
  return out;
}

}  // namespace planted
