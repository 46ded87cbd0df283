#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "planted/activation.hpp"
#include "planted/errors.hpp"
#include "planted/stats.hpp"

namespace planted {

// Normalized probabilists' Hermite polynomials h_k = He_k / sqrt(k!),
// orthonormal under the standard Gaussian. Degrees are capped so the
// three-term recurrence stays exact at double precision.
inline constexpr int kMaxHermiteDegree = 16;

inline void check_hermite_index(int k) {
  if (k < 0 || k > kMaxHermiteDegree)
    throw std::domain_error("hermite degree out of range [0," +
                            std::to_string(kMaxHermiteDegree) + "]: " + std::to_string(k));
}

inline double h_eval(int k, double x) {
  check_hermite_index(k);
  // h_{j+1}(x) = (x h_j(x) - sqrt(j) h_{j-1}(x)) / sqrt(j+1)
  double prev = 1.0;
  if (k == 0) return prev;
  double cur = x;
  for (int j = 1; j < k; ++j) {
    const double next = (x * cur - std::sqrt(static_cast<double>(j)) * prev) /
                        std::sqrt(static_cast<double>(j + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

// Evaluates h_0..h_k at once (shared recurrence).
inline void h_eval_all(int k, double x, double* out) {
  check_hermite_index(k);
  out[0] = 1.0;
  if (k == 0) return;
  out[1] = x;
  for (int j = 1; j < k; ++j)
    out[j + 1] = (x * out[j] - std::sqrt(static_cast<double>(j)) * out[j - 1]) /
                 std::sqrt(static_cast<double>(j + 1));
}

// Weighted Hermite polynomial H_l^sigma(a) = sigma^l h_l(a / sigma), the
// natural basis for projections of N(0, sigma^2) marginals.
inline double weighted_h_eval(int l, double sigma, double a) {
  check_hermite_index(l);
  if (!(sigma > 0)) throw std::domain_error("weighted_h_eval: sigma must be positive");
  return std::pow(sigma, l) * h_eval(l, a / sigma);
}

// ---------------------------------------------------------------------------
// Activation Hermite coefficients via adaptive quadrature
// ---------------------------------------------------------------------------

namespace detail {

// 16-point Gauss-Legendre nodes/weights on [-1, 1] (positive half; mirror).
inline constexpr double kGl16Nodes[8] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
inline constexpr double kGl16Weights[8] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

// Integral of fn(g) * phi(g) over [a, b] with `panels` composite GL-16 panels.
template <typename Fn>
double gauss_weighted_integral(Fn&& fn, double a, double b, int panels) {
  const double w = (b - a) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * w;
    const double half = 0.5 * w;
    double acc = 0.0;
    for (int i = 0; i < 8; ++i) {
      const double dx = half * kGl16Nodes[i];
      const double g1 = mid + dx, g2 = mid - dx;
      acc += kGl16Weights[i] *
             (fn(g1) * std::exp(-0.5 * g1 * g1) + fn(g2) * std::exp(-0.5 * g2 * g2));
    }
    total += acc * half;
  }
  return total * kInvSqrt2Pi;
}

}  // namespace detail

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  int panels = 0;
};

// E[fn(g)] for g ~ N(0,1), splitting at the given breakpoints and doubling the
// panel count per segment until two refinements agree within tol.
template <typename Fn>
QuadratureResult gaussian_expectation(Fn&& fn, std::vector<double> breakpoints,
                                      double lo, double hi, double tol = 1e-10,
                                      int max_doublings = 10) {
  std::vector<double> cuts = {lo, hi};
  for (double b : breakpoints)
    if (b > lo && b < hi) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());

  auto total_for = [&](int panels) {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
      s += detail::gauss_weighted_integral(fn, cuts[i], cuts[i + 1], panels);
    return s;
  };

  int panels = 16;
  double prev = total_for(panels);
  for (int it = 0; it < max_doublings; ++it) {
    panels *= 2;
    const double cur = total_for(panels);
    const double delta = std::abs(cur - prev);
    if (delta <= tol * std::max(1.0, std::abs(cur)))
      return {cur, std::max(delta, 1e-15 * (1.0 + std::abs(cur))), panels};
    prev = cur;
  }
  throw numeric_failure("gaussian_expectation: quadrature did not converge", prev);
}

// k-th Hermite coefficient of the activation: u_hat_k = E[u(g) h_k(g)].
inline QuadratureResult activation_coeff_quad(const ActivationSpec& u, int k,
                                              double tol = 1e-10) {
  check_hermite_index(k);
  const double shift = u.growth_shift();
  double lo = -14.0 - std::abs(shift);
  double hi = 14.0 + shift;
  for (double b : u.breakpoints()) {
    lo = std::min(lo, b - 1.0);
    hi = std::max(hi, b + 14.0);
  }
  if (u.zero_below_threshold()) lo = u.threshold;  // integrand vanishes below t
  return gaussian_expectation([&](double g) { return u(g) * h_eval(k, g); },
                              u.breakpoints(), lo, hi, tol);
}

inline double activation_coeff(const ActivationSpec& u, int k) {
  return activation_coeff_quad(u, k).value;
}

// Table of u_hat_0..u_hat_k with the recorded quadrature error estimate.
struct HermiteCoeffTable {
  std::string activation_id;
  double threshold = 0.0;
  std::vector<double> coeff;
  double quad_error = 0.0;

  double u2() const { return coeff.at(2); }
  double u4() const { return coeff.at(4); }
};

inline HermiteCoeffTable activation_coeff_table(const ActivationSpec& u, int kmax,
                                                double tol = 1e-10) {
  check_hermite_index(kmax);
  HermiteCoeffTable t;
  t.activation_id = act_kind_name(u.kind);
  t.threshold = u.threshold;
  t.coeff.resize(static_cast<std::size_t>(kmax) + 1);
  for (int k = 0; k <= kmax; ++k) {
    const auto q = activation_coeff_quad(u, k, tol);
    t.coeff[static_cast<std::size_t>(k)] = q.value;
    t.quad_error = std::max(t.quad_error, q.error_estimate);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Cross coefficient alpha(n, m, gamma) = E[h_m(x) h_n(gamma x)]
// ---------------------------------------------------------------------------

// Derivation: He_n(gamma x) = sum_k C(n,2k) (2k-1)!! gamma^(n-2k)
// (gamma^2-1)^k He_{n-2k}(x); normalizing both sides by sqrt(n!), sqrt(m!)
// gives the closed form below. It is zero unless k = (n-m)/2 is a
// nonnegative integer.
inline double cross_coeff(int n, int m, double gamma) {
  check_hermite_index(n);
  check_hermite_index(m);
  if (n < m || (n - m) % 2 != 0) return 0.0;
  const int k = (n - m) / 2;
  // sqrt(n!/m!) gamma^m (gamma^2-1)^k / (2^k k!)
  double ratio = 1.0;
  for (int i = m + 1; i <= n; ++i) ratio *= i;
  double denom = 1.0;
  for (int i = 1; i <= k; ++i) denom *= 2 * i;
  return std::sqrt(ratio) * std::pow(gamma, m) * std::pow(gamma * gamma - 1.0, k) / denom;
}

}  // namespace planted
