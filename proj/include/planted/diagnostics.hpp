#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "planted/network.hpp"
#include "planted/oracle.hpp"
#include "planted/stats.hpp"

namespace planted {

// Bounds for the assumption validator; defaults give the desk-scale regime.
struct AssumptionBounds {
  double c_lo = 0.1;        // linear coefficients in [c_lo, c_hi]
  double c_hi = 10.0;
  double c_max = 10.0;      // |c_S| bound for product terms
  double kappa_max = 10.0;
  double eta_slack = 0.2;   // threshold check passes when log_d(1/rho) >= eta - slack
};

struct AssumptionCheck {
  bool ok = false;
  double measured = 0.0;
  std::string note;
};

struct AssumptionReport {
  AssumptionCheck linear_coeffs;   // every unit has c_i within [c_lo, c_hi]
  AssumptionCheck product_coeffs;  // |c_S| <= c_max
  AssumptionCheck condition_number;
  AssumptionCheck threshold;       // log_d(1/rho(t, ||W||)) near eta
  bool all_ok() const {
    return linear_coeffs.ok && product_coeffs.ok && condition_number.ok && threshold.ok;
  }
};

inline AssumptionReport validate_assumptions(const PlantedNetwork& net, double eta,
                                             const AssumptionBounds& b = {}) {
  AssumptionReport r;

  double cmin = std::numeric_limits<double>::infinity();
  double cmax = 0.0;
  for (int i = 0; i < net.units(); ++i) {
    const double c = net.polynomial().linear_coeff(i);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, std::abs(c));
  }
  r.linear_coeffs.measured = cmin;
  r.linear_coeffs.ok = cmin >= b.c_lo && cmax <= b.c_hi;
  r.linear_coeffs.note = "min linear coefficient";

  double smax = 0.0;
  for (const auto& [m, c] : net.polynomial().terms())
    if (m.num_vars() > 1) smax = std::max(smax, std::abs(c));
  r.product_coeffs.measured = smax;
  r.product_coeffs.ok = smax <= b.c_max;
  r.product_coeffs.note = "max |c_S|, |S| > 1";

  r.condition_number.measured = net.kappa();
  r.condition_number.ok = net.kappa() <= b.kappa_max;
  r.condition_number.note = "kappa(W*)";

  // One-sided: the activation tail must be at least as rare as d^-(eta-slack).
  // (A larger threshold only helps; scale constants > sqrt(2) overshoot eta.)
  const double rho = tail_rho(net.activation(), net.activation().threshold,
                              net.spectral_norm());
  const double log_d = std::log(static_cast<double>(net.units()));
  const double measured_eta = rho > 0 ? std::log(1.0 / rho) / log_d : 1e9;
  r.threshold.measured = measured_eta;
  r.threshold.ok = measured_eta >= eta - b.eta_slack;
  r.threshold.note = "log_d(1/rho(t, ||W*||))";
  return r;
}

struct GapDiagnostic {
  McEstimate mc;    // E[|f - f_lin|]  (f_uni reference when P has exponents > 1)
  double bound;     // C d^3 rho(t,1) rho(t, ||W*||)
  bool used_univariate_reference;
};

// Monte Carlo check that the product terms of P contribute little mass.
inline GapDiagnostic gap_diagnostic(const PlantedNetwork& net, std::int64_t count,
                                    RngSeed seed, double bound_c = 10.0,
                                    int threads = 0) {
  if (count < 10'000)
    throw std::invalid_argument("gap_diagnostic: count must be >= 1e4");
  GapDiagnostic g{};
  g.used_univariate_reference = !net.polynomial().degree_one();
  const int n = net.input_dim();
  g.mc = mc_run(count, seed, threads, [&](GaussianRng& rng) {
    thread_local std::vector<double> x;
    x.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) x[j] = rng.normal();
    const double f = net.evaluate(x.data(), n);
    const double ref = g.used_univariate_reference ? net.f_uni(x.data(), n)
                                                   : net.f_lin(x.data(), n);
    return std::abs(f - ref);
  });
  const double t = net.activation().threshold;
  const double d3 = std::pow(static_cast<double>(net.units()), 3);
  g.bound = bound_c * d3 * tail_rho(net.activation(), t, 1.0) *
            tail_rho(net.activation(), t, net.spectral_norm());
  return g;
}

}  // namespace planted
