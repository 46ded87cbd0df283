#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "planted/errors.hpp"
#include "planted/hermite.hpp"
#include "planted/oracle.hpp"
#include "planted/parallel.hpp"
#include "planted/polynomial.hpp"
#include "planted/stats.hpp"

namespace planted::structural {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Correlation graph over input coordinates
// ---------------------------------------------------------------------------

struct CorrelationValues {
  int n = 0;
  MatrixXd alpha;       // symmetric, zero diagonal: E[y x_i x_j]
  MatrixXd alpha_se;    // standard errors
};

inline CorrelationValues pairwise_correlations(const Dataset& data, int threads = 0) {
  const int n = data.dim();
  // Centering the labels leaves E[(y - c) x_i x_j] = E[y x_i x_j] for i != j
  // (the product has zero mean) and removes the dominant variance term
  // E[y]^2 E[x_i^2 x_j^2] from the estimator.
  const double y_center = data.y.mean();
  struct Acc {
    MatrixXd sum, sumsq;
    std::int64_t count = 0;
    void merge(const Acc& o) {
      if (sum.size() == 0) {
        *this = o;
        return;
      }
      if (o.sum.size() == 0) return;
      sum += o.sum;
      sumsq += o.sumsq;
      count += o.count;
    }
  };
  auto acc = reduce_blocks<Acc>(
      data.count(), threads, [&](Acc& a, std::int64_t, std::int64_t lo, std::int64_t hi) {
        a.sum = MatrixXd::Zero(n, n);
        a.sumsq = MatrixXd::Zero(n, n);
        for (std::int64_t r = lo; r < hi; ++r) {
          const double y = data.y(r) - y_center;
          const double* x = data.X.data() + r * n;
          for (int i = 0; i < n; ++i) {
            const double yxi = y * x[i];
            for (int j = i + 1; j < n; ++j) {
              const double v = yxi * x[j];
              a.sum(i, j) += v;
              a.sumsq(i, j) += v * v;
            }
          }
          a.count += 1;
        }
      });
  CorrelationValues out;
  out.n = n;
  out.alpha = MatrixXd::Zero(n, n);
  out.alpha_se = MatrixXd::Zero(n, n);
  const double N = static_cast<double>(acc.count);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double mean = acc.sum(i, j) / N;
      const double var = std::max(0.0, (acc.sumsq(i, j) - N * mean * mean) / (N - 1));
      out.alpha(i, j) = out.alpha(j, i) = mean;
      out.alpha_se(i, j) = out.alpha_se(j, i) = std::sqrt(var / N);
    }
  return out;
}

struct CorrelationGraph {
  int n = 0;
  MatrixXd alpha;
  MatrixXd alpha_se;
  double threshold = 0.0;
  std::vector<std::pair<int, int>> edges;
  // empirical margin of the chosen threshold: largest value below it and
  // smallest value at or above it
  double below_max = 0.0;
  double above_min = 0.0;
};

inline CorrelationGraph build_graph(const CorrelationValues& values, double rho_g) {
  if (!(rho_g > 0)) throw std::invalid_argument("build_graph: threshold must be positive");
  CorrelationGraph g;
  g.n = values.n;
  g.alpha = values.alpha;
  g.alpha_se = values.alpha_se;
  g.threshold = rho_g;
  g.below_max = -std::numeric_limits<double>::infinity();
  g.above_min = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.n; ++i)
    for (int j = i + 1; j < g.n; ++j) {
      const double a = values.alpha(i, j);
      if (a >= rho_g) {
        g.edges.emplace_back(i, j);
        g.above_min = std::min(g.above_min, a);
      } else {
        g.below_max = std::max(g.below_max, a);
      }
    }
  return g;
}

using SupportFamily = std::vector<std::vector<int>>;

// Connected components of size >= 2, each verified to be complete; a
// component that is not a clique is a structure violation, surfaced rather
// than repaired. Isolated nodes are coordinates outside every support.
inline SupportFamily extract_cliques(const CorrelationGraph& g) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(g.n));
  for (auto [i, j] : g.edges) {
    adj[static_cast<std::size_t>(i)].push_back(j);
    adj[static_cast<std::size_t>(j)].push_back(i);
  }
  std::vector<int> comp(static_cast<std::size_t>(g.n), -1);
  SupportFamily out;
  for (int start = 0; start < g.n; ++start) {
    if (comp[static_cast<std::size_t>(start)] >= 0 ||
        adj[static_cast<std::size_t>(start)].empty())
      continue;
    std::vector<int> stack = {start}, members;
    comp[static_cast<std::size_t>(start)] = start;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      members.push_back(v);
      for (int u : adj[static_cast<std::size_t>(v)])
        if (comp[static_cast<std::size_t>(u)] < 0) {
          comp[static_cast<std::size_t>(u)] = start;
          stack.push_back(u);
        }
    }
    std::sort(members.begin(), members.end());
    // completeness check
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const int i = members[a], j = members[b];
        const bool has = std::find(adj[static_cast<std::size_t>(i)].begin(),
                                   adj[static_cast<std::size_t>(i)].end(),
                                   j) != adj[static_cast<std::size_t>(i)].end();
        if (!has)
          throw structure_violation(
              "extract_cliques: component containing node " + std::to_string(start) +
                  " is not complete (missing edge " + std::to_string(i) + "-" +
                  std::to_string(j) + ")",
              members);
      }
    out.push_back(std::move(members));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Adjacency list text export: one "i j alpha" line per edge.
inline void export_graph(const CorrelationGraph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("export_graph: cannot open " + path);
  f << "# nodes " << g.n << " threshold " << g.threshold << "\n";
  for (auto [i, j] : g.edges) f << i << " " << j << " " << g.alpha(i, j) << "\n";
}

// ---------------------------------------------------------------------------
// l1-penalized exponential ascent
// ---------------------------------------------------------------------------

struct ExpAscentConfig {
  double lambda_p = 0.0;       // l1 penalty
  double gamma_p = 0.0;        // l2 penalty
  int restarts = 4;
  int max_iterations = 300;
  double step_init = 0.1;
  double grad_tol = 1e-7;
  double support_threshold = 0.5;  // z_i above this joins the support
  double top_mass_limit = 0.5;     // divergence error: top-1% mass beyond this
  double trust_mass = 0.25;        // step trust region, tighter than the error
  bool labels_are_biased = false;  // biased-oracle data: weights exp(z.x) only
  int threads = 0;
};

struct ExpAscentResult {
  VectorXd z;
  std::vector<int> support;
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

struct ExpMoments {
  double m = 0.0;   // sum of weights
  VectorXd mx;      // sum of weight * x
  void merge(const ExpMoments& o) {
    if (mx.size() == 0) {
      *this = o;
      return;
    }
    if (o.mx.size() == 0) return;
    m += o.m;
    mx += o.mx;
  }
};

inline ExpMoments exp_moments(const Dataset& data, const VectorXd& z, bool biased,
                              int threads) {
  const int n = data.dim();
  return reduce_blocks<ExpMoments>(
      data.count(), threads,
      [&](ExpMoments& acc, std::int64_t, std::int64_t lo, std::int64_t hi) {
        acc.mx = VectorXd::Zero(n);
        for (std::int64_t i = lo; i < hi; ++i) {
          const double* x = data.X.data() + i * n;
          double dot = 0.0;
          for (int j = 0; j < n; ++j) dot += x[j] * z(j);
          const double w = (biased ? 1.0 : data.y(i)) * std::exp(dot);
          acc.m += w;
          for (int j = 0; j < n; ++j) acc.mx(j) += w * x[j];
        }
      });
}

// Fraction of total weight mass carried by the largest 1% of weights.
inline double top_percent_mass(const Dataset& data, const VectorXd& z, bool biased) {
  const int n = data.dim();
  std::vector<double> w(static_cast<std::size_t>(data.count()));
  double total = 0.0;
  for (std::int64_t i = 0; i < data.count(); ++i) {
    const double* x = data.X.data() + i * n;
    double dot = 0.0;
    for (int j = 0; j < n; ++j) dot += x[j] * z(j);
    w[static_cast<std::size_t>(i)] = (biased ? 1.0 : data.y(i)) * std::exp(dot);
    total += w[static_cast<std::size_t>(i)];
  }
  if (!std::isfinite(total)) return 1.0;  // overflowing weights are divergent
  const std::size_t k = std::max<std::size_t>(1, w.size() / 100);
  std::nth_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(w.size() - k), w.end());
  double top = std::accumulate(w.end() - static_cast<std::ptrdiff_t>(k), w.end(), 0.0);
  return total > 0 ? top / total : 1.0;
}

}  // namespace detail

// Empirical h(z) = exp(-||z||^2/2) mean(weight(z)) - lambda ||z||_1 - gamma ||z||_2^2
// with weight = y exp(z.x) on plain data and exp(z.x) on biased-oracle data.
struct ExpObjective {
  double value = 0.0;
  double g_value = 0.0;  // the correlation part alone
  VectorXd gradient;
};

inline ExpObjective exp_objective(const Dataset& data, const VectorXd& z,
                                  const ExpAscentConfig& cfg) {
  const auto mom = detail::exp_moments(data, z, cfg.labels_are_biased, cfg.threads);
  const double N = static_cast<double>(data.count());
  const double damp = std::exp(-0.5 * z.squaredNorm());
  ExpObjective out;
  out.g_value = damp * mom.m / N;
  out.value = out.g_value - cfg.lambda_p * z.lpNorm<1>() - cfg.gamma_p * z.squaredNorm();
  out.gradient = damp * (mom.mx / N - (mom.m / N) * z);
  // d/dz_j of -lambda z_j - gamma z_j^2 on the nonnegative orthant; the
  // ascent's boundary projection freezes coordinates pushed below zero.
  for (int j = 0; j < z.size(); ++j)
    out.gradient(j) -= cfg.lambda_p + 2.0 * cfg.gamma_p * z(j);
  if (!std::isfinite(out.value) || !out.gradient.allFinite())
    throw numeric_failure("exp_objective: non-finite value", out.value);
  return out;
}

// Projected (z >= 0) gradient ascent with step halving; returns one candidate
// support per restart.
//
// The exponential correlation grows faster than the polynomial penalties
// along any support ray (C e^{|T| zeta} vs lambda |T| zeta + gamma |T|
// zeta^2), so the population objective has no finite interior maximum with
// z_j >= 1. What stops the ascent in practice is estimator trust: the top-1%
// mass of the weight stream is a divergence gauge, and the line search
// treats it as a trust region, rejecting steps that cross the limit. The
// ascent then converges at that boundary, which for tame instances sits past
// z_j = 1 on the planted support. A current iterate already beyond the limit
// means the estimate itself is untrustworthy: variance_failure.
inline std::vector<ExpAscentResult> exp_ascent(const Dataset& data,
                                               const ExpAscentConfig& cfg, RngSeed seed) {
  if (!(cfg.lambda_p > 0) || !(cfg.gamma_p > 0))
    throw std::invalid_argument("exp_ascent: penalties must be positive");
  const int n = data.dim();
  std::vector<ExpAscentResult> out;
  for (int r = 0; r < cfg.restarts; ++r) {
    GaussianRng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    VectorXd z(n);
    for (int j = 0; j < n; ++j) z(j) = 0.2 * std::abs(rng.normal());
    if (detail::top_percent_mass(data, z, cfg.labels_are_biased) > cfg.top_mass_limit)
      throw variance_failure(
          "exp_ascent: top-1% sample mass above limit at the starting point");
    double step = cfg.step_init;
    auto eval = exp_objective(data, z, cfg);
    int iter = 0;
    for (; iter < cfg.max_iterations; ++iter) {
      VectorXd dir = eval.gradient;
      // projected direction: frozen at the boundary when pushing outward
      for (int j = 0; j < n; ++j)
        if (z(j) <= 0.0 && dir(j) < 0.0) dir(j) = 0.0;
      const double gn = dir.norm();
      if (gn <= cfg.grad_tol) break;
      // mass-safe fallback: the component orthogonal to the active-support
      // indicator keeps the exponent sum (and hence the tail mass) fixed
      // while the gamma term still improves, e.g. coordinate equalization.
      VectorXd active = VectorXd::Zero(n);
      for (int j = 0; j < n; ++j)
        if (z(j) > 0.5 * cfg.support_threshold) active(j) = 1.0;
      VectorXd dir_tan = dir;
      if (active.norm() > 0) {
        VectorXd u = active / active.norm();
        dir_tan -= u.dot(dir) * u;
      }
      bool moved = false;
      while (step > 1e-14) {
        bool tangential = false;
        VectorXd zn = (z + step * dir).cwiseMax(0.0);
        if (detail::top_percent_mass(data, zn, cfg.labels_are_biased) > cfg.trust_mass) {
          zn = (z + step * dir_tan).cwiseMax(0.0);
          tangential = true;
          if (detail::top_percent_mass(data, zn, cfg.labels_are_biased) > cfg.trust_mass) {
            step *= 0.5;
            continue;
          }
        }
        auto en = exp_objective(data, zn, cfg);
        const double used = tangential ? dir_tan.norm() : gn;
        if (en.value >= eval.value + 1e-4 * step * used * used) {
          z = std::move(zn);
          eval = std::move(en);
          step = std::min(step * 2.0, 16.0);
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    ExpAscentResult res;
    res.z = z;
    res.objective = eval.value;
    res.iterations = iter;
    for (int j = 0; j < n; ++j)
      if (z(j) >= cfg.support_threshold) res.support.push_back(j);
    out.push_back(std::move(res));
  }
  return out;
}

// Penalty defaults from the planted instance's symbolic quantities: a
// fraction of the weakest support's per-coordinate correlation gradient at
// the origin, so off-support coordinates are pinned at zero while the
// in-support ascent starts uphill.
struct ExpPenaltyDefaults {
  double lambda_p = 0.0;
  double gamma_p = 0.0;
};

inline ExpPenaltyDefaults exp_ascent_default_penalties(
    const SparsePolynomial& poly, const std::vector<std::vector<int>>& supports,
    bool labels_are_biased) {
  ExpPenaltyDefaults out;
  // Closed form for disjoint exp-plain supports (Gaussian damping already
  // folded in): g(zeta 1_{T_r}) = sum_S c_S exp(|union T_S|/2 + zeta |T_r| [r in S]).
  auto ray_value = [&](std::size_t r, double zeta) {
    const double tr = static_cast<double>(supports[r].size());
    double sum = poly.constant_term();
    for (const auto& [m, c] : poly.terms()) {
      std::size_t union_count = 0;
      for (const auto& [v, e] : m.factors) {
        (void)e;
        union_count += supports[static_cast<std::size_t>(v)].size();
      }
      const double boost = m.contains(static_cast<int>(r)) ? zeta * tr : 0.0;
      sum += c * std::exp(0.5 * static_cast<double>(union_count) + boost);
    }
    return sum;
  };
  double ef = poly.constant_term();
  for (const auto& [m, c] : poly.terms()) {
    std::size_t union_count = 0;
    for (const auto& [v, e] : m.factors) {
      (void)e;
      union_count += supports[static_cast<std::size_t>(v)].size();
    }
    ef += c * std::exp(0.5 * static_cast<double>(union_count));
  }
  const double scale = labels_are_biased ? ef : 1.0;
  // weakest per-coordinate ray gradient at the origin
  double dmin = std::numeric_limits<double>::infinity();
  const double h = 1e-5;
  for (std::size_t r = 0; r < supports.size(); ++r) {
    const double tr = static_cast<double>(supports[r].size());
    const double d_zeta = (ray_value(r, h) - ray_value(r, -h)) / (2 * h);
    dmin = std::min(dmin, d_zeta / tr / scale);
  }
  if (!(dmin > 0))
    throw precondition_failure(
        "exp_ascent_default_penalties: no positive support gradient at the origin");
  // gamma carries the within-support equalization force and must dominate
  // the empirical landscape roughness of the exponential estimator
  out.lambda_p = 0.25 * dmin;
  out.gamma_p = 0.75 * dmin;
  return out;
}

// ---------------------------------------------------------------------------
// Even-activation recovery
// ---------------------------------------------------------------------------

// Coefficients of the quartic-correlation model for even activations and
// orthonormal planted weights:
//   E[f h4(z.x)] = sum_i alpha_i z_i^4 + (||z||^2 - 1) sum_i beta_i z_i^2
//                  + sum_{i<j} gamma_ij z_i^2 z_j^2 + K (||z||^2 - 1)^2
struct EvenCoeffs {
  VectorXd alpha;      // u4 sum_{S ni i} c_S u0^{|S|-1}
  VectorXd beta;       // sqrt(3) u2 sum_{S ni i} c_S u0^{|S|-1}
  MatrixXd gamma_pair; // sqrt(6) u2^2 sum_{S contains {i,j}} c_S u0^{|S|-2}
  double model_const = 0.0;  // K
  double u0 = 0.0, u2 = 0.0, u4 = 0.0;
};

inline EvenCoeffs even_coefficients(const SparsePolynomial& poly, const ActivationSpec& u,
                                    int d) {
  if (!u.is_even())
    throw precondition_failure("even_coefficients: activation is not even");
  u.validate_even();
  EvenCoeffs out;
  out.u0 = activation_coeff(u, 0);
  out.u2 = activation_coeff(u, 2);
  out.u4 = activation_coeff(u, 4);
  out.alpha = VectorXd::Zero(d);
  out.beta = VectorXd::Zero(d);
  out.gamma_pair = MatrixXd::Zero(d, d);
  double weighted_sum = poly.constant_term();  // c0 + sum c_S u0^{|S|}
  for (const auto& [m, c] : poly.terms()) {
    const int k = m.num_vars();
    const double u0k1 = std::pow(out.u0, k - 1);
    weighted_sum += c * std::pow(out.u0, k);
    for (const auto& [v, e] : m.factors) {
      (void)e;
      out.alpha(v) += out.u4 * c * u0k1;
      out.beta(v) += std::sqrt(3.0) * out.u2 * c * u0k1;
    }
    const double u0k2 = std::pow(out.u0, k - 2);
    for (std::size_t a = 0; a < m.factors.size(); ++a)
      for (std::size_t b = a + 1; b < m.factors.size(); ++b) {
        const int i = m.factors[a].first, j = m.factors[b].first;
        const double val = std::sqrt(6.0) * out.u2 * out.u2 * c * u0k2;
        out.gamma_pair(i, j) += val;
        out.gamma_pair(j, i) += val;
      }
  }
  out.model_const = 3.0 / (2.0 * std::sqrt(6.0)) * weighted_sum;
  return out;
}

struct even_condition_violation : precondition_failure {
  int i, j;
  even_condition_violation(int ii, int jj)
      : precondition_failure("even recovery condition violated at pair (" +
                             std::to_string(ii) + "," + std::to_string(jj) + ")"),
        i(ii),
        j(jj) {}
};

// Local-maxima condition on the sphere: sign-corrected alpha_i + alpha_j must
// exceed the sign-corrected pair coefficient for every pair.
inline void check_even_condition(const EvenCoeffs& c) {
  const double s4 = c.u4 >= 0 ? 1.0 : -1.0;
  const int d = static_cast<int>(c.alpha.size());
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (!(s4 * (c.alpha(i) + c.alpha(j) - c.gamma_pair(i, j)) > 0))
        throw even_condition_violation(i, j);
}

struct EvenRecoverParams {
  int restarts = 0;  // 0 means 5 d
  int max_iterations = 300;
  double step_init = 0.5;
  double grad_tol = 1e-6;
  double dedup_cos = 0.9;
  int threads = 0;
};

// Maximizes sgn(u4) E[y h4(z.x)] over the unit sphere by projected ascent
// with restarts; returns d deduplicated maximizer directions.
inline MatrixXd even_recover(const Dataset& data, int d, const EvenCoeffs& coeffs,
                             const EvenRecoverParams& params, RngSeed seed) {
  check_even_condition(coeffs);
  const int n = data.dim();
  const double s4 = coeffs.u4 >= 0 ? 1.0 : -1.0;

  struct H4Moments {
    double v = 0.0;
    VectorXd g;
    void merge(const H4Moments& o) {
      if (g.size() == 0) {
        *this = o;
        return;
      }
      if (o.g.size() == 0) return;
      v += o.v;
      g += o.g;
    }
  };
  auto objective = [&](const VectorXd& z) {
    auto mom = reduce_blocks<H4Moments>(
        data.count(), params.threads,
        [&](H4Moments& acc, std::int64_t, std::int64_t lo, std::int64_t hi) {
          acc.g = VectorXd::Zero(n);
          for (std::int64_t i = lo; i < hi; ++i) {
            const double* x = data.X.data() + i * n;
            double a = 0.0;
            for (int j = 0; j < n; ++j) a += x[j] * z(j);
            const double y = data.y(i);
            const double a2 = a * a;
            acc.v += y * (a2 * a2 - 6.0 * a2 + 3.0);
            const double c = y * (4.0 * a2 * a - 12.0 * a);
            for (int j = 0; j < n; ++j) acc.g(j) += c * x[j];
          }
        });
    const double N = static_cast<double>(data.count());
    struct {
      double value;
      VectorXd grad;
    } out{s4 * mom.v / (kSqrt24 * N), VectorXd(s4 * mom.g / (kSqrt24 * N))};
    return out;
  };

  std::vector<VectorXd> kept;
  const int restarts = params.restarts > 0 ? params.restarts : 5 * d;
  for (int r = 0; r < restarts && static_cast<int>(kept.size()) < d; ++r) {
    GaussianRng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    VectorXd z(n);
    for (int j = 0; j < n; ++j) z(j) = rng.normal();
    z.normalize();
    double step = params.step_init;
    auto eval = objective(z);
    for (int iter = 0; iter < params.max_iterations; ++iter) {
      VectorXd rg = eval.grad - z.dot(eval.grad) * z;
      const double gn = rg.norm();
      if (gn <= params.grad_tol) break;
      bool moved = false;
      while (step > 1e-14) {
        VectorXd zn = (z + step * rg).normalized();
        auto en = objective(zn);
        if (en.value >= eval.value + 1e-4 * step * gn * gn) {
          z = std::move(zn);
          eval = std::move(en);
          step = std::min(step * 2.0, 16.0);
          moved = true;
          break;
        }
        step *= 0.5;
      }
      if (!moved) break;
    }
    bool dup = false;
    for (const auto& k : kept)
      if (std::abs(k.dot(z)) >= params.dedup_cos) {
        dup = true;
        break;
      }
    if (!dup) kept.push_back(std::move(z));
  }
  if (static_cast<int>(kept.size()) < d)
    throw coverage_failure("even_recover: found " + std::to_string(kept.size()) + " of " +
                               std::to_string(d) + " directions",
                           static_cast<int>(kept.size()));
  MatrixXd out(d, n);
  for (int i = 0; i < d; ++i) out.row(i) = kept[static_cast<std::size_t>(i)].transpose();
  return out;
}

}  // namespace planted::structural
