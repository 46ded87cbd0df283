#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "planted/errors.hpp"
#include "planted/landscape.hpp"
#include "planted/network.hpp"
#include "planted/oracle.hpp"
#include "planted/stats.hpp"

namespace planted::refine {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Conditional-probability query on the slab {x : z . x in [t' - eps, t']}.
struct SlabQuery {
  VectorXd z;
  double t_prime = 0.0;
  double eps = 0.02;
  std::int64_t budget = 100'000;

  void validate() const {
    if (std::abs(z.norm() - 1.0) > 1e-10)
      throw std::invalid_argument("SlabQuery: z must be unit norm");
    if (!(eps > 0) || eps >= 1.0 / std::max(t_prime, 1.0))
      throw std::invalid_argument("SlabQuery: eps outside (0, 1/max(t',1))");
    if (budget < 1) throw std::invalid_argument("SlabQuery: budget must be positive");
  }
};

// Pr[f(x) > shift | x in slab], with binomial standard error. Fresh
// conditional samples per query (query_seed) keep the stderr valid.
inline McEstimate slab_sign_prob(const SampleOracle& oracle, const SlabQuery& q,
                                 RngSeed query_seed, double label_shift = 0.0,
                                 int threads = 0) {
  q.validate();
  auto slab = SampleOracle::slab(oracle.network(), query_seed, q.z, q.t_prime, q.eps);
  std::int64_t hits = 0;
  std::vector<std::int64_t> partial;
  const std::int64_t block = 1 << 14;
  const std::int64_t nblocks = (q.budget + block - 1) / block;
  partial.assign(static_cast<std::size_t>(nblocks), 0);
  slab.visit(q.budget, threads, [&](std::int64_t i, const double*, double y) {
    if (y > label_shift) ++partial[static_cast<std::size_t>(i / block)];
  });
  for (auto c : partial) hits += c;
  McEstimate e;
  e.count = q.budget;
  e.mean = static_cast<double>(hits) / static_cast<double>(q.budget);
  e.std_error = std::sqrt(std::max(0.0, e.mean * (1.0 - e.mean)) /
                          static_cast<double>(q.budget));
  return e;
}

struct TanEstimate {
  double s = 0.0;       // estimated tan(angle), >= 0
  double t1 = 0.0, t2 = 0.0;
  McEstimate p1, p2;    // final probability measurements at t1, t2
  bool noisy_warning = false;
  int queries = 0;
};

struct RefineConfig {
  double eps1 = 0.02;        // slab width
  double eps2 = 0.015;       // target angle (radians)
  int max_outer = 400;       // proposal budget
  std::int64_t budget = 100'000;  // samples per slab query
  double perturb_scale = 0.1;
  double c_acc = 0.004;      // accept when angle drops by c_acc/d relatively
  int d = 1;                 // unit count, scales the perturbation and test
  double t = 2.5;            // activation threshold of the planted network
  double t_max = 0.0;        // search range cap; 0 means 3 t
  double t_resolution = 1e-3;
  double prob_tol = 0.01;    // level validation tolerance
  int max_bisect = 40;
  int refresh_after = 10;    // re-estimate the held angle after this many rejects
  double label_shift = 0.0;  // median shift for nonzero c0
  int threads = 0;

  double t_max_or_default() const { return t_max > 0 ? t_max : 3.0 * t; }
  void validate() const {
    if (!(eps2 > 0 && eps2 < 0.7853981633974483))
      throw std::invalid_argument("RefineConfig: eps2 outside (0, pi/4)");
    if (budget < 1 || max_outer < 1)
      throw std::invalid_argument("RefineConfig: budgets must be positive");
  }
};

// The fixed denominator quantile gap for the 0.4 / 0.6 levels.
inline double tan_denominator() {
  return normal_quantile(0.6) - normal_quantile(0.4);
}

// Slab-probability level search: monotone bisection on t' in [lo, t_max] down
// to t_resolution (noise near the crossing keeps the final point inside the
// level's uncertainty band, which shrinks with the per-query budget).
namespace detail {

struct LevelSearch {
  double t_found;
  McEstimate p_final;
  int queries;
};

template <typename ProbFn>
LevelSearch bisect_level(ProbFn&& prob, double level, double lo, double hi,
                         double t_resolution, int max_steps) {
  int queries = 0;
  for (int step = 0; step < max_steps && (hi - lo) > t_resolution; ++step) {
    const double mid = 0.5 * (lo + hi);
    const auto p = prob(mid);
    ++queries;
    if (p.mean < level)
      lo = mid;
    else
      hi = mid;
  }
  const double t_found = 0.5 * (lo + hi);
  auto p_final = prob(t_found);
  ++queries;
  return {t_found, p_final, queries};
}

}  // namespace detail

// Algorithm: find t1, t2 where the slab sign-probability crosses 0.4 and 0.6,
// then s = (t2 - t1) / (Phi^{-1}(0.6) - Phi^{-1}(0.4)) estimates tan(angle).
inline TanEstimate estimate_tan_alpha(const SampleOracle& oracle, const VectorXd& z,
                                      const RefineConfig& cfg, RngSeed seed) {
  cfg.validate();
  const double t_max = cfg.t_max_or_default();
  std::uint64_t counter = 0;
  auto prob = [&](double tp) {
    SlabQuery q;
    q.z = z / z.norm();
    q.t_prime = tp;
    q.eps = cfg.eps1;
    q.budget = cfg.budget;
    return slab_sign_prob(oracle, q, derive_seed(seed, counter++), cfg.label_shift,
                          cfg.threads);
  };

  TanEstimate out;
  const auto p0 = prob(0.0);
  if (p0.mean >= 0.4)
    throw search_failure("estimate_tan_alpha: slab probability at t'=0 is " +
                         std::to_string(p0.mean) + ", level 0.4 not bracketed below");
  const auto pmax = prob(t_max);
  if (pmax.mean < 0.6)
    throw search_failure("estimate_tan_alpha: slab probability at t_max is " +
                         std::to_string(pmax.mean) + ", level 0.6 not bracketed in range");

  auto low = detail::bisect_level(prob, 0.4, 0.0, t_max, cfg.t_resolution, cfg.max_bisect);
  auto high =
      detail::bisect_level(prob, 0.6, low.t_found, t_max, cfg.t_resolution, cfg.max_bisect);
  out.t1 = low.t_found;
  out.t2 = high.t_found;
  out.p1 = low.p_final;
  out.p2 = high.p_final;
  out.queries = 2 + low.queries + high.queries;
  out.s = std::max(0.0, (out.t2 - out.t1) / tan_denominator());
  const double combined =
      3.0 * std::sqrt(out.p1.std_error * out.p1.std_error +
                      out.p2.std_error * out.p2.std_error);
  out.noisy_warning = std::abs(out.p1.mean - 0.4) > cfg.prob_tol + 3 * out.p1.std_error ||
                      std::abs(out.p2.mean - 0.6) > cfg.prob_tol + 3 * out.p2.std_error ||
                      out.p2.mean < out.p1.mean - combined;
  return out;
}

// Gaussian perturbation in the tangent hyperplane at z (exactly orthogonal).
inline VectorXd tangent_perturbation(const VectorXd& z, GaussianRng& rng) {
  VectorXd delta(z.size());
  for (int j = 0; j < z.size(); ++j) delta(j) = rng.normal();
  delta -= z.dot(delta) * z;
  return delta;
}

struct RefineResult {
  VectorXd z;
  double measured_angle = 0.0;  // radians, from the final tan estimate
  int proposals = 0;
  int accepts = 0;
  int refreshes = 0;
  bool reached_target = false;
};

// Random tangential perturbation refinement: estimate the angle, propose
// z' = normalize(z + scale sin(alpha/d) dz), keep the proposal when its
// measured angle drops by at least (1 - c_acc/d); stop at eps2 or the
// proposal cap. Observer sees every tan estimate with the direction it was
// measured at (planted instrumentation).
inline RefineResult refine_estimate(
    const SampleOracle& oracle, const VectorXd& z0, const RefineConfig& cfg, RngSeed seed,
    const std::function<void(const TanEstimate&, const VectorXd&)>& observer = {}) {
  cfg.validate();
  GaussianRng perturb_rng(derive_seed(seed, 0xfeed));
  VectorXd z = z0 / z0.norm();
  std::uint64_t est_counter = 1;
  auto measure = [&](const VectorXd& at) {
    auto est = estimate_tan_alpha(oracle, at, cfg, derive_seed(seed, est_counter++));
    if (observer) observer(est, at);
    return est;
  };

  RefineResult out;
  auto est = measure(z);
  double alpha = std::atan(est.s);
  int rejects_since_refresh = 0;
  while (out.proposals < cfg.max_outer) {
    if (alpha <= cfg.eps2) {
      out.reached_target = true;
      break;
    }
    VectorXd dz = tangent_perturbation(z, perturb_rng);
    VectorXd zp = (z + cfg.perturb_scale * std::sin(alpha / cfg.d) * dz).normalized();
    auto estp = measure(zp);
    const double alphap = std::atan(estp.s);
    ++out.proposals;
    if (alphap <= (1.0 - cfg.c_acc / cfg.d) * alpha) {
      z = std::move(zp);
      alpha = alphap;
      est = estp;
      ++out.accepts;
      rejects_since_refresh = 0;
    } else if (++rejects_since_refresh >= cfg.refresh_after) {
      est = measure(z);
      alpha = std::atan(est.s);
      ++out.refreshes;
      rejects_since_refresh = 0;
    }
  }
  if (alpha <= cfg.eps2) out.reached_target = true;
  out.z = std::move(z);
  out.measured_angle = alpha;
  return out;
}

// ---------------------------------------------------------------------------
// Intersections of halfspaces far from the origin
// ---------------------------------------------------------------------------

// g(x) = AND_i 1[w_i . x >= -t]: every halfspace boundary at distance t from
// the origin, intersection containing the ball of radius t.
struct HalfspaceInstance {
  MatrixXd w;  // unit rows
  double t = 2.5;

  double eval(const double* x, int len) const {
    if (len != w.cols()) throw std::invalid_argument("HalfspaceInstance: dim mismatch");
    for (int i = 0; i < w.rows(); ++i) {
      double a = 0.0;
      for (int j = 0; j < len; ++j) a += w(i, j) * x[j];
      if (a < -t) return 0.0;
    }
    return 1.0;
  }
  double eval(const VectorXd& x) const { return eval(x.data(), static_cast<int>(x.size())); }
};

// The complement 1 - g(x) is an OR of high-threshold sign units on the
// negated directions: 1 - prod_i (1 - 1[(-w_i) . x >= t]).
inline PlantedNetwork complement_network(const HalfspaceInstance& inst) {
  const int d = static_cast<int>(inst.w.rows());
  return PlantedNetwork(-inst.w, ActivationSpec::sign(inst.t),
                        SparsePolynomial::disjunction(d));
}

// Orients z so the slab probability at t' = t is the larger of the two signs
// (the positive planted direction has activity above threshold; the negative
// one has essentially none).
inline VectorXd fix_direction_sign(const SampleOracle& oracle, const VectorXd& z,
                                   double t, double eps, std::int64_t budget,
                                   RngSeed seed, int threads = 0) {
  SlabQuery q;
  q.z = z / z.norm();
  q.t_prime = t + 2 * eps;  // just above threshold: active side saturates
  q.eps = eps;
  q.budget = budget;
  const auto plus = slab_sign_prob(oracle, q, derive_seed(seed, 1), 0.0, threads);
  q.z = -q.z;
  const auto minus = slab_sign_prob(oracle, q, derive_seed(seed, 2), 0.0, threads);
  return plus.mean >= minus.mean ? VectorXd(z / z.norm()) : VectorXd(-z / z.norm());
}

struct HalfspaceConfig {
  std::int64_t landscape_samples = 2'000'000;
  landscape::LandscapeParams landscape;  // u2hat/u4hat filled from sign(t)
  RefineConfig refine;
  RngSeed seed{1};
  int threads = 0;
};

struct HalfspaceRecovery {
  MatrixXd directions;  // d x n, refined complement directions (approx -w_i)
  std::vector<RefineResult> refine_results;
  std::vector<landscape::CandidateDirection> candidates;
};

// Theorem-style end-to-end learner: complement the labels, recover coarse
// directions by landscape minimization, invert, orient, and refine each
// direction with slab queries.
inline HalfspaceRecovery learn_halfspace_intersection(const HalfspaceInstance& inst,
                                                      HalfspaceConfig cfg) {
  const int d = static_cast<int>(inst.w.rows());
  const int n = static_cast<int>(inst.w.cols());
  auto net = complement_network(inst);
  auto p = cfg.landscape;
  if (p.u2hat == 0.0 && p.u4hat == 0.0) {
    p.u2hat = activation_coeff(net.activation(), 2);
    p.u4hat = activation_coeff(net.activation(), 4);
  }
  p.threads = cfg.threads;

  // fresh dataset per restart
  Dataset current;
  auto provider = [&](int r) -> const Dataset& {
    auto oracle =
        SampleOracle::plain(net, derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(r)));
    current = oracle.sample(cfg.landscape_samples, cfg.threads);
    return current;
  };
  auto cands = landscape::recover_all_one_by_one(provider, p, d, derive_seed(cfg.seed, 1));

  MatrixXd coarse(d, n);
  if (d == n) {
    std::vector<VectorXd> cols;
    cols.reserve(static_cast<std::size_t>(d));
    for (auto& c : cands) cols.push_back(c.z);
    coarse = landscape::assemble_and_invert(cols);
  } else {
    for (int i = 0; i < d; ++i) coarse.row(i) = cands[static_cast<std::size_t>(i)].z.transpose();
  }

  auto base_oracle = SampleOracle::plain(net, derive_seed(cfg.seed, 2));
  HalfspaceRecovery out;
  out.candidates = std::move(cands);
  out.directions.resize(d, n);
  auto rcfg = cfg.refine;
  rcfg.d = d;
  rcfg.t = inst.t;
  rcfg.threads = cfg.threads;
  for (int i = 0; i < d; ++i) {
    VectorXd z = fix_direction_sign(base_oracle, coarse.row(i).transpose(), inst.t,
                                    rcfg.eps1, rcfg.budget,
                                    derive_seed(cfg.seed, 3000 + static_cast<std::uint64_t>(i)),
                                    cfg.threads);
    auto res = refine_estimate(base_oracle, z, rcfg,
                               derive_seed(cfg.seed, 4000 + static_cast<std::uint64_t>(i)));
    out.directions.row(i) = res.z.transpose();
    out.refine_results.push_back(std::move(res));
  }
  return out;
}

}  // namespace planted::refine
