#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "planted/errors.hpp"
#include "planted/oracle.hpp"
#include "planted/stats.hpp"

namespace planted::delta {

using Eigen::VectorXd;

struct DeltaParams {
  double s = 0.0;            // slice location
  double eps_outer = 5e-4;   // finite difference step approximating delta'
  double eps_inner = 5e-5;   // slab width approximating delta (stream mode)
  std::int64_t budget = 100'000;

  void validate() const {
    if (!(s >= 0)) throw std::invalid_argument("DeltaParams: s must be >= 0");
    if (!(eps_outer > 0) || !(eps_inner > 0))
      throw std::invalid_argument("DeltaParams: eps must be positive");
    if (eps_inner > eps_outer / 10.0 * (1.0 + 1e-12))
      throw std::invalid_argument("DeltaParams: eps_inner must be <= eps_outer/10");
    if (budget < 1) throw std::invalid_argument("DeltaParams: budget must be positive");
  }
};

// C1(f, z, s) = E[f(x) delta(z.x - s)] = phi(s) E[f | z.x = s].
// Oracle mode: the delta factor phi(s) is exact; only the conditional mean of
// f is Monte Carlo.
inline McEstimate c1_delta(const SampleOracle& oracle, const VectorXd& z, double s,
                           const DeltaParams& p, RngSeed seed, int threads = 0) {
  p.validate();
  auto plane = SampleOracle::hyperplane(oracle.network(), seed, z, s);
  const std::int64_t block = 1 << 16;
  std::vector<MeanAccumulator> partial(
      static_cast<std::size_t>((p.budget + block - 1) / block));
  plane.visit(p.budget, threads, [&](std::int64_t i, const double*, double y) {
    partial[static_cast<std::size_t>(i / block)].add(y);
  });
  MeanAccumulator acc;
  for (const auto& a : partial) acc.merge(a);
  auto est = acc.estimate();
  const double phi = normal_pdf(s);
  est.mean *= phi;
  est.std_error *= phi;
  return est;
}

// Stream mode: (1 / eps_inner) mean(y 1[z.x in [s - eps_inner, s]]) over a
// fixed dataset.
inline McEstimate c1_delta_stream(const Dataset& data, const VectorXd& z, double s,
                                  const DeltaParams& p) {
  p.validate();
  const VectorXd zu = z / z.norm();
  MeanAccumulator acc;
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < data.count(); ++i) {
    const double dot = data.X.row(i) * zu;
    const bool in = dot >= s - p.eps_inner && dot <= s;
    if (in) ++hits;
    acc.add(in ? data.y(i) / p.eps_inner : 0.0);
  }
  if (hits == 0)
    throw insufficient_data("c1_delta_stream: no samples hit the slab at s = " +
                            std::to_string(s));
  return acc.estimate();
}

// C2(f, z, s) = E[f (delta(z.x - s - eps) - delta(z.x - s + eps))]
//             = C1(s + eps) - C1(s - eps)          (unnormalized, as defined)
inline McEstimate c2_delta_prime(const SampleOracle& oracle, const VectorXd& z, double s,
                                 const DeltaParams& p, RngSeed seed, int threads = 0) {
  const auto hi = c1_delta(oracle, z, s + p.eps_outer, p, derive_seed(seed, 1), threads);
  const auto lo = c1_delta(oracle, z, s - p.eps_outer, p, derive_seed(seed, 2), threads);
  McEstimate out;
  out.mean = hi.mean - lo.mean;
  out.std_error = std::hypot(hi.std_error, lo.std_error);
  out.count = hi.count + lo.count;
  return out;
}

// Normalized variant for plotting: C2 / (2 eps_outer) approximates the
// derivative correlation E[f delta'(z.x - s)].
inline McEstimate c2_normalized(const SampleOracle& oracle, const VectorXd& z, double s,
                                const DeltaParams& p, RngSeed seed, int threads = 0) {
  auto est = c2_delta_prime(oracle, z, s, p, seed, threads);
  est.mean /= 2.0 * p.eps_outer;
  est.std_error /= 2.0 * p.eps_outer;
  return est;
}

// ReLU variant: second difference of C1 scaled by 1/eps_outer, approximating
// the delta'' correlation.
inline McEstimate c3_relu(const SampleOracle& oracle, const VectorXd& z, double s,
                          const DeltaParams& p, RngSeed seed, int threads = 0) {
  const auto hi = c1_delta(oracle, z, s + p.eps_outer, p, derive_seed(seed, 1), threads);
  const auto mid = c1_delta(oracle, z, s, p, derive_seed(seed, 2), threads);
  const auto lo = c1_delta(oracle, z, s - p.eps_outer, p, derive_seed(seed, 3), threads);
  McEstimate out;
  out.mean = (hi.mean - 2.0 * mid.mean + lo.mean) / p.eps_outer;
  out.std_error = std::sqrt(hi.std_error * hi.std_error +
                            4.0 * mid.std_error * mid.std_error +
                            lo.std_error * lo.std_error) /
                  p.eps_outer;
  out.count = hi.count + mid.count + lo.count;
  return out;
}

struct CorrelationProfile {
  std::vector<VectorXd> directions;
  std::vector<McEstimate> values;
};

struct ScanResult {
  CorrelationProfile profile;
  std::vector<int> accepted;  // candidate indices with value >= threshold
  double threshold = 0.0;
};

// Tests each candidate direction for proximity to a planted one: evaluates
// the derivative correlation at s = t (C2 for sign activations, C3 for ReLU)
// and accepts values at least phi(t) eps3 / 2.
inline ScanResult direction_scan(const SampleOracle& oracle,
                                 const std::vector<VectorXd>& candidates, double t,
                                 const DeltaParams& params, double eps3, RngSeed seed,
                                 int threads = 0) {
  if (candidates.empty())
    throw std::invalid_argument("direction_scan: empty candidate list");
  const auto kind = oracle.network().activation().kind;
  if (kind != ActKind::SignThreshold && kind != ActKind::ReluThreshold)
    throw unsupported_mode("direction_scan: sign or relu activation required");
  DeltaParams p = params;
  p.s = t;
  ScanResult out;
  out.threshold = normal_pdf(t) * eps3 / 2.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const VectorXd z = candidates[i] / candidates[i].norm();
    const RngSeed sub = derive_seed(seed, static_cast<std::uint64_t>(i));
    McEstimate v = (kind == ActKind::SignThreshold)
                       ? c2_delta_prime(oracle, z, t, p, sub, threads)
                       : c3_relu(oracle, z, t, p, sub, threads);
    out.profile.directions.push_back(z);
    out.profile.values.push_back(v);
    if (v.mean >= out.threshold) out.accepted.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace planted::delta
