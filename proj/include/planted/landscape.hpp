#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "planted/assignment.hpp"
#include "planted/errors.hpp"
#include "planted/hermite.hpp"
#include "planted/oracle.hpp"
#include "planted/parallel.hpp"
#include "planted/stats.hpp"

namespace planted::landscape {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct LandscapeParams {
  double u2hat = 0.0;
  double u4hat = 0.0;
  double lambda = 0.0;  // penalty weight; 0 means |u4|/u2^2 * lambda_scale
  // lambda must exceed |u4|/u2^2 strictly: at multiplier 1 the quartic and
  // penalty terms cancel along a planted ray (value u4 (1 - 2 r^2), unbounded
  // below) and no interior minimum exists. Default doubles it.
  double lambda_scale = 2.0;
  double gamma = 0.01;       // simultaneous objective only, in (0, 0.01]
  double step_init = 1.0;    // line search: halving from the running step,
  double step_growth = 2.0;  // growing it again after each accepted move
  double z_max = 4.0;        // trust region ||z|| cap; empirical quartic noise
                             // makes long rays spuriously attractive
  int max_iterations = 400;
  int restarts = 0;          // 0 means 5 * d
  double epsilon = 1e-4;     // certificate: ||grad|| <= epsilon
  double tau = 1e-3;         // certificate: lambda_min(hessian) >= -tau
  std::int64_t batch_size = 1'000'000;
  double dedup_cos = 0.9;
  int threads = 0;

  double lambda_or_default() const {
    if (lambda > 0) return lambda;
    if (u2hat == 0.0) throw std::invalid_argument("LandscapeParams: u2hat is zero");
    return lambda_scale * std::abs(u4hat) / (u2hat * u2hat);
  }
  double sign_u4() const { return u4hat >= 0 ? 1.0 : -1.0; }
  int restarts_or_default(int d) const { return restarts > 0 ? restarts : 5 * d; }

  static LandscapeParams for_activation(const ActivationSpec& act) {
    LandscapeParams p;
    p.u2hat = activation_coeff(act, 2);
    p.u4hat = activation_coeff(act, 4);
    if (!(p.gamma > 0.0 && p.gamma <= 0.01))
      throw std::invalid_argument("LandscapeParams: gamma outside (0, 0.01]");
    return p;
  }
};

// Correlation of labels with the weighted Hermite polynomial:
// mean of y_j * H_k^{||z||}(z . x_j).
inline McEstimate correlate_H(const Dataset& data, const VectorXd& z, int k,
                              int threads = 0) {
  if (k != 2 && k != 4) throw std::domain_error("correlate_H: k must be 2 or 4");
  const double zn2 = z.squaredNorm();
  if (!(zn2 > 0)) throw std::domain_error("correlate_H: zero direction");
  const int n = data.dim();
  if (z.size() != n) throw std::invalid_argument("correlate_H: dimension mismatch");
  auto acc = reduce_blocks<MeanAccumulator>(
      data.count(), threads,
      [&](MeanAccumulator& a, std::int64_t, std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
          double s = 0.0;
          const double* row = data.X.data() + i * n;
          for (int j = 0; j < n; ++j) s += row[j] * z(j);
          const double s2 = s * s;
          const double h = (k == 2) ? (s2 - zn2) / kSqrt2
                                    : (s2 * s2 - 6.0 * zn2 * s2 + 3.0 * zn2 * zn2) / kSqrt24;
          a.add(data.y(i) * h);
        }
      });
  return acc.estimate();
}

// ---------------------------------------------------------------------------
// One-by-one objective G(z)
// ---------------------------------------------------------------------------

namespace detail {

// Fused per-sample moments of the empirical correlations:
//   m0 = sum y,  m2 = sum y a^2,  m4 = sum y a^4,
//   v1 = sum y a x,  v3 = sum y a^3 x,   with a = z . x.
struct ZMoments {
  double m0 = 0, m2 = 0, m4 = 0;
  VectorXd v1, v3;
  void init(int n) {
    v1 = VectorXd::Zero(n);
    v3 = VectorXd::Zero(n);
  }
  void merge(const ZMoments& o) {
    if (v1.size() == 0) {
      *this = o;
      return;
    }
    if (o.v1.size() == 0) return;
    m0 += o.m0;
    m2 += o.m2;
    m4 += o.m4;
    v1 += o.v1;
    v3 += o.v3;
  }
};

inline ZMoments z_moments(const Dataset& data, const VectorXd& z, bool with_vectors,
                          int threads) {
  const int n = data.dim();
  if (z.size() != n) throw std::invalid_argument("objective: dimension mismatch");
  return reduce_blocks<ZMoments>(
      data.count(), threads,
      [&](ZMoments& acc, std::int64_t, std::int64_t lo, std::int64_t hi) {
        acc.init(n);
        double* v1 = acc.v1.data();
        double* v3 = acc.v3.data();
        const double* zz = z.data();
        for (std::int64_t i = lo; i < hi; ++i) {
          const double* row = data.X.data() + i * n;
          double a = 0.0;
          for (int j = 0; j < n; ++j) a += row[j] * zz[j];
          const double y = data.y(i);
          const double ya = y * a, a2 = a * a;
          acc.m0 += y;
          acc.m2 += ya * a;
          acc.m4 += ya * a * a2;
          if (with_vectors) {
            const double c3 = ya * a2;
            for (int j = 0; j < n; ++j) {
              v1[j] += ya * row[j];
              v3[j] += c3 * row[j];
            }
          }
        }
      });
}

}  // namespace detail

struct ObjectiveValue {
  double value = 0.0;
  VectorXd gradient;
};

// Empirical landscape objective
//   G(z) = -sgn(u4) A4(z) + lambda (A2(z) - u2hat)^2
// with A_k(z) the empirical correlation with H_k^{||z||}(z . x); both the
// value and gradient are exact for the sample-average objective (H_k is a
// polynomial in z, differentiated in closed form).
inline ObjectiveValue objective_G(const VectorXd& z, const Dataset& data,
                                  const LandscapeParams& p, int threads = 0) {
  const auto mom = detail::z_moments(data, z, true, threads);
  const double N = static_cast<double>(data.count());
  if (N == 0) throw std::invalid_argument("objective_G: empty dataset");
  const double zn2 = z.squaredNorm();
  const double a2 = (mom.m2 - mom.m0 * zn2) / (kSqrt2 * N);
  const double a4 =
      (mom.m4 - 6.0 * zn2 * mom.m2 + 3.0 * zn2 * zn2 * mom.m0) / (kSqrt24 * N);
  const double lambda = p.lambda_or_default();
  const double s4 = p.sign_u4();

  ObjectiveValue out;
  out.value = -s4 * a4 + lambda * (a2 - p.u2hat) * (a2 - p.u2hat);
  VectorXd grad_a2 = (2.0 * mom.v1 - 2.0 * mom.m0 * z) / (kSqrt2 * N);
  VectorXd grad_a4 = (4.0 * mom.v3 - 12.0 * mom.m2 * z - 12.0 * zn2 * mom.v1 +
                      12.0 * zn2 * mom.m0 * z) /
                     (kSqrt24 * N);
  out.gradient = -s4 * grad_a4 + 2.0 * lambda * (a2 - p.u2hat) * grad_a2;
  if (!std::isfinite(out.value) || !out.gradient.allFinite())
    throw numeric_failure("objective_G: non-finite value or gradient", out.value);
  return out;
}

inline double objective_G_value(const VectorXd& z, const Dataset& data,
                                const LandscapeParams& p, int threads = 0) {
  const auto mom = detail::z_moments(data, z, false, threads);
  const double N = static_cast<double>(data.count());
  const double zn2 = z.squaredNorm();
  const double a2 = (mom.m2 - mom.m0 * zn2) / (kSqrt2 * N);
  const double a4 =
      (mom.m4 - 6.0 * zn2 * mom.m2 + 3.0 * zn2 * zn2 * mom.m0) / (kSqrt24 * N);
  const double lambda = p.lambda_or_default();
  const double v = -p.sign_u4() * a4 + lambda * (a2 - p.u2hat) * (a2 - p.u2hat);
  if (!std::isfinite(v)) throw numeric_failure("objective_G: non-finite value", v);
  return v;
}

// ---------------------------------------------------------------------------
// (eps, tau) local-minimum certification
// ---------------------------------------------------------------------------

struct LocalMinCheck {
  double grad_norm = 0.0;
  double min_eig = 0.0;
  bool ok = false;
};

inline constexpr int kMaxHessianDim = 64;

// Finite-difference Hessian of an exact-gradient function, assembled
// symmetrically, then a dense symmetric eigensolve.
inline LocalMinCheck verify_local_min_fd(
    const VectorXd& z, const std::function<VectorXd(const VectorXd&)>& grad_fn,
    double eps, double tau, double fd_step = 1e-4) {
  const int n = static_cast<int>(z.size());
  if (n > kMaxHessianDim)
    throw unsupported_size("verify_local_min: dimension above Hessian cap");
  LocalMinCheck out;
  out.grad_norm = grad_fn(z).norm();
  MatrixXd h(n, n);
  VectorXd zp = z, zm = z;
  for (int j = 0; j < n; ++j) {
    const double hj = fd_step * (1.0 + std::abs(z(j)));
    zp(j) = z(j) + hj;
    zm(j) = z(j) - hj;
    h.col(j) = (grad_fn(zp) - grad_fn(zm)) / (2.0 * hj);
    zp(j) = z(j);
    zm(j) = z(j);
  }
  MatrixXd sym = 0.5 * (h + h.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  out.min_eig = es.eigenvalues()(0);
  out.ok = out.grad_norm <= eps && out.min_eig >= -tau;
  return out;
}

inline LocalMinCheck verify_local_min(const VectorXd& z, const Dataset& data,
                                      const LandscapeParams& p, double eps, double tau,
                                      int threads = 0) {
  return verify_local_min_fd(
      z, [&](const VectorXd& v) { return objective_G(v, data, p, threads).gradient; },
      eps, tau);
}

// Sphere-constrained certificate: Riemannian gradient (I - zz^T) grad and the
// tangent-space Hessian Q^T (H - (z . grad) I) Q for a tangent basis Q.
inline LocalMinCheck verify_local_min_sphere(
    const VectorXd& z, const std::function<VectorXd(const VectorXd&)>& grad_fn,
    double eps, double tau, double fd_step = 1e-4) {
  const int n = static_cast<int>(z.size());
  if (n > kMaxHessianDim)
    throw unsupported_size("verify_local_min_sphere: dimension above Hessian cap");
  LocalMinCheck out;
  const VectorXd zu = z / z.norm();
  const VectorXd g = grad_fn(zu);
  out.grad_norm = (g - zu.dot(g) * zu).norm();
  MatrixXd h(n, n);
  VectorXd zp, zm;
  for (int j = 0; j < n; ++j) {
    const double hj = fd_step * (1.0 + std::abs(zu(j)));
    zp = zu;
    zm = zu;
    zp(j) += hj;
    zm(j) -= hj;
    h.col(j) = (grad_fn(zp) - grad_fn(zm)) / (2.0 * hj);
  }
  MatrixXd sym = 0.5 * (h + h.transpose()) - zu.dot(g) * MatrixXd::Identity(n, n);
  // tangent basis: householder Q columns 1..n-1
  Eigen::HouseholderQR<MatrixXd> qr(zu);
  MatrixXd full_q = qr.householderQ() * MatrixXd::Identity(n, n);
  MatrixXd tan_basis = full_q.rightCols(n - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(
      MatrixXd(tan_basis.transpose() * sym * tan_basis), Eigen::EigenvaluesOnly);
  out.min_eig = n > 1 ? es.eigenvalues()(0) : 0.0;
  out.ok = out.grad_norm <= eps && out.min_eig >= -tau;
  return out;
}

inline LocalMinCheck verify_local_min_sphere(const VectorXd& z, const Dataset& data,
                                             const LandscapeParams& p, double eps,
                                             double tau, int threads = 0) {
  return verify_local_min_sphere(
      z, [&](const VectorXd& v) { return objective_G(v, data, p, threads).gradient; },
      eps, tau);
}

// ---------------------------------------------------------------------------
// Minimization
// ---------------------------------------------------------------------------

struct CandidateDirection {
  VectorXd z;
  double objective = 0.0;
  double grad_norm = 0.0;
  double min_eig = 0.0;
  bool certified = false;
  int iterations = 0;
};

inline VectorXd random_unit_vector(int n, RngSeed seed) {
  GaussianRng rng(seed);
  VectorXd z(n);
  for (int j = 0; j < n; ++j) z(j) = rng.normal();
  return z / z.norm();
}

// Projected gradient descent on the unit sphere with step-halving line
// search from a uniform random unit start; stops when the tangential gradient
// norm reaches epsilon or at the iteration cap, then certifies with the
// sphere (eps, tau) check. An uncertified candidate keeps its flag false.
//
// The sphere constraint is what identifies directions: for d < n the
// unconstrained penalty pins ||W z|| only, leaving a whole manifold
// (z . w)^2 = const of equal-value minima with arbitrary orthogonal
// component; restricted to ||z|| = 1 the minimizers are the planted
// directions themselves.
inline CandidateDirection minimize_one(const Dataset& data, const LandscapeParams& p,
                                       RngSeed seed) {
  const int n = data.dim();
  VectorXd z = random_unit_vector(n, seed);
  double step = p.step_init;
  double value = objective_G_value(z, data, p, p.threads);
  int iter = 0;
  for (; iter < p.max_iterations; ++iter) {
    auto eval = objective_G(z, data, p, p.threads);
    value = eval.value;
    VectorXd rg = eval.gradient - z.dot(eval.gradient) * z;
    const double gn = rg.norm();
    if (gn <= p.epsilon) break;
    bool moved = false;
    while (step > 1e-16) {
      VectorXd zn = (z - step * rg).normalized();
      const double vn = objective_G_value(zn, data, p, p.threads);
      if (vn <= value - 1e-4 * step * gn * gn) {
        z = std::move(zn);
        value = vn;
        step = std::min(step * p.step_growth, 64.0);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // no descent direction at resolvable step size
  }
  auto check = verify_local_min_sphere(z, data, p, p.epsilon, p.tau, p.threads);
  CandidateDirection cand;
  cand.z = std::move(z);
  cand.objective = value;
  cand.grad_norm = check.grad_norm;
  cand.min_eig = check.min_eig;
  cand.certified = check.ok;
  cand.iterations = iter;
  return cand;
}

// Sign canonicalization: largest-magnitude coordinate positive.
inline void canonicalize_sign(VectorXd& z) {
  int arg = 0;
  for (int j = 1; j < z.size(); ++j)
    if (std::abs(z(j)) > std::abs(z(arg))) arg = j;
  if (z(arg) < 0) z = -z;
}

inline bool is_duplicate_direction(const VectorXd& a, const VectorXd& b, double cos_thr) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return c >= cos_thr;
}

// Repeated minimize_one over restarts with fresh data per restart; keeps
// certified candidates, deduplicated by |cos| >= dedup threshold, until d
// distinct directions are found.
inline std::vector<CandidateDirection> recover_all_one_by_one(
    const std::function<const Dataset&(int)>& data_for_restart,
    const LandscapeParams& p, int d, RngSeed seed) {
  if (d < 1) throw std::invalid_argument("recover_all_one_by_one: d must be >= 1");
  std::vector<CandidateDirection> kept;
  const int restarts = p.restarts_or_default(d);
  for (int r = 0; r < restarts; ++r) {
    const Dataset& data = data_for_restart(r);
    auto cand = minimize_one(data, p, derive_seed(seed, static_cast<std::uint64_t>(r)));
    if (!cand.certified) continue;
    canonicalize_sign(cand.z);
    bool dup = false;
    for (const auto& k : kept)
      if (is_duplicate_direction(cand.z, k.z, p.dedup_cos)) {
        dup = true;
        break;
      }
    if (dup) continue;
    kept.push_back(std::move(cand));
    if (static_cast<int>(kept.size()) == d) return kept;
  }
  throw coverage_failure("recover_all_one_by_one: found " + std::to_string(kept.size()) +
                             " of " + std::to_string(d) + " directions within restart budget",
                         static_cast<int>(kept.size()));
}

inline std::vector<CandidateDirection> recover_all_one_by_one(const Dataset& data,
                                                              const LandscapeParams& p,
                                                              int d, RngSeed seed) {
  return recover_all_one_by_one([&](int) -> const Dataset& { return data; }, p, d, seed);
}

// ---------------------------------------------------------------------------
// Assembly and scoring
// ---------------------------------------------------------------------------

// Stack candidate directions as columns of V (so V approximates the inverse
// of the scaled weight matrix), invert, and normalize rows; rows are the
// recovered weight directions up to sign and permutation.
inline MatrixXd assemble_and_invert(const std::vector<VectorXd>& candidates,
                                    double cond_cap = 1e6) {
  if (candidates.empty()) throw std::invalid_argument("assemble_and_invert: no candidates");
  const int n = static_cast<int>(candidates.front().size());
  const int d = static_cast<int>(candidates.size());
  if (d != n)
    throw std::invalid_argument("assemble_and_invert: requires d == n (square case)");
  MatrixXd v(n, d);
  for (int j = 0; j < d; ++j) v.col(j) = candidates[static_cast<std::size_t>(j)];
  Eigen::JacobiSVD<MatrixXd> svd(v);
  const double cond = svd.singularValues()(0) / svd.singularValues()(n - 1);
  if (!(cond <= cond_cap))
    throw inversion_failure("assemble_and_invert: candidate matrix condition " +
                                std::to_string(cond) + " above cap",
                            cond);
  MatrixXd w = v.inverse();
  for (int i = 0; i < d; ++i) w.row(i) /= w.row(i).norm();
  return w;
}

struct AlignmentScore {
  std::vector<int> matching;       // row i of estimate <-> row matching[i] of truth
  std::vector<double> abs_cos;     // per estimated row
  std::vector<double> angles_deg;  // arccos(|cos|) in degrees
  double max_angle_deg = 0.0;
  double mean_angle_deg = 0.0;
  double min_abs_cos = 0.0;
};

// Optimal sign/permutation-invariant match of estimated rows to true rows,
// maximizing total |cos| by exact assignment.
inline AlignmentScore align_and_score(const MatrixXd& estimate, const MatrixXd& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw std::invalid_argument("align_and_score: shape mismatch");
  const int d = static_cast<int>(estimate.rows());
  MatrixXd score(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const double c = estimate.row(i).dot(truth.row(j)) /
                       (estimate.row(i).norm() * truth.row(j).norm());
      score(i, j) = std::abs(c);
    }
  AlignmentScore out;
  out.matching = max_score_assignment(score);
  out.abs_cos.resize(static_cast<std::size_t>(d));
  out.angles_deg.resize(static_cast<std::size_t>(d));
  out.min_abs_cos = 1.0;
  double sum = 0.0;
  for (int i = 0; i < d; ++i) {
    const double c = std::min(1.0, score(i, out.matching[static_cast<std::size_t>(i)]));
    const double ang = std::acos(c) * 180.0 / 3.14159265358979323846;
    out.abs_cos[static_cast<std::size_t>(i)] = c;
    out.angles_deg[static_cast<std::size_t>(i)] = ang;
    out.max_angle_deg = std::max(out.max_angle_deg, ang);
    out.min_abs_cos = std::min(out.min_abs_cos, c);
    sum += ang;
  }
  out.mean_angle_deg = sum / d;
  return out;
}

// ---------------------------------------------------------------------------
// Simultaneous objective over the full weight matrix
// ---------------------------------------------------------------------------

namespace detail {

struct WMoments {
  double m0 = 0;                   // sum y
  double psi_a = 0;                // sum y (S_H^2 - Q_H)
  double psi_b = 0;                // sum y (a^T G a - sum_j a_j^2 G_jj)
  VectorXd ya2, ya4, ysh;          // per j: sum y a_j^2, sum y a_j^4, sum y (S_H - H2_j)
  MatrixXd u1, u3, w1;             // rows j: sum y a_j x, sum y a_j^3 x, sum y (S_H-H2_j) a_j x
  MatrixXd m2;                     // (j,k): sum y a_j a_k
  void init(int d, int n) {
    ya2 = VectorXd::Zero(d);
    ya4 = VectorXd::Zero(d);
    ysh = VectorXd::Zero(d);
    u1 = MatrixXd::Zero(d, n);
    u3 = MatrixXd::Zero(d, n);
    w1 = MatrixXd::Zero(d, n);
    m2 = MatrixXd::Zero(d, d);
  }
  void merge(const WMoments& o) {
    if (ya2.size() == 0) {
      *this = o;
      return;
    }
    if (o.ya2.size() == 0) return;
    m0 += o.m0;
    psi_a += o.psi_a;
    psi_b += o.psi_b;
    ya2 += o.ya2;
    ya4 += o.ya4;
    ysh += o.ysh;
    u1 += o.u1;
    u3 += o.u3;
    w1 += o.w1;
    m2 += o.m2;
  }
};

}  // namespace detail

struct MatrixObjectiveValue {
  double value = 0.0;
  MatrixXd gradient;
};

// Simultaneous objective
//   G(W) = sgn(u4) E[y sum_{j != k} psi(w_j, w_k, x)]
//          - gamma sgn(u4) E[y sum_j H4(w_j . x)]
//          + lambda sum_i (E[y H2(w_i . x)] - u2hat)^2
// with psi(v, w, x) = H2(v.x) H2(w.x) + (v.w)^2 - 2 (v.x)(w.x)(v.w).
// The psi constants are fixed by the cancellation requirement
// E[u(c) psi(v, w, x)] = sqrt(6) u4hat (v.w*)^2 (w.w*)^2  (no u0/u2 residue),
// which under normalized Hermite polynomials gives (+1, -2). Both correlation
// terms carry sgn(u4) so the population psi-term stays nonnegative and the
// quartic term attracts, whatever the sign of u4hat.
inline MatrixObjectiveValue objective_simultaneous(const MatrixXd& w, const Dataset& data,
                                                   const LandscapeParams& p,
                                                   int threads = 0) {
  const int d = static_cast<int>(w.rows());
  const int n = data.dim();
  if (w.cols() != n) throw std::invalid_argument("objective_simultaneous: shape mismatch");
  const double N = static_cast<double>(data.count());
  const MatrixXd gram = w * w.transpose();
  VectorXd norms2 = gram.diagonal();

  auto mom = reduce_blocks<detail::WMoments>(
      data.count(), threads,
      [&](detail::WMoments& acc, std::int64_t, std::int64_t lo, std::int64_t hi) {
        acc.init(d, n);
        VectorXd a(d), h2(d);
        for (std::int64_t i = lo; i < hi; ++i) {
          Eigen::Map<const VectorXd> x(data.X.data() + i * n, n);
          const double y = data.y(i);
          a.noalias() = w * x;
          double sh = 0.0, qh = 0.0;
          for (int j = 0; j < d; ++j) {
            h2(j) = (a(j) * a(j) - norms2(j)) / kSqrt2;
            sh += h2(j);
            qh += h2(j) * h2(j);
          }
          double quad = 0.0;  // a^T G a - sum_j a_j^2 G_jj
          for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
              if (j != k) quad += a(j) * gram(j, k) * a(k);
          acc.m0 += y;
          acc.psi_a += y * (sh * sh - qh);
          acc.psi_b += y * quad;
          for (int j = 0; j < d; ++j) {
            const double aj = a(j);
            acc.ya2(j) += y * aj * aj;
            acc.ya4(j) += y * aj * aj * aj * aj;
            acc.ysh(j) += y * (sh - h2(j));
            acc.u1.row(j) += (y * aj) * x.transpose();
            acc.u3.row(j) += (y * aj * aj * aj) * x.transpose();
            acc.w1.row(j) += (y * (sh - h2(j)) * aj) * x.transpose();
          }
          acc.m2.noalias() += y * a * a.transpose();
        }
      });

  const double lambda = p.lambda_or_default();
  const double mean_y = mom.m0 / N;
  double offdiag_f2 = 0.0;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k)
      if (j != k) offdiag_f2 += gram(j, k) * gram(j, k);

  MatrixObjectiveValue out;
  const double s4 = p.sign_u4();
  // value
  double e_psi = s4 * (mom.psi_a / N - 2.0 * mom.psi_b / N + offdiag_f2 * mean_y);
  double e_h4 = 0.0;
  VectorXd a2(d);
  for (int j = 0; j < d; ++j) {
    const double s2 = norms2(j);
    e_h4 += (mom.ya4(j) - 6.0 * s2 * mom.ya2(j) + 3.0 * s2 * s2 * mom.m0) / (kSqrt24 * N);
    a2(j) = (mom.ya2(j) - s2 * mom.m0) / (kSqrt2 * N);
  }
  double penalty = 0.0;
  for (int j = 0; j < d; ++j) penalty += (a2(j) - p.u2hat) * (a2(j) - p.u2hat);
  out.value = e_psi - p.gamma * s4 * e_h4 + lambda * penalty;

  // gradient
  out.gradient = MatrixXd::Zero(d, n);
  for (int j = 0; j < d; ++j) {
    const double s2 = norms2(j);
    // psi: H2-product part, d/dw_j H2_j = sqrt(2) (a_j x - w_j)
    VectorXd g = s4 * (2.0 * kSqrt2 / N) *
                 (mom.w1.row(j).transpose() - mom.ysh(j) * w.row(j).transpose());
    // psi: (w_j . w_k)^2 part (sample-independent, scaled by mean y)
    // and -2 (v.x)(w.x)(v.w) part
    for (int k = 0; k < d; ++k) {
      if (k == j) continue;
      g += s4 * 4.0 * mean_y * gram(j, k) * w.row(k).transpose();
      g -= s4 * (4.0 / N) * (gram(j, k) * mom.u1.row(k).transpose() +
                             mom.m2(j, k) * w.row(k).transpose());
    }
    // -gamma sgn(u4) H4 part
    VectorXd gh4 = (4.0 * mom.u3.row(j).transpose() - 12.0 * mom.ya2(j) * w.row(j).transpose() -
                    12.0 * s2 * mom.u1.row(j).transpose() + 12.0 * s2 * mom.m0 * w.row(j).transpose()) /
                   (kSqrt24 * N);
    g -= p.gamma * s4 * gh4;
    // lambda penalty part
    VectorXd ga2 = (2.0 * mom.u1.row(j).transpose() - 2.0 * mom.m0 * w.row(j).transpose()) /
                   (kSqrt2 * N);
    g += 2.0 * lambda * (a2(j) - p.u2hat) * ga2;
    out.gradient.row(j) = g.transpose();
  }
  if (!std::isfinite(out.value) || !out.gradient.allFinite())
    throw numeric_failure("objective_simultaneous: non-finite value or gradient", out.value);
  return out;
}

// Gradient descent over the full matrix with the same step-halving scheme.
inline MatrixXd minimize_simultaneous(const Dataset& data, const LandscapeParams& p, int d,
                                      RngSeed seed, int* iterations_out = nullptr) {
  const int n = data.dim();
  MatrixXd w(d, n);
  {
    GaussianRng rng(seed);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < n; ++j) w(i, j) = rng.normal();
      w.row(i) /= w.row(i).norm();
    }
  }
  double step = p.step_init;
  int iter = 0;
  auto eval = objective_simultaneous(w, data, p, p.threads);
  for (; iter < p.max_iterations; ++iter) {
    const double gn = eval.gradient.norm();
    if (gn <= p.epsilon) break;
    bool moved = false;
    while (step > 1e-16) {
      MatrixXd wn = w - step * eval.gradient;
      if (p.z_max > 0 && wn.norm() > p.z_max * std::sqrt(static_cast<double>(d))) {
        step *= 0.5;
        continue;
      }
      auto en = objective_simultaneous(wn, data, p, p.threads);
      if (en.value <= eval.value - 1e-4 * step * gn * gn) {
        w = std::move(wn);
        eval = std::move(en);
        step = std::min(step * p.step_growth, 64.0);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  if (iterations_out) *iterations_out = iter;
  return w;
}

// Interprets a simultaneous minimizer: rows of W^{-T}, normalized, estimate
// the planted directions up to sign and permutation.
inline MatrixXd simultaneous_directions(const MatrixXd& w) {
  if (w.rows() != w.cols())
    throw std::invalid_argument("simultaneous_directions: square W required");
  MatrixXd winv_t = w.inverse().transpose();
  for (int i = 0; i < winv_t.rows(); ++i) winv_t.row(i) /= winv_t.row(i).norm();
  return winv_t;
}

}  // namespace planted::landscape
