#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

#include "planted/errors.hpp"
#include "planted/parallel.hpp"
#include "planted/rng.hpp"

namespace planted {

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kSqrt2 = 1.4142135623730950488;
inline constexpr double kSqrt24 = 4.8989794855663561964;

// ---------------------------------------------------------------------------
// Standard-normal analytics
// ---------------------------------------------------------------------------

inline double normal_pdf(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("normal_pdf: non-finite input");
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// cdf and ccdf are tied together so that cdf(x) + ccdf(x) == 1 exactly as
// computed: the tail side is evaluated through erfc, the other side as the
// complement.
inline double normal_ccdf(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("normal_ccdf: non-finite input");
  if (x >= 0.0) return 0.5 * std::erfc(x / kSqrt2);
  return 1.0 - 0.5 * std::erfc(-x / kSqrt2);
}

inline double normal_cdf(double x) {
  if (!std::isfinite(x)) throw std::invalid_argument("normal_cdf: non-finite input");
  if (x <= 0.0) return 0.5 * std::erfc(-x / kSqrt2);
  return 1.0 - 0.5 * std::erfc(x / kSqrt2);
}

namespace detail {

// Solve ccdf(y) = q for y >= 0, q in (0, 0.5]. Newton on the tail with a
// bisection safeguard; accuracy is bounded by the accuracy of erfc.
inline double upper_tail_inverse(double q) {
  if (q >= 0.5) return 0.0;
  double y;
  if (q > 0.02) {
    y = 0.0;
  } else {
    // Asymptotic start: ccdf(y) ~ pdf(y)/y.
    double t = std::sqrt(-2.0 * std::log(q));
    y = t;
    for (int i = 0; i < 2; ++i) {
      const double inner = -2.0 * (std::log(q) + std::log(y * 2.5066282746310002));
      if (inner > 0) y = std::sqrt(inner);
    }
  }
  double lo = 0.0, hi = 45.0;
  for (int it = 0; it < 200; ++it) {
    const double c = normal_ccdf(y);
    if (c > q) lo = std::max(lo, y); else hi = std::min(hi, y);
    const double pdf = normal_pdf(y);
    double step = pdf > 0.0 ? (c - q) / pdf : 0.0;
    double ynew = y + step;
    if (!(ynew > lo && ynew < hi)) ynew = 0.5 * (lo + hi);
    if (std::abs(ynew - y) <= 1e-15 * (1.0 + std::abs(y))) return ynew;
    y = ynew;
  }
  return y;
}

}  // namespace detail

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p outside (0,1)");
  if (p == 0.5) return 0.0;
  if (p < 0.5) return -detail::upper_tail_inverse(p);
  return detail::upper_tail_inverse(1.0 - p);
}

// ---------------------------------------------------------------------------
// Monte Carlo estimation
// ---------------------------------------------------------------------------

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample standard deviation / sqrt(count)
  std::int64_t count = 0;
};

// Streaming (sum, sumsq) accumulator; merging in a fixed order keeps parallel
// reductions deterministic.
class MeanAccumulator {
 public:
  void add(double v) {
    sum_ += v;
    sumsq_ += v * v;
    ++n_;
  }

  void merge(const MeanAccumulator& o) {
    sum_ += o.sum_;
    sumsq_ += o.sumsq_;
    n_ += o.n_;
  }

  std::int64_t count() const { return n_; }

  McEstimate estimate() const {
    McEstimate e;
    e.count = n_;
    if (n_ == 0) return e;
    e.mean = sum_ / static_cast<double>(n_);
    if (n_ >= 2) {
      const double var =
          std::max(0.0, (sumsq_ - static_cast<double>(n_) * e.mean * e.mean) /
                            static_cast<double>(n_ - 1));
      e.std_error = std::sqrt(var / static_cast<double>(n_));
    }
    return e;
  }

 private:
  double sum_ = 0.0;
  double sumsq_ = 0.0;
  std::int64_t n_ = 0;
};

inline McEstimate mc_mean(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mc_mean: empty value stream");
  MeanAccumulator acc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw numeric_failure("mc_mean: non-finite value at index " + std::to_string(i),
                            values[i]);
    acc.add(values[i]);
  }
  return acc.estimate();
}

// Deterministic sharded Monte Carlo mean of fn(rng) over `count` draws.
template <typename Fn>
McEstimate mc_run(std::int64_t count, RngSeed seed, int threads, Fn&& fn) {
  if (count < 1) throw std::invalid_argument("mc_run: count must be >= 1");
  auto acc = reduce_blocks<MeanAccumulator>(
      count, threads, [&](MeanAccumulator& a, std::int64_t block, std::int64_t lo, std::int64_t hi) {
        GaussianRng rng(derive_seed(seed, static_cast<std::uint64_t>(block)));
        for (std::int64_t i = lo; i < hi; ++i) a.add(fn(rng));
      });
  return acc.estimate();
}

// ---------------------------------------------------------------------------
// Truncated standard normal on [lo, hi]
// ---------------------------------------------------------------------------

// Inverse-CDF sampler. A 129-node table gives a warm start; one or two Newton
// polish steps bring each draw to full double accuracy, so draws are exact
// conditional samples up to erfc precision.
class TruncatedNormalSampler {
 public:
  TruncatedNormalSampler(double lo, double hi) : lo_(lo), hi_(hi) {
    if (!(std::isfinite(lo) && std::isfinite(hi)) || !(lo < hi))
      throw std::invalid_argument("TruncatedNormalSampler: bad interval");
    c_lo_ = normal_ccdf(lo);
    c_hi_ = normal_ccdf(hi);
    if (c_lo_ <= c_hi_ || c_lo_ - c_hi_ < 1e-300)
      throw std::invalid_argument("TruncatedNormalSampler: interval mass underflow");
    for (int i = 0; i <= kNodes; ++i) {
      const double u = static_cast<double>(i) / kNodes;
      table_[static_cast<std::size_t>(i)] = invert(c_lo_ + u * (c_hi_ - c_lo_));
    }
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }

  template <typename Rng>
  double draw(Rng& rng) const {
    const double u = rng.uniform01();
    const double target = c_lo_ + u * (c_hi_ - c_lo_);
    const double pos = u * kNodes;
    const int k = std::min(kNodes - 1, static_cast<int>(pos));
    const double frac = pos - k;
    double g = table_[static_cast<std::size_t>(k)] * (1.0 - frac) +
               table_[static_cast<std::size_t>(k + 1)] * frac;
    for (int it = 0; it < 2; ++it) {
      const double pdf = normal_pdf(g);
      if (pdf <= 0.0) break;
      g += (normal_ccdf(g) - target) / pdf;
      g = std::clamp(g, lo_, hi_);
    }
    return g;
  }

 private:
  // Solve ccdf(g) = c on [lo_, hi_] by safeguarded Newton.
  double invert(double c) const {
    double a = lo_, b = hi_, g = 0.5 * (lo_ + hi_);
    for (int it = 0; it < 100; ++it) {
      const double cc = normal_ccdf(g);
      if (cc > c) a = g; else b = g;
      const double pdf = normal_pdf(g);
      double gnew = pdf > 0.0 ? g + (cc - c) / pdf : 0.5 * (a + b);
      if (!(gnew > a && gnew < b)) gnew = 0.5 * (a + b);
      if (std::abs(gnew - g) <= 1e-15 * (1.0 + std::abs(g))) return gnew;
      g = gnew;
    }
    return g;
  }

  static constexpr int kNodes = 128;
  double lo_, hi_, c_lo_, c_hi_;
  std::array<double, kNodes + 1> table_{};
};

}  // namespace planted
