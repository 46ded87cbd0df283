#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "planted/stats.hpp"

namespace planted {

enum class ActKind {
  SignThreshold,     // 1[a >= t], outputs {0,1}
  ReluThreshold,     // max(0, a - t)
  SigmoidThreshold,  // 1 / (1 + exp(-(a - t)))
  ExpRate,           // exp(rate * (a - t))
  ExpPlain,          // exp(a)
  CustomEven,        // even u(a) = u(-a); default min(a^2, clamp)
};

inline std::string act_kind_name(ActKind k) {
  switch (k) {
    case ActKind::SignThreshold: return "sign";
    case ActKind::ReluThreshold: return "relu";
    case ActKind::SigmoidThreshold: return "sigmoid";
    case ActKind::ExpRate: return "exp-rate";
    case ActKind::ExpPlain: return "exp";
    case ActKind::CustomEven: return "even-sq";
  }
  return "?";
}

inline ActKind act_kind_from_name(const std::string& s) {
  if (s == "sign") return ActKind::SignThreshold;
  if (s == "relu") return ActKind::ReluThreshold;
  if (s == "sigmoid") return ActKind::SigmoidThreshold;
  if (s == "exp-rate") return ActKind::ExpRate;
  if (s == "exp") return ActKind::ExpPlain;
  if (s == "even-sq") return ActKind::CustomEven;
  throw std::invalid_argument("unknown activation kind: " + s);
}

// A unit activation u_t. Immutable after construction and safe to share.
struct ActivationSpec {
  ActKind kind = ActKind::SignThreshold;
  double threshold = 0.0;  // t >= 0
  double rate = 1.0;       // exp-rate only
  double clamp = 25.0;     // custom-even default surrogate min(a^2, clamp)
  std::function<double(double)> custom;  // optional custom even activation

  static ActivationSpec sign(double t) { return make(ActKind::SignThreshold, t); }
  static ActivationSpec relu(double t) { return make(ActKind::ReluThreshold, t); }
  static ActivationSpec sigmoid(double t) { return make(ActKind::SigmoidThreshold, t); }
  static ActivationSpec exp_rate(double t, double rho) {
    ActivationSpec a = make(ActKind::ExpRate, t);
    if (!(rho > 0)) throw std::invalid_argument("exp-rate requires rate > 0");
    a.rate = rho;
    return a;
  }
  static ActivationSpec exp_plain() { return make(ActKind::ExpPlain, 0.0); }
  static ActivationSpec even_clamped_square(double clamp_at) {
    ActivationSpec a = make(ActKind::CustomEven, 0.0);
    a.clamp = clamp_at;
    return a;
  }
  static ActivationSpec custom_even(std::function<double(double)> u) {
    ActivationSpec a = make(ActKind::CustomEven, 0.0);
    a.custom = std::move(u);
    a.validate_even();
    return a;
  }

  double operator()(double a) const {
    switch (kind) {
      case ActKind::SignThreshold: return a >= threshold ? 1.0 : 0.0;
      case ActKind::ReluThreshold: return a > threshold ? a - threshold : 0.0;
      case ActKind::SigmoidThreshold: return 1.0 / (1.0 + std::exp(-(a - threshold)));
      case ActKind::ExpRate: return std::exp(rate * (a - threshold));
      case ActKind::ExpPlain: return std::exp(a);
      case ActKind::CustomEven:
        if (custom) return custom(a);
        return std::min(a * a, clamp);
    }
    return 0.0;
  }

  // Supremum over the real line for bounded kinds; NaN when unbounded (the
  // biased sampling oracle then requires an explicit user bound).
  double sup() const {
    switch (kind) {
      case ActKind::SignThreshold: return 1.0;
      case ActKind::SigmoidThreshold: return 1.0;
      case ActKind::CustomEven: return custom ? std::numeric_limits<double>::quiet_NaN() : clamp;
      default: return std::numeric_limits<double>::quiet_NaN();
    }
  }

  bool zero_below_threshold() const {
    return kind == ActKind::SignThreshold || kind == ActKind::ReluThreshold;
  }

  bool is_even() const { return kind == ActKind::CustomEven; }

  // Kink / jump locations; quadrature splits its segments here.
  std::vector<double> breakpoints() const {
    switch (kind) {
      case ActKind::SignThreshold:
      case ActKind::ReluThreshold: return {threshold};
      case ActKind::CustomEven:
        if (!custom && clamp > 0) {
          const double r = std::sqrt(clamp);
          return {-r, r};
        }
        return {};
      default: return {};
    }
  }

  // How far the integrand's effective support shifts right due to activation
  // growth (exp kinds tilt the Gaussian by `rate`).
  double growth_shift() const {
    if (kind == ActKind::ExpRate) return rate;
    if (kind == ActKind::ExpPlain) return 1.0;
    return 0.0;
  }

  void validate_even(double grid_max = 8.0, int grid_points = 64) const {
    if (kind != ActKind::CustomEven) return;
    for (int i = 0; i <= grid_points; ++i) {
      const double a = grid_max * i / grid_points;
      const double lhs = (*this)(a), rhs = (*this)(-a);
      if (std::abs(lhs - rhs) > 1e-12 * (1.0 + std::abs(lhs)))
        throw precondition_failure("custom-even activation is not even at a = " +
                                   std::to_string(a));
    }
  }

 private:
  static ActivationSpec make(ActKind k, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("activation threshold must be >= 0");
    ActivationSpec a;
    a.kind = k;
    a.threshold = t;
    return a;
  }
};

// Analytic tail bound rho(t, sigma) for E_{g~N(0,sigma^2)}[u_t(g)].
inline double tail_rho(const ActivationSpec& u, double t, double sigma) {
  if (!(sigma > 0)) throw std::domain_error("tail_rho: sigma must be positive");
  switch (u.kind) {
    case ActKind::SignThreshold:
    case ActKind::ReluThreshold:
      return sigma * kInvSqrt2Pi * std::exp(-t * t / (2.0 * sigma * sigma));
    case ActKind::SigmoidThreshold:
      return std::exp(-t + 0.5 * sigma * sigma);
    default:
      throw std::domain_error("tail_rho: unsupported activation kind");
  }
}

// Threshold making the activation tail ~ d^{-eta}; C is the scaling constant.
inline double choose_threshold(ActKind kind, int d, double eta, double scale_c = 2.0) {
  if (d < 2) throw std::invalid_argument("choose_threshold: d must be >= 2");
  if (!(eta >= 0)) throw std::invalid_argument("choose_threshold: eta must be >= 0");
  switch (kind) {
    case ActKind::SignThreshold:
    case ActKind::ReluThreshold:
      return scale_c * std::sqrt(eta * std::log(static_cast<double>(d)));
    case ActKind::SigmoidThreshold:
      return scale_c * eta * std::log(static_cast<double>(d));
    default:
      throw std::domain_error("choose_threshold: unsupported activation kind");
  }
}

}  // namespace planted
