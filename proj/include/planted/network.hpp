#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "planted/activation.hpp"
#include "planted/polynomial.hpp"
#include "planted/rng.hpp"

namespace planted {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Ground-truth two-layer network f(x) = P(u(w_1 . x), ..., u(w_d . x)).
// Rows of W are unit norm, except for binary {0,1} support vectors used by
// the structural recovery experiments.
class PlantedNetwork {
 public:
  PlantedNetwork(MatrixXd weights, ActivationSpec act, SparsePolynomial poly,
                 RngSeed gen_seed = {}, bool binary_rows = false)
      : W_(std::move(weights)),
        act_(std::move(act)),
        poly_(std::move(poly)),
        seed_(gen_seed),
        binary_rows_(binary_rows) {
    d_ = static_cast<int>(W_.rows());
    n_ = static_cast<int>(W_.cols());
    if (d_ < 1 || n_ < 1) throw std::invalid_argument("PlantedNetwork: empty weights");
    if (!binary_rows_ && d_ > n_)
      throw std::invalid_argument("PlantedNetwork: requires d <= n");
    if (poly_.num_vars_upper_bound() > d_)
      throw std::invalid_argument("PlantedNetwork: polynomial uses more variables than units");
    for (int i = 0; i < d_; ++i) {
      if (binary_rows_) {
        for (int j = 0; j < n_; ++j) {
          const double v = W_(i, j);
          if (v != 0.0 && v != 1.0)
            throw std::invalid_argument("PlantedNetwork: binary rows must be 0/1");
        }
        if (W_.row(i).sum() < 1.0)
          throw std::invalid_argument("PlantedNetwork: empty binary support row");
      } else if (std::abs(W_.row(i).norm() - 1.0) > 1e-12) {
        throw std::invalid_argument("PlantedNetwork: row " + std::to_string(i) +
                                    " is not unit norm");
      }
    }
    Eigen::JacobiSVD<MatrixXd> svd(W_);
    spectral_norm_ = svd.singularValues()(0);
    const double smin = svd.singularValues()(d_ - 1);
    kappa_ = smin > 0 ? spectral_norm_ / smin : std::numeric_limits<double>::infinity();
  }

  int input_dim() const { return n_; }
  int units() const { return d_; }
  const MatrixXd& weights() const { return W_; }
  const ActivationSpec& activation() const { return act_; }
  const SparsePolynomial& polynomial() const { return poly_; }
  RngSeed gen_seed() const { return seed_; }
  bool binary_rows() const { return binary_rows_; }
  double kappa() const { return kappa_; }
  double spectral_norm() const { return spectral_norm_; }

  // Unit outputs X_i = u(w_i . x).
  void activations(const double* x, double* out) const {
    for (int i = 0; i < d_; ++i) {
      double a = 0.0;
      for (int j = 0; j < n_; ++j) a += W_(i, j) * x[j];
      out[i] = act_(a);
    }
  }

  double evaluate(const double* x, int len) const {
    check_len(len);
    std::vector<double> X(static_cast<std::size_t>(d_));
    activations(x, X.data());
    return poly_.eval(X);
  }
  double evaluate(const VectorXd& x) const { return evaluate(x.data(), static_cast<int>(x.size())); }

  double f_lin(const double* x, int len) const {
    check_len(len);
    std::vector<double> X(static_cast<std::size_t>(d_));
    activations(x, X.data());
    return poly_.eval_linear_part(X);
  }
  double f_lin(const VectorXd& x) const { return f_lin(x.data(), static_cast<int>(x.size())); }

  double f_uni(const double* x, int len) const {
    check_len(len);
    std::vector<double> X(static_cast<std::size_t>(d_));
    activations(x, X.data());
    return poly_.eval_univariate_part(X);
  }
  double f_uni(const VectorXd& x) const { return f_uni(x.data(), static_cast<int>(x.size())); }

 private:
  void check_len(int len) const {
    if (len != n_) throw std::invalid_argument("PlantedNetwork: input dimension mismatch");
  }

  MatrixXd W_;
  ActivationSpec act_;
  SparsePolynomial poly_;
  RngSeed seed_;
  bool binary_rows_ = false;
  int n_ = 0, d_ = 0;
  double kappa_ = 1.0, spectral_norm_ = 1.0;
};

// ---------------------------------------------------------------------------
// Weight generators
// ---------------------------------------------------------------------------

inline MatrixXd gaussian_matrix(int rows, int cols, RngSeed seed) {
  GaussianRng rng(seed);
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// d exactly orthonormal rows in R^n via QR of a Gaussian matrix.
inline MatrixXd orthonormal_rows(int n, int d, RngSeed seed) {
  if (d > n) throw std::invalid_argument("orthonormal_rows: d > n");
  MatrixXd g = gaussian_matrix(n, d, seed);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, d);
  MatrixXd w = q.transpose();
  for (int i = 0; i < d; ++i) w.row(i) /= w.row(i).norm();
  return w;
}

// Rows with condition number near `kappa`: explicit singular-value shaping
// followed by row normalization (which perturbs kappa slightly; the cached
// value on the network reports the realized one).
inline MatrixXd conditioned_rows(int n, int d, double kappa, RngSeed seed) {
  if (!(kappa >= 1.0)) throw std::invalid_argument("conditioned_rows: kappa must be >= 1");
  MatrixXd u = orthonormal_rows(d, d, derive_seed(seed, 1)).transpose();
  MatrixXd v = orthonormal_rows(n, d, derive_seed(seed, 2)).transpose();  // n x d
  VectorXd s(d);
  for (int i = 0; i < d; ++i)
    s(i) = 1.0 - (1.0 - 1.0 / kappa) * (d == 1 ? 0.0 : static_cast<double>(i) / (d - 1));
  MatrixXd w = u * s.asDiagonal() * v.transpose();
  for (int i = 0; i < d; ++i) w.row(i) /= w.row(i).norm();
  return w;
}

// Unit rows with pairwise angles inside [min_angle, max_angle] (radians),
// sampled by rejection; deterministic for a given seed.
inline MatrixXd angled_rows(int n, int d, double min_angle, double max_angle,
                            RngSeed seed, double kappa_max = 10.0,
                            int max_tries = 100000) {
  const double cmax = std::cos(min_angle), cmin = std::cos(max_angle);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    MatrixXd w = gaussian_matrix(d, n, derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    for (int i = 0; i < d; ++i) w.row(i) /= w.row(i).norm();
    bool ok = true;
    for (int i = 0; i < d && ok; ++i)
      for (int j = i + 1; j < d && ok; ++j) {
        const double c = w.row(i).dot(w.row(j));
        if (!(c <= cmax && c >= cmin)) ok = false;
      }
    if (!ok) continue;
    Eigen::JacobiSVD<MatrixXd> svd(w);
    const double kap = svd.singularValues()(0) / svd.singularValues()(d - 1);
    if (kap <= kappa_max) return w;
  }
  throw search_failure("angled_rows: no frame found within attempt budget");
}

// Binary support rows: w_i = sum_{j in T_i} e_j.
inline MatrixXd support_rows(int n, const std::vector<std::vector<int>>& supports) {
  MatrixXd w = MatrixXd::Zero(static_cast<int>(supports.size()), n);
  for (std::size_t i = 0; i < supports.size(); ++i)
    for (int j : supports[i]) {
      if (j < 0 || j >= n) throw std::invalid_argument("support_rows: index out of range");
      w(static_cast<int>(i), j) = 1.0;
    }
  return w;
}

// ---------------------------------------------------------------------------
// Text serialization (self-describing, full-precision decimals)
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::string serialize_network(const PlantedNetwork& net) {
  std::ostringstream os;
  os << "planted-network v1\n";
  os << "n " << net.input_dim() << "\n";
  os << "d " << net.units() << "\n";
  os << "seed " << net.gen_seed().value << "\n";
  os << "rows " << (net.binary_rows() ? "binary" : "unit") << "\n";
  const auto& a = net.activation();
  os << "activation " << act_kind_name(a.kind) << " t " << detail::fmt_full(a.threshold);
  if (a.kind == ActKind::ExpRate) os << " rate " << detail::fmt_full(a.rate);
  if (a.kind == ActKind::CustomEven) os << " clamp " << detail::fmt_full(a.clamp);
  os << "\n";
  os << "P c0 " << detail::fmt_full(net.polynomial().constant_term()) << "\n";
  for (const auto& [m, c] : net.polynomial().terms()) {
    os << "P term " << detail::fmt_full(c) << " ";
    for (std::size_t i = 0; i < m.factors.size(); ++i) {
      if (i) os << ",";
      os << m.factors[i].first << ":" << m.factors[i].second;
    }
    os << "\n";
  }
  os << "W\n";
  for (int i = 0; i < net.units(); ++i) {
    for (int j = 0; j < net.input_dim(); ++j) {
      if (j) os << " ";
      os << detail::fmt_full(net.weights()(i, j));
    }
    os << "\n";
  }
  os << "end\n";
  return os.str();
}

inline PlantedNetwork parse_network(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "planted-network v1")
    throw std::invalid_argument("parse_network: bad magic line");
  int n = -1, d = -1;
  RngSeed seed{};
  bool binary = false;
  ActivationSpec act;
  bool have_act = false;
  SparsePolynomial poly;
  MatrixXd w;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "n") ls >> n;
    else if (key == "d") ls >> d;
    else if (key == "seed") ls >> seed.value;
    else if (key == "rows") {
      std::string mode;
      ls >> mode;
      binary = (mode == "binary");
    } else if (key == "activation") {
      std::string kind;
      ls >> kind;
      double t = 0, rate = 1, clamp = 25;
      std::string field;
      while (ls >> field) {
        if (field == "t") ls >> t;
        else if (field == "rate") ls >> rate;
        else if (field == "clamp") ls >> clamp;
        else throw std::invalid_argument("parse_network: unknown activation field " + field);
      }
      const ActKind k = act_kind_from_name(kind);
      switch (k) {
        case ActKind::SignThreshold: act = ActivationSpec::sign(t); break;
        case ActKind::ReluThreshold: act = ActivationSpec::relu(t); break;
        case ActKind::SigmoidThreshold: act = ActivationSpec::sigmoid(t); break;
        case ActKind::ExpRate: act = ActivationSpec::exp_rate(t, rate); break;
        case ActKind::ExpPlain: act = ActivationSpec::exp_plain(); break;
        case ActKind::CustomEven: act = ActivationSpec::even_clamped_square(clamp); break;
      }
      have_act = true;
    } else if (key == "P") {
      std::string sub;
      ls >> sub;
      if (sub == "c0") {
        double c0;
        ls >> c0;
        poly.set_constant(c0);
      } else if (sub == "term") {
        double c;
        std::string mono;
        ls >> c >> mono;
        std::vector<std::pair<int, int>> factors;
        std::istringstream ms(mono);
        std::string part;
        while (std::getline(ms, part, ',')) {
          const auto colon = part.find(':');
          if (colon == std::string::npos)
            throw std::invalid_argument("parse_network: bad monomial " + mono);
          factors.emplace_back(std::stoi(part.substr(0, colon)),
                               std::stoi(part.substr(colon + 1)));
        }
        poly.add_term(Monomial(std::move(factors)), c);
      } else {
        throw std::invalid_argument("parse_network: bad P line");
      }
    } else if (key == "W") {
      if (n < 1 || d < 1) throw std::invalid_argument("parse_network: W before n/d");
      w.resize(d, n);
      for (int i = 0; i < d; ++i) {
        if (!std::getline(in, line)) throw std::invalid_argument("parse_network: truncated W");
        std::istringstream rs(line);
        for (int j = 0; j < n; ++j)
          if (!(rs >> w(i, j))) throw std::invalid_argument("parse_network: short W row");
      }
    } else if (key == "end") {
      break;
    } else {
      throw std::invalid_argument("parse_network: unknown key " + key);
    }
  }
  if (!have_act || w.size() == 0)
    throw std::invalid_argument("parse_network: missing activation or W");
  return PlantedNetwork(std::move(w), std::move(act), std::move(poly), seed, binary);
}

inline void save_network(const PlantedNetwork& net, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_network: cannot open " + path);
  f << serialize_network(net);
}

inline PlantedNetwork load_network(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_network: cannot open " + path);
  return parse_network(f);
}

}  // namespace planted
