#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "planted/errors.hpp"
#include "planted/network.hpp"
#include "planted/parallel.hpp"
#include "planted/stats.hpp"

namespace planted {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Fixed batch of labeled samples; read-only after creation.
struct Dataset {
  RowMatrixXd X;  // count x n
  VectorXd y;
  RngSeed seed{};

  std::int64_t count() const { return X.rows(); }
  int dim() const { return static_cast<int>(X.cols()); }
};

enum class OracleMode { Plain, Biased, Slab, Hyperplane };

// Seeded on-demand sample generator over a planted network. Plain mode draws
// x ~ N(0, I); slab / hyperplane modes draw exact conditional samples along a
// fixed direction z (truncated normal component along z, standard normal on
// the orthogonal complement); biased mode keeps a draw with probability
// f(x) / f_max. Immutable after construction; shards derive sub-seeds.
class SampleOracle {
 public:
  static SampleOracle plain(const PlantedNetwork& net, RngSeed seed,
                            double noise_std = 0.0) {
    return SampleOracle(net, seed, OracleMode::Plain, noise_std);
  }

  static SampleOracle biased(const PlantedNetwork& net, RngSeed seed,
                             std::optional<double> f_max_override = std::nullopt,
                             double noise_std = 0.0) {
    SampleOracle o(net, seed, OracleMode::Biased, noise_std);
    double fmax;
    if (f_max_override) {
      fmax = *f_max_override;
    } else {
      const double sup = net.activation().sup();
      if (!std::isfinite(sup))
        throw std::invalid_argument(
            "biased oracle: unbounded activation requires explicit f_max");
      const int smax = std::max(1, net.polynomial().max_total_degree());
      fmax = std::abs(net.polynomial().constant_term()) +
             net.polynomial().coeff_abs_sum() * std::pow(std::max(sup, 1.0), smax);
    }
    if (!(fmax > 0)) throw std::invalid_argument("biased oracle: f_max must be positive");
    o.f_max_ = fmax;
    return o;
  }

  static SampleOracle slab(const PlantedNetwork& net, RngSeed seed, VectorXd z,
                           double t_prime, double eps, double noise_std = 0.0) {
    SampleOracle o(net, seed, OracleMode::Slab, noise_std);
    if (!(eps > 0)) throw std::invalid_argument("slab oracle: eps must be positive");
    o.z_ = z / z.norm();
    o.trunc_.emplace(t_prime - eps, t_prime);
    return o;
  }

  static SampleOracle hyperplane(const PlantedNetwork& net, RngSeed seed, VectorXd z,
                                 double s, double noise_std = 0.0) {
    SampleOracle o(net, seed, OracleMode::Hyperplane, noise_std);
    o.z_ = z / z.norm();
    o.plane_s_ = s;
    return o;
  }

  const PlantedNetwork& network() const { return *net_; }
  OracleMode mode() const { return mode_; }
  RngSeed seed() const { return seed_; }
  double f_max() const { return f_max_; }

  SampleOracle reseeded(RngSeed seed) const {
    SampleOracle o = *this;
    o.seed_ = seed;
    return o;
  }

  // Deterministic sharded visit: fn(sample_index, x_ptr, y) per sample, called
  // from worker threads (one block at a time, block boundaries fixed).
  template <typename Fn>
  void visit(std::int64_t count, int threads, Fn&& fn) const {
    if (count < 1) throw std::invalid_argument("SampleOracle: count must be >= 1");
    const int n = net_->input_dim();
    for_each_block(count, threads, [&](std::int64_t block, std::int64_t lo, std::int64_t hi) {
      GaussianRng rng(derive_seed(seed_, static_cast<std::uint64_t>(block)));
      std::vector<double> x(static_cast<std::size_t>(n));
      for (std::int64_t i = lo; i < hi; ++i) {
        const double y = draw(rng, x.data());
        fn(i, x.data(), y);
      }
    });
  }

  Dataset sample(std::int64_t count, int threads = 0) const {
    Dataset ds;
    ds.seed = seed_;
    const int n = net_->input_dim();
    ds.X.resize(count, n);
    ds.y.resize(count);
    visit(count, threads, [&](std::int64_t i, const double* x, double y) {
      for (int j = 0; j < n; ++j) ds.X(i, j) = x[j];
      ds.y(i) = y;
    });
    return ds;
  }

 private:
  SampleOracle(const PlantedNetwork& net, RngSeed seed, OracleMode mode, double noise)
      : net_(&net), seed_(seed), mode_(mode), noise_std_(noise) {
    if (noise < 0) throw std::invalid_argument("SampleOracle: negative noise std");
  }

  // Draws one sample into x, returns the label.
  double draw(GaussianRng& rng, double* x) const {
    const int n = net_->input_dim();
    switch (mode_) {
      case OracleMode::Plain: {
        for (int j = 0; j < n; ++j) x[j] = rng.normal();
        break;
      }
      case OracleMode::Biased: {
        std::int64_t rejects = 0;
        for (;;) {
          for (int j = 0; j < n; ++j) x[j] = rng.normal();
          const double f = net_->evaluate(x, n);
          if (f < 0)
            throw unsupported_mode("biased oracle: f takes negative values");
          if (rng.uniform01() * f_max_ <= f) break;
          if (++rejects > kMaxConsecutiveRejects)
            throw progress_failure("biased oracle: acceptance rate below 1e-6");
        }
        break;
      }
      case OracleMode::Slab:
      case OracleMode::Hyperplane: {
        const double g = mode_ == OracleMode::Slab ? trunc_->draw(rng) : plane_s_;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) {
          x[j] = rng.normal();
          dot += x[j] * z_(j);
        }
        for (int j = 0; j < n; ++j) x[j] += (g - dot) * z_(j);
        break;
      }
    }
    double y = net_->evaluate(x, n);
    if (noise_std_ > 0) y += noise_std_ * rng.normal();
    return y;
  }

  static constexpr std::int64_t kMaxConsecutiveRejects = 10'000'000;

  const PlantedNetwork* net_;
  RngSeed seed_;
  OracleMode mode_;
  double noise_std_ = 0.0;
  double f_max_ = 0.0;
  VectorXd z_;
  std::optional<TruncatedNormalSampler> trunc_;
  double plane_s_ = 0.0;
};

// ---------------------------------------------------------------------------
// Dataset binary IO: header {magic, n, count, seed}, then little-endian
// records [n doubles x | 1 double y].
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'P', 'L', 'N', 'T', 'D', 'S', '0', '1'};

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_dataset: cannot open " + path);
  f.write(kDatasetMagic, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(ds.dim());
  const std::uint64_t count = static_cast<std::uint64_t>(ds.count());
  const std::uint64_t seed = ds.seed.value;
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(&count), 8);
  f.write(reinterpret_cast<const char*>(&seed), 8);
  std::vector<double> rec(n + 1);
  for (std::int64_t i = 0; i < ds.count(); ++i) {
    for (std::uint64_t j = 0; j < n; ++j) rec[j] = ds.X(i, static_cast<int>(j));
    rec[n] = ds.y(i);
    f.write(reinterpret_cast<const char*>(rec.data()),
            static_cast<std::streamsize>(sizeof(double) * rec.size()));
  }
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw std::runtime_error("load_dataset: bad magic");
  std::uint64_t n = 0, count = 0, seed = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  f.read(reinterpret_cast<char*>(&count), 8);
  f.read(reinterpret_cast<char*>(&seed), 8);
  if (!f || n == 0 || n > 1'000'000 || count > (std::uint64_t{1} << 40))
    throw std::runtime_error("load_dataset: bad header");
  Dataset ds;
  ds.seed = RngSeed{seed};
  ds.X.resize(static_cast<std::int64_t>(count), static_cast<int>(n));
  ds.y.resize(static_cast<std::int64_t>(count));
  std::vector<double> rec(n + 1);
  for (std::uint64_t i = 0; i < count; ++i) {
    f.read(reinterpret_cast<char*>(rec.data()),
           static_cast<std::streamsize>(sizeof(double) * rec.size()));
    if (!f) throw std::runtime_error("load_dataset: truncated records");
    for (std::uint64_t j = 0; j < n; ++j)
      ds.X(static_cast<std::int64_t>(i), static_cast<int>(j)) = rec[j];
    ds.y(static_cast<std::int64_t>(i)) = rec[n];
  }
  return ds;
}

}  // namespace planted
