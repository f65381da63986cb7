#pragma once

#include "sslhsic/bessel.hpp"
#include "sslhsic/common.hpp"
#include "sslhsic/kernel.hpp"
#include "sslhsic/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

namespace sslhsic {

/// Tabulated amplitude distribution |omega| for IMQ random Fourier features
/// at c = 1, with density proportional to K_{(Q-1)/2}(s) s^{(Q-1)/2}.
struct AmplitudePmf {
  std::vector<double> grid;   // strictly increasing, grid[0] >= 1e-12
  std::vector<double> probs;  // sums to one
  std::vector<double> cdf;    // running sum of probs, last entry forced to 1
  int feature_dim = 0;

  /// Inverse-CDF draw given u in [0, 1).
  double quantile(double u) const {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(grid.size()) - 1));
    return grid[idx];
  }

  double mean() const {
    double acc = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) acc += grid[g] * probs[g];
    return acc;
  }
};

struct AmplitudeGrid {
  double lower = 1e-12;
  double upper = 100.0;
  int points = 10000;

  /// Upper limit grows with the feature dimension so the density tail stays on the grid.
  static AmplitudeGrid for_dimension(int feature_dim) {
    AmplitudeGrid g;
    if (feature_dim >= 4096) {
      g.upper = 200.0;
    } else if (feature_dim >= 2048) {
      g.upper = 150.0;
    } else if (feature_dim >= 1024) {
      g.upper = 120.0;
    }
    return g;
  }
};

inline AmplitudePmf imq_amplitude_pmf(int feature_dim, const AmplitudeGrid& grid) {
  require(feature_dim >= 1, "imq_amplitude_pmf: feature dimension must be positive");
  require(grid.points >= 2 && grid.lower >= 1e-12 && grid.upper > grid.lower, "imq_amplitude_pmf: invalid grid");
  AmplitudePmf pmf;
  pmf.feature_dim = feature_dim;
  const auto g = static_cast<std::size_t>(grid.points);
  pmf.grid.resize(g);
  const double step = (grid.upper - grid.lower) / static_cast<double>(g - 1);
  for (std::size_t i = 0; i < g; ++i) pmf.grid[i] = grid.lower + step * static_cast<double>(i);
  pmf.grid.back() = grid.upper;

  const double order = 0.5 * static_cast<double>(feature_dim - 1);
  std::vector<double> log_density(g);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g; ++i) {
    const double s = pmf.grid[i];
    log_density[i] = log_bessel_k(order, s) + order * std::log(s);
    peak = std::max(peak, log_density[i]);
  }
  if (!std::isfinite(peak)) throw NumericalError("imq_amplitude_pmf: density underflows on the whole grid");

  pmf.probs.resize(g);
  for (std::size_t i = 0; i < g; ++i) pmf.probs[i] = std::exp(log_density[i] - peak);
  const double total = detail::pairwise_sum(pmf.probs);
  for (double& p : pmf.probs) p /= total;

  pmf.cdf.resize(g);
  double running = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    running += pmf.probs[i];
    pmf.cdf[i] = running;
  }
  pmf.cdf.back() = 1.0;
  return pmf;
}

/// Process-wide cache of the c = 1 amplitude pmf, keyed by feature dimension.
inline std::shared_ptr<const AmplitudePmf> cached_imq_amplitude_pmf(int feature_dim) {
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const AmplitudePmf>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(feature_dim);
  if (it != cache.end()) return it->second;
  auto pmf = std::make_shared<const AmplitudePmf>(imq_amplitude_pmf(feature_dim, AmplitudeGrid::for_dimension(feature_dim)));
  cache.emplace(feature_dim, pmf);
  return pmf;
}

/// D frequencies and phase offsets realising R(z)_d = sqrt(2/D) cos(omega_d . z + b_d).
struct RffBasis {
  Matrix omegas;   // D x Q
  Vector offsets;  // D, each in [0, 2 pi)
  KernelSpec spec;
  std::uint64_t seed = 0;

  Eigen::Index num_features() const { return omegas.rows(); }
  Eigen::Index feature_dim() const { return omegas.cols(); }
};

/// Draws a basis from a fixed seed. Draw order: frequencies row by row, then offsets.
inline RffBasis sample_rff_basis(const KernelSpec& spec, int feature_dim, int num_features, std::uint64_t seed) {
  spec.validate();
  require(spec.kind != KernelKind::linear, "sample_rff_basis: the linear kernel has exact finite features");
  require(feature_dim >= 1 && num_features >= 1, "sample_rff_basis: dimensions must be positive");
  Rng rng(seed);
  RffBasis basis;
  basis.spec = spec;
  basis.seed = seed;
  basis.omegas.resize(num_features, feature_dim);
  basis.offsets.resize(num_features);

  if (spec.kind == KernelKind::gaussian) {
    const double inv_sigma = 1.0 / spec.param;
    for (Eigen::Index d = 0; d < num_features; ++d) {
      for (Eigen::Index q = 0; q < feature_dim; ++q) basis.omegas(d, q) = rng.normal() * inv_sigma;
    }
  } else {
    const auto pmf = cached_imq_amplitude_pmf(feature_dim);
    const double inv_c = 1.0 / spec.param;
    for (Eigen::Index d = 0; d < num_features; ++d) {
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (Eigen::Index q = 0; q < feature_dim; ++q) {
          basis.omegas(d, q) = rng.normal();
          norm2 += basis.omegas(d, q) * basis.omegas(d, q);
        }
      } while (norm2 == 0.0);
      const double amplitude = pmf->quantile(rng.uniform()) * inv_c;
      basis.omegas.row(d) *= amplitude / std::sqrt(norm2);
    }
  }
  for (Eigen::Index d = 0; d < num_features; ++d) basis.offsets(d) = 2.0 * std::numbers::pi * rng.uniform();
  return basis;
}

inline RffBasis sample_rff_basis(const KernelSpec& spec, int feature_dim, int num_features, Rng& rng) {
  return sample_rff_basis(spec, feature_dim, num_features, rng.next_u64());
}

/// n x D feature matrix; every entry lies in [-sqrt(2/D), sqrt(2/D)].
inline Matrix rff_features(const RffBasis& basis, const Matrix& points) {
  require(points.cols() == basis.feature_dim(), "rff_features: dimension mismatch");
  const double scale = std::sqrt(2.0 / static_cast<double>(basis.num_features()));
  Matrix phase = points * basis.omegas.transpose();
  phase.rowwise() += basis.offsets.transpose();
  return phase.array().cos().matrix() * scale;
}

}  // namespace sslhsic
