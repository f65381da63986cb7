#pragma once

// HSIC estimators under the self-supervised sampling scheme.
//
// Notation: a batch holds B identities with M views each, flattened to
// n = B*M rows. S_pos = sum_i sum_{p,l} k(z_i^p, z_i^l) runs over same-identity
// pairs including p == l; S_all = sum over all n^2 pairs.

#include "sslhsic/batch.hpp"
#include "sslhsic/common.hpp"
#include "sslhsic/finite_world.hpp"
#include "sslhsic/kernel.hpp"
#include "sslhsic/rff.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

namespace sslhsic {

enum class EstimatorMethod { exact, rff };

struct HsicReport {
  double hsic_zy = 0.0;
  double hsic_zz = 0.0;
  EstimatorMethod method = EstimatorMethod::exact;
  std::optional<int> rff_dims;
  std::vector<std::uint64_t> seeds;
  int B = 0;
  int M = 0;
};

namespace detail {

struct KernelSums {
  double positive = 0.0;  // S_pos
  double all = 0.0;       // S_all
};

inline KernelSums kernel_sums(const Matrix& gram, int B, int M) {
  Vector block_sums(B);
  for (int i = 0; i < B; ++i) {
    const Eigen::Index start = static_cast<Eigen::Index>(i) * M;
    block_sums(i) = gram.block(start, start, M, M).sum();
  }
  return {tree_sum(block_sums), tree_sum(gram)};
}

/// H K H for the centering matrix H, without forming H.
inline Matrix double_center(const Matrix& k) {
  const Vector row_means = k.rowwise().mean();
  const RowVector col_means = k.colwise().mean();
  const double grand = tree_sum(k) / static_cast<double>(k.size());
  Matrix c = k;
  c.colwise() -= row_means;
  c.rowwise() -= col_means;
  c.array() += grand;
  return c;
}

inline void require_pair(const SslBatchFeatures& batch) {
  require(batch.M >= 2, "estimator needs M >= 2 views per identity");
  require(batch.B >= 1, "estimator needs at least one identity");
  require(batch.features.rows() == static_cast<Eigen::Index>(batch.B) * batch.M, "batch shape mismatch");
}

}  // namespace detail

/// Tr(K H L H) / (n - 1)^2.
inline double hsic_biased_iid(const GramMatrix& k, const GramMatrix& l) {
  const Eigen::Index n = k.size();
  require(n >= 2, "hsic_biased_iid: need n >= 2");
  require(l.size() == n, "hsic_biased_iid: Gram matrices differ in size");
  const Matrix centered = detail::double_center(k.entries);
  const Matrix product = centered.cwiseProduct(l.entries.transpose());
  const double denom = static_cast<double>(n - 1);
  return tree_sum(product) / (denom * denom);
}

/// Unbiased HSIC(Z, Y) estimator for Delta l = N and k(z, z) = 1, with the
/// exact finite-N coefficients of the without-replacement scheme.
inline double hsic_zy_unbiased(const SslBatchFeatures& batch, const KernelSpec& spec) {
  require(spec.unit_diagonal(), "hsic_zy_unbiased: kernel must satisfy k(z, z) = 1");
  require(batch.B >= 2 && batch.M >= 2, "hsic_zy_unbiased: need B >= 2 and M >= 2");
  require(batch.N >= batch.B, "hsic_zy_unbiased: need N >= B");
  const GramMatrix gram = gram_matrix(spec, batch.features);
  const auto sums = detail::kernel_sums(gram.entries, batch.B, batch.M);
  const double B = batch.B, M = batch.M, N = static_cast<double>(batch.N);
  const double c_pos = M / (M - 1.0) + (N - 1.0) / (N * (B - 1.0)) - M / (N * (M - 1.0));
  const double c_all = B * (N - 1.0) / ((B - 1.0) * N);
  const double c_const = (N - 1.0) / (N * (M - 1.0));
  return c_pos * sums.positive / (B * M * M) - c_all * sums.all / (B * B * M * M) - c_const;
}

/// O(1/B)-biased HSIC(Z, Y) for |k| <= 1; the estimator used for training.
inline double hsic_zy_biased(const SslBatchFeatures& batch, const KernelSpec& spec) {
  detail::require_pair(batch);
  const GramMatrix gram = gram_matrix(spec, batch.features);
  const auto sums = detail::kernel_sums(gram.entries, batch.B, batch.M);
  const double B = batch.B, M = batch.M;
  return sums.positive / (B * M * (M - 1.0)) - sums.all / (B * B * M * M) - 1.0 / (M - 1.0);
}

/// Tr(K H K H) / (BM - 1)^2 over the flattened batch.
inline double hsic_zz_biased(const SslBatchFeatures& batch, const KernelSpec& spec) {
  const Eigen::Index n = batch.features.rows();
  require(n >= 2, "hsic_zz_biased: need at least two rows");
  const GramMatrix gram = gram_matrix(spec, batch.features);
  const Matrix centered = detail::double_center(gram.entries);
  const double denom = static_cast<double>(n - 1);
  return std::max(tree_sum(Matrix(centered.array().square())), 0.0) / (denom * denom);
}

/// Random-feature HSIC(Z, Y) in O(BMD): squared per-identity and global feature sums.
inline double hsic_zy_rff(const SslBatchFeatures& batch, const RffBasis& basis) {
  detail::require_pair(batch);
  require(batch.dim() == basis.feature_dim(), "hsic_zy_rff: basis dimension mismatch");
  const Matrix r = rff_features(basis, batch.features);
  const Eigen::Index d = r.cols();
  Matrix per_identity = Matrix::Zero(batch.B, d);
  for (int i = 0; i < batch.B; ++i) {
    for (int p = 0; p < batch.M; ++p) per_identity.row(i) += r.row(batch.row_of(i, p));
  }
  const RowVector total = per_identity.colwise().sum();
  const double B = batch.B, M = batch.M;
  return tree_sum(Matrix(per_identity.array().square())) / (B * M * (M - 1.0)) -
         total.squaredNorm() / (B * B * M * M) - 1.0 / (M - 1.0);
}

/// Random-feature HSIC(Z, Z) = |R^T H R~|_F^2 / (BM - 1)^2 with two independent bases.
inline double hsic_zz_rff(const SslBatchFeatures& batch, const RffBasis& first, const RffBasis& second) {
  require(first.seed != second.seed, "hsic_zz_rff: the two bases must be drawn independently");
  require(batch.dim() == first.feature_dim() && batch.dim() == second.feature_dim(), "hsic_zz_rff: basis dimension mismatch");
  const Eigen::Index n = batch.features.rows();
  require(n >= 2, "hsic_zz_rff: need at least two rows");
  Matrix r1 = rff_features(first, batch.features);
  Matrix r2 = rff_features(second, batch.features);
  r1.rowwise() -= r1.colwise().mean();
  r2.rowwise() -= r2.colwise().mean();
  const Matrix cross = r1.transpose() * r2;
  const double denom = static_cast<double>(n - 1);
  return cross.squaredNorm() / (denom * denom);
}

/// Exact estimators of both terms.
inline HsicReport estimate_exact(const SslBatchFeatures& batch, const KernelSpec& spec) {
  HsicReport report;
  report.hsic_zy = hsic_zy_biased(batch, spec);
  report.hsic_zz = hsic_zz_biased(batch, spec);
  report.method = EstimatorMethod::exact;
  report.B = batch.B;
  report.M = batch.M;
  return report;
}

/// Random-feature estimators; HSIC(Z, Y) reuses the first basis.
inline HsicReport estimate_rff(const SslBatchFeatures& batch, const RffBasis& first, const RffBasis& second) {
  HsicReport report;
  report.hsic_zy = hsic_zy_rff(batch, first);
  report.hsic_zz = hsic_zz_rff(batch, first, second);
  report.method = EstimatorMethod::rff;
  report.rff_dims = static_cast<int>(first.num_features());
  report.seeds = {first.seed, second.seed};
  report.B = batch.B;
  report.M = batch.M;
  return report;
}

// ---------------------------------------------------------------------------
// Population quantities over an enumerable world.

namespace detail {

// Calls fn(row_begin, kernel_block) for consecutive row blocks of the full
// Gram matrix of `points`, never holding more than `block` rows at once.
template <typename Fn>
void for_each_gram_block(const KernelSpec& spec, const Matrix& points, Fn&& fn, Eigen::Index block = 256) {
  const Eigen::Index n = points.rows();
  const Vector norms = points.rowwise().squaredNorm();
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index rows = std::min(block, n - start);
    Matrix k = points.middleRows(start, rows) * points.transpose();
    if (spec.kind != KernelKind::linear) {
      for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
          const double s = std::max(norms(start + i) + norms(j) - 2.0 * k(i, j), 0.0);
          k(i, j) = kernel_from_sqdist(spec, s);
        }
      }
    }
    fn(start, k);
  }
}

}  // namespace detail

/// Expectations of k over the positive-pair and the product distributions.
struct PopulationMoments {
  double positive = 0.0;  // E_{Z,Z' ~ pos} k(Z, Z')
  double product = 0.0;   // E_Z E_Z' k(Z, Z')
};

inline PopulationMoments population_moments(const FiniteWorld& world, const KernelSpec& spec) {
  world.validate();
  spec.validate();
  PopulationMoments m;
  const double inv_n = 1.0 / static_cast<double>(world.size());
  for (const auto& id : world.identities) {
    const Matrix k = gram_matrix(spec, id.views).entries;
    m.positive += inv_n * id.probs.dot(k * id.probs);
  }
  Matrix points;
  Vector weights;
  std::vector<long> owner;
  world.flatten(points, weights, owner);
  detail::for_each_gram_block(spec, points, [&](Eigen::Index start, const Matrix& k) {
    m.product += weights.segment(start, k.rows()).dot(k * weights);
  });
  return m;
}

/// HSIC(Z, Y) = (Delta l / N) (E_pos k - E k) by exact enumeration.
inline double population_hsic_zy(const FiniteWorld& world, const KernelSpec& spec, double delta_l) {
  const PopulationMoments m = population_moments(world, spec);
  return delta_l / static_cast<double>(world.size()) * (m.positive - m.product);
}

/// HSIC(Z, Z) = E k^2 - 2 E_Z (E_Z' k)^2 + (E k)^2 by exact enumeration of the marginal.
inline double population_hsic_zz(const FiniteWorld& world, const KernelSpec& spec) {
  world.validate();
  spec.validate();
  Matrix points;
  Vector weights;
  std::vector<long> owner;
  world.flatten(points, weights, owner);
  double second_moment = 0.0;
  double conditional_sq = 0.0;
  double mean = 0.0;
  detail::for_each_gram_block(spec, points, [&](Eigen::Index start, const Matrix& k) {
    const Vector w = weights.segment(start, k.rows());
    const Vector row_means = k * weights;
    second_moment += w.dot(k.array().square().matrix() * weights);
    conditional_sq += w.dot(row_means.array().square().matrix());
    mean += w.dot(row_means);
  });
  return second_moment - 2.0 * conditional_sq + mean * mean;
}

}  // namespace sslhsic
