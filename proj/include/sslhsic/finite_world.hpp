#pragma once

#include "sslhsic/batch.hpp"
#include "sslhsic/common.hpp"
#include "sslhsic/rng.hpp"

#include <cmath>
#include <vector>

namespace sslhsic {

/// One identity of an enumerable world: a finite list of view vectors with probabilities.
struct FiniteIdentity {
  Matrix views;  // V x Q
  Vector probs;  // V, sums to one
};

/// A world whose per-identity view distributions are explicit and finite, so
/// population expectations can be enumerated exactly. Identities are equally likely.
struct FiniteWorld {
  std::vector<FiniteIdentity> identities;

  long size() const { return static_cast<long>(identities.size()); }
  Eigen::Index dim() const { return identities.empty() ? 0 : identities.front().views.cols(); }

  void validate() const {
    require(identities.size() >= 1, "FiniteWorld: no identities");
    const Eigen::Index q = dim();
    for (const auto& id : identities) {
      require(id.views.rows() >= 1 && id.views.rows() == id.probs.size(), "FiniteWorld: views and probabilities disagree");
      require(id.views.cols() == q, "FiniteWorld: inconsistent view dimension");
      require((id.probs.array() >= 0.0).all(), "FiniteWorld: negative probability");
      require(std::abs(id.probs.sum() - 1.0) <= 1e-12, "FiniteWorld: probabilities must sum to 1");
    }
  }

  /// All views stacked, with the matching marginal weight p(i) p(view | i).
  void flatten(Matrix& points, Vector& weights, std::vector<long>& owner) const {
    Eigen::Index total = 0;
    for (const auto& id : identities) total += id.views.rows();
    points.resize(total, dim());
    weights.resize(total);
    owner.assign(static_cast<std::size_t>(total), 0);
    const double p_identity = 1.0 / static_cast<double>(size());
    Eigen::Index r = 0;
    for (long i = 0; i < size(); ++i) {
      const auto& id = identities[static_cast<std::size_t>(i)];
      for (Eigen::Index v = 0; v < id.views.rows(); ++v, ++r) {
        points.row(r) = id.views.row(v);
        weights(r) = p_identity * id.probs(v);
        owner[static_cast<std::size_t>(r)] = i;
      }
    }
  }
};

/// Random world: N identities, V unit-norm views each, Q dimensions.
/// Views of one identity scatter around a per-identity direction with the given spread.
inline FiniteWorld make_finite_world(long n_identities, int views_per_identity, int dim, double spread, Rng& rng) {
  require(n_identities >= 1 && views_per_identity >= 1 && dim >= 1, "make_finite_world: sizes must be positive");
  FiniteWorld world;
  world.identities.resize(static_cast<std::size_t>(n_identities));
  for (auto& id : world.identities) {
    Vector center(dim);
    for (int q = 0; q < dim; ++q) center(q) = rng.normal();
    id.views.resize(views_per_identity, dim);
    id.probs.resize(views_per_identity);
    for (int v = 0; v < views_per_identity; ++v) {
      for (int q = 0; q < dim; ++q) id.views(v, q) = center(q) + spread * rng.normal();
      id.views.row(v).normalize();
      id.probs(v) = 0.25 + rng.uniform();
    }
    id.probs /= id.probs.sum();
  }
  return world;
}

/// Index of the view drawn from a probability vector by inverse CDF.
inline Eigen::Index draw_view(const Vector& probs, Rng& rng) {
  const double u = rng.uniform();
  double running = 0.0;
  for (Eigen::Index v = 0; v < probs.size(); ++v) {
    running += probs(v);
    if (u < running) return v;
  }
  return probs.size() - 1;
}

/// Self-supervised sampling scheme: B identities without replacement, then M
/// views per identity drawn independently.
inline SslBatchFeatures sample_finite_batch(const FiniteWorld& world, int B, int M, Rng& rng) {
  require(B >= 1 && static_cast<long>(B) <= world.size(), "sample_finite_batch: batch larger than world");
  const auto chosen = rng.sample_without_replacement(static_cast<std::size_t>(world.size()), static_cast<std::size_t>(B));
  SslBatchFeatures batch;
  batch.B = B;
  batch.M = M;
  batch.N = world.size();
  batch.features.resize(static_cast<Eigen::Index>(B) * M, world.dim());
  for (int i = 0; i < B; ++i) {
    const auto& id = world.identities[chosen[static_cast<std::size_t>(i)]];
    for (int p = 0; p < M; ++p) batch.features.row(batch.row_of(i, p)) = id.views.row(draw_view(id.probs, rng));
  }
  return batch;
}

}  // namespace sslhsic
