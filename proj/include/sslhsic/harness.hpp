#pragma once

#include "sslhsic/common.hpp"
#include "sslhsic/finite_world.hpp"
#include "sslhsic/hsic.hpp"
#include "sslhsic/kernel.hpp"
#include "sslhsic/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace sslhsic {

// ---------------------------------------------------------------------------
// Synthetic augmented dataset

struct WorldConfig {
  int n_classes = 10;
  int identities_per_class = 50;
  int input_dim = 32;
  double noise = 1.0;
  double class_scale = 1.0;     // std of class centres
  double identity_scale = 1.25; // std of anchors around their class centre
  double scale_jitter = 0.0;    // views scaled by 1 + U(-j, j)
  int flip_dims = 0;            // leading coordinates sign-flipped per view with prob 1/2
  std::uint64_t seed = 0;

  long n_identities() const { return static_cast<long>(n_classes) * identities_per_class; }

  void validate() const {
    require(n_classes >= 1, "world.n_classes must be positive");
    require(identities_per_class >= 1, "world.identities_per_class must be positive");
    require(n_identities() >= 2, "world needs at least two identities");
    require(input_dim >= 1, "world.input_dim must be positive");
    require(noise >= 0.0 && std::isfinite(noise), "world.noise must be nonnegative");
    require(class_scale >= 0.0 && identity_scale >= 0.0, "world scales must be nonnegative");
    require(scale_jitter >= 0.0 && scale_jitter < 1.0, "world.scale_jitter must lie in [0, 1)");
    require(flip_dims >= 0 && flip_dims <= input_dim, "world.flip_dims must lie in [0, input_dim]");
  }
};

struct SyntheticWorld {
  WorldConfig config;
  Matrix anchors;           // N x input_dim
  Matrix class_centers;     // C x input_dim
  std::vector<int> labels;  // class of each identity

  long size() const { return anchors.rows(); }
  int input_dim() const { return static_cast<int>(anchors.cols()); }
};

inline SyntheticWorld make_world(const WorldConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SyntheticWorld world;
  world.config = cfg;
  world.class_centers.resize(cfg.n_classes, cfg.input_dim);
  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int q = 0; q < cfg.input_dim; ++q) world.class_centers(c, q) = cfg.class_scale * rng.normal();
  }
  world.anchors.resize(cfg.n_identities(), cfg.input_dim);
  world.labels.resize(static_cast<std::size_t>(cfg.n_identities()));
  for (long i = 0; i < cfg.n_identities(); ++i) {
    const int c = static_cast<int>(i / cfg.identities_per_class);
    world.labels[static_cast<std::size_t>(i)] = c;
    for (int q = 0; q < cfg.input_dim; ++q) {
      world.anchors(i, q) = world.class_centers(c, q) + cfg.identity_scale * rng.normal();
    }
  }
  return world;
}

inline SyntheticWorld make_world(int n_classes, int identities_per_class, int input_dim, double noise, std::uint64_t seed) {
  WorldConfig cfg;
  cfg.n_classes = n_classes;
  cfg.identities_per_class = identities_per_class;
  cfg.input_dim = input_dim;
  cfg.noise = noise;
  cfg.seed = seed;
  return make_world(cfg);
}

/// One augmented view of identity i.
inline RowVector augment(const SyntheticWorld& world, long identity, Rng& rng) {
  const WorldConfig& cfg = world.config;
  RowVector v = world.anchors.row(identity);
  for (int q = 0; q < cfg.input_dim; ++q) v(q) += cfg.noise * rng.normal();
  if (cfg.scale_jitter > 0.0) v *= 1.0 + cfg.scale_jitter * rng.uniform(-1.0, 1.0);
  for (int q = 0; q < cfg.flip_dims; ++q) {
    if (rng.uniform() < 0.5) v(q) = -v(q);
  }
  return v;
}

/// B identities x M views of raw inputs; row i*M + p holds view p of identity i.
struct ViewBatch {
  Matrix inputs;
  std::vector<long> identity_indices;
  int B = 0;
  int M = 0;
  long N = 0;

  Eigen::Index row_of(int identity, int view) const { return static_cast<Eigen::Index>(identity) * M + view; }
};

/// Views for a fixed list of distinct identities.
inline ViewBatch make_view_batch(const SyntheticWorld& world, std::vector<long> identities, int M, Rng& rng) {
  require(M >= 1, "sample_batch: need at least one view");
  require(!identities.empty(), "sample_batch: empty identity list");
  ViewBatch batch;
  batch.B = static_cast<int>(identities.size());
  batch.M = M;
  batch.N = world.size();
  batch.inputs.resize(static_cast<Eigen::Index>(batch.B) * M, world.input_dim());
  for (int i = 0; i < batch.B; ++i) {
    const long id = identities[static_cast<std::size_t>(i)];
    require(id >= 0 && id < world.size(), "sample_batch: identity out of range");
    for (int p = 0; p < M; ++p) batch.inputs.row(batch.row_of(i, p)) = augment(world, id, rng);
  }
  batch.identity_indices = std::move(identities);
  return batch;
}

/// B identities uniformly without replacement, then M independent views each.
inline ViewBatch sample_batch(const SyntheticWorld& world, int B, int M, Rng& rng) {
  require(B >= 1, "sample_batch: B must be positive");
  require(static_cast<long>(B) <= world.size(), "sample_batch: B exceeds the number of identities");
  const auto chosen = rng.sample_without_replacement(static_cast<std::size_t>(world.size()), static_cast<std::size_t>(B));
  std::vector<long> ids(chosen.begin(), chosen.end());
  return make_view_batch(world, std::move(ids), M, rng);
}

inline nlohmann::json world_config_json(const WorldConfig& cfg) {
  return nlohmann::json{{"class_scale", cfg.class_scale},       {"flip_dims", cfg.flip_dims},
                        {"identities_per_class", cfg.identities_per_class},
                        {"identity_scale", cfg.identity_scale}, {"input_dim", cfg.input_dim},
                        {"n_classes", cfg.n_classes},           {"noise", cfg.noise},
                        {"scale_jitter", cfg.scale_jitter},     {"seed", cfg.seed}};
}

/// Debug dump: generator config plus the realised anchors and labels.
inline nlohmann::json world_snapshot(const SyntheticWorld& world) {
  nlohmann::json anchors = nlohmann::json::array();
  for (Eigen::Index r = 0; r < world.anchors.rows(); ++r) {
    anchors.push_back(std::vector<double>(world.anchors.row(r).begin(), world.anchors.row(r).end()));
  }
  return nlohmann::json{{"anchors", anchors}, {"config", world_config_json(world.config)}, {"labels", world.labels}};
}

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeConfig {
  int iterations = 500;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  double test_fraction = 0.2;
};

/// Multinomial logistic regression on standardised features, full-batch
/// gradient descent, held-out accuracy on a seeded 80/20 split.
inline double linear_probe(const Matrix& features, const std::vector<int>& labels, std::uint64_t split_seed,
                           const ProbeConfig& cfg = {}) {
  const Eigen::Index n = features.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n, "linear_probe: one label per row");
  require(features.allFinite(), "linear_probe: non-finite features");
  std::set<int> distinct(labels.begin(), labels.end());
  require(*distinct.begin() >= 0, "linear_probe: labels must be nonnegative");
  require(distinct.size() >= 2, "linear_probe: need at least two classes");
  const int classes = *distinct.rbegin() + 1;

  const auto n_test = static_cast<Eigen::Index>(std::llround(cfg.test_fraction * static_cast<double>(n)));
  require(n_test >= 1 && n_test < n, "linear_probe: too few rows for a train/test split");
  Rng rng(split_seed);
  const auto order = rng.permutation(static_cast<std::size_t>(n));
  const Eigen::Index n_train = n - n_test;

  Matrix x_train(n_train, features.cols()), x_test(n_test, features.cols());
  std::vector<int> y_train(static_cast<std::size_t>(n_train)), y_test(static_cast<std::size_t>(n_test));
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto src = static_cast<Eigen::Index>(order[static_cast<std::size_t>(k)]);
    if (k < n_train) {
      x_train.row(k) = features.row(src);
      y_train[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(src)];
    } else {
      x_test.row(k - n_train) = features.row(src);
      y_test[static_cast<std::size_t>(k - n_train)] = labels[static_cast<std::size_t>(src)];
    }
  }

  const RowVector mean = x_train.colwise().mean();
  RowVector sd = ((x_train.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index q = 0; q < sd.size(); ++q) {
    if (sd(q) < 1e-12) sd(q) = 1.0;
  }
  x_train = ((x_train.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  x_test = ((x_test.rowwise() - mean).array().rowwise() / sd.array()).matrix();

  Matrix onehot = Matrix::Zero(n_train, classes);
  for (Eigen::Index k = 0; k < n_train; ++k) onehot(k, y_train[static_cast<std::size_t>(k)]) = 1.0;

  Matrix w = Matrix::Zero(features.cols(), classes);
  RowVector b = RowVector::Zero(classes);
  for (int it = 0; it < cfg.iterations; ++it) {
    Matrix logits = (x_train * w).rowwise() + b;
    for (Eigen::Index k = 0; k < n_train; ++k) {
      const double peak = logits.row(k).maxCoeff();
      logits.row(k) = (logits.row(k).array() - peak).exp().matrix();
      logits.row(k) /= logits.row(k).sum();
    }
    const Matrix resid = (logits - onehot) / static_cast<double>(n_train);
    w -= cfg.learning_rate * (x_train.transpose() * resid + cfg.l2 * w);
    b -= cfg.learning_rate * resid.colwise().sum();
  }

  const Matrix scores = (x_test * w).rowwise() + b;
  Eigen::Index correct = 0;
  for (Eigen::Index k = 0; k < n_test; ++k) {
    Eigen::Index best = 0;
    scores.row(k).maxCoeff(&best);
    if (static_cast<int>(best) == y_test[static_cast<std::size_t>(k)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n_test);
}

/// Number of singular values above tol * largest.
inline int numerical_rank(const Matrix& m, double tol = 1e-6) {
  if (m.size() == 0) return 0;
  const Eigen::JacobiSVD<Matrix> svd(m);
  const Vector s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  return static_cast<int>((s.array() > tol * s(0)).count());
}

// ---------------------------------------------------------------------------
// Identity checks

struct IdentityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
};

/// (1 / (2 N^2)) sum_ij MMD^2(i, j) against (N / delta_l) HSIC(Z, Y), both by enumeration.
inline IdentityCheck mmd_identity_check(const FiniteWorld& world, const KernelSpec& spec, double label_delta = 1.0) {
  world.validate();
  require(label_delta > 0.0, "mmd_identity_check: delta_l must be positive");
  const long n = world.size();
  // Inner products of the per-identity mean embeddings.
  Matrix embed(n, n);
  for (long i = 0; i < n; ++i) {
    const auto& a = world.identities[static_cast<std::size_t>(i)];
    for (long j = 0; j <= i; ++j) {
      const auto& b = world.identities[static_cast<std::size_t>(j)];
      Matrix k(a.views.rows(), b.views.rows());
      for (Eigen::Index p = 0; p < k.rows(); ++p) {
        for (Eigen::Index q = 0; q < k.cols(); ++q) k(p, q) = kernel_eval(spec, a.views.row(p), b.views.row(q));
      }
      embed(i, j) = a.probs.dot(k * b.probs);
      embed(j, i) = embed(i, j);
    }
  }
  Matrix mmd(n, n);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) mmd(i, j) = embed(i, i) + embed(j, j) - 2.0 * embed(i, j);
  }
  IdentityCheck out;
  const double nn = static_cast<double>(n);
  out.lhs = tree_sum(mmd) / (2.0 * nn * nn);
  out.rhs = nn / label_delta * population_hsic_zy(world, spec, label_delta);
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

struct ClusteringCheck {
  double trace_form = 0.0;   // -(1/M) Tr(K H L H) + Tr(K) - NM
  double sum_form = 0.0;     // -(1/M) sum_i |sum_p z_i^p|^2 + sum |z|^2 - NM
  double squares_form = 0.0; // sum_i sum_p |z_i^p - mean_i|^2 - NM
  double gap = 0.0;          // largest pairwise difference
};

/// Linear kernels on Z and Y; rows of `features` are grouped by identity (row i*M + p).
inline ClusteringCheck clustering_identity_check(const Matrix& features, int B, int M) {
  require(B >= 1 && M >= 1, "clustering_identity_check: B and M must be positive");
  require(features.rows() == static_cast<Eigen::Index>(B) * M, "clustering_identity_check: row count must equal B*M");
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    if (std::abs(features.row(r).norm() - 1.0) > 1e-6) throw InvalidArgument("clustering_identity_check: rows must be unit norm");
  }
  if (features.colwise().mean().norm() > 1e-6) throw InvalidArgument("clustering_identity_check: features must be centered");

  const double bm = static_cast<double>(B) * M;
  const Matrix k = features * features.transpose();
  Matrix l = Matrix::Zero(k.rows(), k.cols());
  for (int i = 0; i < B; ++i) l.block(static_cast<Eigen::Index>(i) * M, static_cast<Eigen::Index>(i) * M, M, M).setOnes();

  ClusteringCheck out;
  const Matrix hkh = detail::double_center(k);
  out.trace_form = -tree_sum(Matrix(hkh.cwiseProduct(l))) / M + k.trace() - bm;

  double grouped = 0.0, norms = 0.0, squares = 0.0;
  for (int i = 0; i < B; ++i) {
    const auto rows = features.middleRows(static_cast<Eigen::Index>(i) * M, M);
    const RowVector total = rows.colwise().sum();
    const RowVector centre = total / M;
    grouped += total.squaredNorm();
    norms += rows.squaredNorm();
    squares += (rows.rowwise() - centre).squaredNorm();
  }
  out.sum_form = -grouped / M + norms - bm;
  out.squares_form = squares - bm;
  out.gap = std::max({std::abs(out.trace_form - out.sum_form), std::abs(out.sum_form - out.squares_form),
                      std::abs(out.trace_form - out.squares_form)});
  return out;
}

}  // namespace sslhsic
