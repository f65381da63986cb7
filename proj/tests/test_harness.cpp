#include "sslhsic/harness.hpp"
#include "sslhsic/verify.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace sslhsic;

namespace {

WorldConfig small_world(std::uint64_t seed) {
  WorldConfig cfg;
  cfg.n_classes = 4;
  cfg.identities_per_class = 10;
  cfg.input_dim = 6;
  cfg.seed = seed;
  return cfg;
}

// (1 / 2N^2) sum_ij MMD^2(i, j) by summing kernel values over view pairs.
double mmd_sum_loops(const FiniteWorld& w, const KernelSpec& spec) {
  const long n = w.size();
  auto mean_k = [&](long i, long j) {
    const auto& a = w.identities[static_cast<std::size_t>(i)];
    const auto& b = w.identities[static_cast<std::size_t>(j)];
    double s = 0.0;
    for (Eigen::Index p = 0; p < a.views.rows(); ++p) {
      for (Eigen::Index q = 0; q < b.views.rows(); ++q) s += a.probs(p) * b.probs(q) * kernel_eval(spec, a.views.row(p), b.views.row(q));
    }
    return s;
  };
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < n; ++j) total += mean_k(i, i) + mean_k(j, j) - 2.0 * mean_k(i, j);
  }
  return total / (2.0 * n * n);
}

}  // namespace

TEST(World, SameSeedSameWorld) {
  const SyntheticWorld a = make_world(small_world(3));
  const SyntheticWorld b = make_world(small_world(3));
  EXPECT_EQ(a.anchors, b.anchors);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.anchors, make_world(small_world(4)).anchors);
}

TEST(World, LabelsAreContiguousBlocks) {
  const SyntheticWorld w = make_world(small_world(1));
  ASSERT_EQ(w.size(), 40);
  for (long i = 0; i < w.size(); ++i) EXPECT_EQ(w.labels[static_cast<std::size_t>(i)], i / 10);
}

TEST(World, ClassesAreSeparated) {
  WorldConfig cfg = small_world(5);
  cfg.class_scale = 3.0;
  cfg.identity_scale = 0.5;
  const SyntheticWorld w = make_world(cfg);
  double within = 0.0, across = 0.0;
  long nw = 0, na = 0;
  for (long i = 0; i < w.size(); ++i) {
    for (long j = i + 1; j < w.size(); ++j) {
      const double d = (w.anchors.row(i) - w.anchors.row(j)).norm();
      if (w.labels[static_cast<std::size_t>(i)] == w.labels[static_cast<std::size_t>(j)]) {
        within += d;
        ++nw;
      } else {
        across += d;
        ++na;
      }
    }
  }
  EXPECT_GT(across / na, 2.0 * within / nw);
}

TEST(World, NoiselessViewsAreIdentical) {
  WorldConfig cfg = small_world(2);
  cfg.noise = 0.0;
  const SyntheticWorld w = make_world(cfg);
  Rng rng(9);
  const ViewBatch b = sample_batch(w, 5, 3, rng);
  for (int i = 0; i < 5; ++i) {
    for (int p = 0; p < 3; ++p) {
      EXPECT_EQ(b.inputs.row(b.row_of(i, p)), w.anchors.row(b.identity_indices[static_cast<std::size_t>(i)]));
    }
  }
}

TEST(World, FlipsOnlyTouchLeadingCoordinates) {
  WorldConfig cfg = small_world(2);
  cfg.noise = 0.0;
  cfg.flip_dims = 2;
  const SyntheticWorld w = make_world(cfg);
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    const RowVector v = augment(w, 7, rng);
    for (int q = 0; q < 2; ++q) EXPECT_DOUBLE_EQ(std::abs(v(q)), std::abs(w.anchors(7, q)));
    for (int q = 2; q < 6; ++q) EXPECT_EQ(v(q), w.anchors(7, q));
  }
}

TEST(World, RejectsBadConfigs) {
  WorldConfig cfg = small_world(0);
  cfg.noise = -1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_world(0);
  cfg.n_classes = 1;
  cfg.identities_per_class = 1;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_world(0);
  cfg.scale_jitter = 1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_world(0);
  cfg.flip_dims = 7;
  EXPECT_THROW(make_world(cfg), InvalidArgument);
}

TEST(Sampler, FullBatchIsAPermutation) {
  const SyntheticWorld w = make_world(small_world(1));
  Rng rng(2);
  const ViewBatch b = sample_batch(w, 40, 2, rng);
  std::vector<long> ids = b.identity_indices;
  std::sort(ids.begin(), ids.end());
  for (long i = 0; i < 40; ++i) EXPECT_EQ(ids[static_cast<std::size_t>(i)], i);
  EXPECT_EQ(b.N, 40);
  EXPECT_EQ(b.inputs.rows(), 80);
}

TEST(Sampler, DistinctIdentitiesAndBounds) {
  const SyntheticWorld w = make_world(small_world(1));
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const ViewBatch b = sample_batch(w, 12, 2, rng);
    EXPECT_EQ(std::set<long>(b.identity_indices.begin(), b.identity_indices.end()).size(), 12u);
  }
  EXPECT_THROW(sample_batch(w, 41, 2, rng), InvalidArgument);
  EXPECT_THROW(sample_batch(w, 4, 0, rng), InvalidArgument);
}

TEST(Sampler, SnapshotCarriesConfig) {
  const SyntheticWorld w = make_world(small_world(8));
  const auto j = world_snapshot(w);
  EXPECT_EQ(j.at("anchors").size(), 40u);
  EXPECT_EQ(j.at("config").at("seed"), 8);
  EXPECT_EQ(j.at("labels").size(), 40u);
}

TEST(Probe, SeparableFeaturesScorePerfectly) {
  Rng rng(4);
  const int n = 300;
  Matrix f(n, 3);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 3;
    for (int q = 0; q < 3; ++q) f(i, q) = (q == i % 3 ? 5.0 : 0.0) + 0.3 * rng.normal();
  }
  EXPECT_DOUBLE_EQ(linear_probe(f, labels, 1), 1.0);
}

TEST(Probe, ShuffledLabelsScoreAtChance) {
  Rng rng(5);
  const int n = 2000, classes = 4;
  Matrix f(n, 5);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(classes));
    for (int q = 0; q < 5; ++q) f(i, q) = rng.normal();
  }
  EXPECT_NEAR(linear_probe(f, labels, 2), 1.0 / classes, 0.1);
}

TEST(Probe, IdenticalFeaturesCannotBeatThePrior) {
  const int n = 500;
  const Matrix f = Matrix::Ones(n, 4);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % 5 == 0 ? 1 : 0;
  EXPECT_LE(linear_probe(f, labels, 3), 0.8 + 0.05);
}

TEST(Probe, RejectsBadInput) {
  const Matrix f = Matrix::Ones(10, 2);
  EXPECT_THROW(linear_probe(f, std::vector<int>(10, 0), 1), InvalidArgument);
  EXPECT_THROW(linear_probe(f, std::vector<int>(9, 0), 1), InvalidArgument);
}

TEST(NumericalRank, CountsDirections) {
  Rng rng(6);
  const Matrix a = oracle::unit_rows(20, 3, rng);
  const Matrix b = oracle::unit_rows(3, 8, rng);
  EXPECT_EQ(numerical_rank(a * b), 3);
  EXPECT_EQ(numerical_rank(Matrix::Zero(4, 4)), 0);
  EXPECT_EQ(numerical_rank(Matrix::Identity(5, 5)), 5);
}

TEST(MmdIdentity, IdenticalIdentitiesGiveZero) {
  FiniteWorld w;
  FiniteIdentity id;
  id.views = Matrix::Identity(2, 3);
  id.probs = Vector::Constant(2, 0.5);
  w.identities = {id, id, id};
  const IdentityCheck c = mmd_identity_check(w, KernelSpec::imq(1.0));
  EXPECT_NEAR(c.lhs, 0.0, 1e-15);
  EXPECT_NEAR(c.rhs, 0.0, 1e-15);
}

TEST(MmdIdentity, ThreeIdentitiesAgreeWithLoops) {
  FiniteWorld w;
  Matrix v1(2, 2), v2(1, 2), v3(3, 2);
  v1 << 1, 0, 0, 1;
  v2 << -1, 0;
  v3 << 0.6, 0.8, -0.8, 0.6, 0, -1;
  Vector p1(2), p2(1), p3(3);
  p1 << 0.3, 0.7;
  p2 << 1.0;
  p3 << 0.2, 0.5, 0.3;
  w.identities = {{v1, p1}, {v2, p2}, {v3, p3}};
  const KernelSpec spec = KernelSpec::gaussian(0.9);
  const IdentityCheck c = mmd_identity_check(w, spec);
  EXPECT_NEAR(c.lhs, mmd_sum_loops(w, spec), 1e-14);
  EXPECT_LT(c.gap, 1e-12);
}

TEST(MmdIdentity, RandomWorlds) {
  Rng rng(7);
  for (int t = 0; t < 10; ++t) {
    const FiniteWorld w = make_finite_world(5, 3, 4, 0.7, rng);
    for (auto spec : {KernelSpec::imq(1.0), KernelSpec::gaussian(1.2)}) {
      const IdentityCheck c = mmd_identity_check(w, spec);
      EXPECT_NEAR(c.lhs, mmd_sum_loops(w, spec), 1e-13);
      EXPECT_LT(c.gap, 1e-10);
    }
  }
  EXPECT_TRUE(check_mmd_identity(11).passed);
}

TEST(ClusteringIdentity, CollapsedIdentitiesHaveNoSpread) {
  // Two identities, each with both views at the same point; centered overall.
  Matrix z(4, 2);
  z << 1, 0, 1, 0, -1, 0, -1, 0;
  const ClusteringCheck c = clustering_identity_check(z, 2, 2);
  EXPECT_NEAR(c.squares_form + 4.0, 0.0, 1e-15);
  EXPECT_LT(c.gap, 1e-14);
}

TEST(ClusteringIdentity, SingleViewHasNoWithinSpread) {
  Rng rng(8);
  const Matrix z = antipodal_features(6, 1, 3, rng);
  const ClusteringCheck c = clustering_identity_check(z, 6, 1);
  EXPECT_NEAR(c.squares_form, -6.0, 1e-14);
  EXPECT_LT(c.gap, 1e-12);
}

TEST(ClusteringIdentity, RandomCenteredInputs) {
  Rng rng(9);
  for (int t = 0; t < 20; ++t) {
    const Matrix z = antipodal_features(6, 2, 4, rng);
    ASSERT_LT(z.colwise().mean().norm(), 1e-12);
    const ClusteringCheck c = clustering_identity_check(z, 6, 2);
    double squares = 0.0;
    for (int i = 0; i < 6; ++i) {
      const RowVector mean = (z.row(2 * i) + z.row(2 * i + 1)) / 2.0;
      squares += (z.row(2 * i) - mean).squaredNorm() + (z.row(2 * i + 1) - mean).squaredNorm();
    }
    EXPECT_NEAR(c.squares_form, squares - 12.0, 1e-12);
    EXPECT_LT(c.gap, 1e-10);
  }
}

TEST(ClusteringIdentity, RejectsBadInput) {
  Matrix z(4, 2);
  z << 2, 0, 1, 0, -1, 0, -1, 0;
  EXPECT_THROW(clustering_identity_check(z, 2, 2), InvalidArgument);
  z << 1, 0, 1, 0, 0, 1, 0, 1;
  EXPECT_THROW(clustering_identity_check(z, 2, 2), InvalidArgument);
  EXPECT_THROW(clustering_identity_check(z, 3, 2), InvalidArgument);
}
