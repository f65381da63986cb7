#pragma once

#include "sslhsic/common.hpp"

#include <cmath>
#include <string>

namespace sslhsic {

/// Encoder outputs for B identities x M views, stored as a (B*M) x Q matrix
/// whose row i*M + p holds view p of identity i. N is the number of
/// identities in the dataset the batch was drawn from.
struct SslBatchFeatures {
  Matrix features;
  int B = 0;
  int M = 0;
  long N = 0;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  Eigen::Index row_of(int identity, int view) const { return static_cast<Eigen::Index>(identity) * M + view; }

  /// Checks shape, B >= 2, M >= 2, N >= B and unit-norm rows (1e-6).
  void validate() const {
    require(B >= 2, "SslBatchFeatures: need at least two identities");
    require(M >= 2, "SslBatchFeatures: need at least two views per identity");
    require(N >= B, "SslBatchFeatures: dataset size must be at least the batch size");
    require(features.rows() == static_cast<Eigen::Index>(B) * M, "SslBatchFeatures: row count must equal B*M");
    require(features.cols() >= 1, "SslBatchFeatures: empty feature dimension");
    if (!features.allFinite()) throw InvalidArgument("SslBatchFeatures: non-finite features");
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
      const double norm = features.row(r).norm();
      if (std::abs(norm - 1.0) > 1e-6) {
        throw InvalidArgument("SslBatchFeatures: row " + std::to_string(r) + " is not unit norm");
      }
    }
  }

  static SslBatchFeatures make(Matrix features, int B, int M, long N) {
    SslBatchFeatures batch{std::move(features), B, M, N};
    batch.validate();
    return batch;
  }
};

/// Rescales every row to unit Euclidean norm.
inline Matrix normalize_rows(Matrix m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).norm();
    if (!(norm > 0.0)) throw NumericalError("normalize_rows: zero row cannot be normalized");
    m.row(r) /= norm;
  }
  return m;
}

}  // namespace sslhsic
