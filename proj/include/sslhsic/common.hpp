#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

namespace sslhsic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr const char* kVersion = "0.3.0";

/// Raised when an argument violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot produce a finite, meaningful result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace detail {

// Blocks below this size are summed left to right; larger spans recurse.
inline constexpr std::size_t kPairwiseBlock = 128;

inline double pairwise_sum(std::span<const double> values) {
  if (values.size() <= kPairwiseBlock) {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace detail

/// Sum of all entries. Row sums are combined by a fixed tree so the result
/// only depends on the matrix shape, never on the caller.
inline double tree_sum(const Matrix& m) {
  Vector rows = m.rowwise().sum();
  return detail::pairwise_sum(std::span<const double>(rows.data(), static_cast<std::size_t>(rows.size())));
}

inline double tree_sum(const Vector& v) {
  return detail::pairwise_sum(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

}  // namespace sslhsic
