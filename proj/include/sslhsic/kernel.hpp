#pragma once

#include "sslhsic/common.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>

namespace sslhsic {

enum class KernelKind { linear, gaussian, imq };

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::linear: return "linear";
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::imq: return "imq";
  }
  return "unknown";
}

inline std::optional<KernelKind> parse_kernel_kind(std::string_view name) {
  if (name == "linear") return KernelKind::linear;
  if (name == "gaussian") return KernelKind::gaussian;
  if (name == "imq") return KernelKind::imq;
  return std::nullopt;
}

/// Kernel family plus its scalar parameter: the Gaussian bandwidth sigma in
/// exp(-|a-b|^2 / (2 sigma^2)), or the IMQ bias c in c / sqrt(c^2 + |a-b|^2).
/// The parameter is ignored for the linear kernel.
struct KernelSpec {
  KernelKind kind = KernelKind::imq;
  double param = 1.0;

  static KernelSpec linear() { return {KernelKind::linear, 1.0}; }
  static KernelSpec gaussian(double sigma) { return {KernelKind::gaussian, sigma}; }
  static KernelSpec imq(double c) { return {KernelKind::imq, c}; }

  bool unit_diagonal() const { return kind != KernelKind::linear; }

  void validate() const {
    if (kind != KernelKind::linear) {
      require(std::isfinite(param) && param > 0.0,
              std::string(to_string(kind)) + " kernel parameter must be positive and finite");
    }
  }

  bool operator==(const KernelSpec&) const = default;
};

/// Kernel value as a function of the squared distance s (translation-invariant kinds only).
inline double kernel_from_sqdist(const KernelSpec& spec, double s) {
  switch (spec.kind) {
    case KernelKind::gaussian: return std::exp(-s / (2.0 * spec.param * spec.param));
    case KernelKind::imq: return spec.param / std::sqrt(spec.param * spec.param + s);
    case KernelKind::linear: break;
  }
  throw InvalidArgument("linear kernel is not a function of distance");
}

/// d k / d s for the translation-invariant kinds.
inline double kernel_sqdist_derivative(const KernelSpec& spec, double s) {
  switch (spec.kind) {
    case KernelKind::gaussian: {
      const double two_var = 2.0 * spec.param * spec.param;
      return -std::exp(-s / two_var) / two_var;
    }
    case KernelKind::imq: {
      const double c = spec.param;
      return -c / (2.0 * std::pow(c * c + s, 1.5));
    }
    case KernelKind::linear: break;
  }
  throw InvalidArgument("linear kernel is not a function of distance");
}

/// Squared distance as |a|^2 + |b|^2 - 2 a.b, clamped at zero.
/// Every term is a dot product with a fixed summation order, so the result is
/// symmetric in (a, b) and exactly zero when a == b.
inline double squared_distance(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double s = a.dot(a) + b.dot(b) - 2.0 * a.dot(b);
  return std::max(s, 0.0);
}

inline double kernel_eval(const KernelSpec& spec, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  spec.validate();
  require(a.size() == b.size(), "kernel_eval: dimension mismatch");
  if (!a.allFinite() || !b.allFinite()) throw InvalidArgument("kernel_eval: non-finite input");
  if (spec.kind == KernelKind::linear) return a.dot(b);
  return kernel_from_sqdist(spec, squared_distance(a, b));
}

/// Gram matrix over the rows of a data matrix. Holds both K (features) and L (labels).
struct GramMatrix {
  Matrix entries;
  KernelSpec spec;

  Eigen::Index size() const { return entries.rows(); }
};

/// Pairwise squared distances between rows, clamped at zero, exactly symmetric,
/// zero diagonal.
inline Matrix pairwise_sqdist(const Matrix& points) {
  const Eigen::Index n = points.rows();
  const Matrix dots = points * points.transpose();
  const Vector norms = dots.diagonal();
  Matrix s(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    s(j, j) = 0.0;
    for (Eigen::Index i = 0; i < j; ++i) {
      const double v = std::max(norms(i) + norms(j) - 2.0 * dots(i, j), 0.0);
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return s;
}

inline GramMatrix gram_matrix(const KernelSpec& spec, const Matrix& points) {
  spec.validate();
  require(points.rows() >= 1, "gram_matrix: need at least one row");
  if (!points.allFinite()) throw InvalidArgument("gram_matrix: non-finite rows");
  const Eigen::Index n = points.rows();
  GramMatrix gram{Matrix(n, n), spec};
  if (spec.kind == KernelKind::linear) {
    const Matrix dots = points * points.transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i <= j; ++i) {
        gram.entries(i, j) = dots(i, j);
        gram.entries(j, i) = dots(i, j);
      }
    }
    return gram;
  }
  gram.entries = pairwise_sqdist(points).unaryExpr([&spec](double s) { return kernel_from_sqdist(spec, s); });
  return gram;
}

/// The gap l(e_i, e_i) - l(e_i, e_j), i != j, for one-hot labels of the given dimension.
inline double delta_l(const KernelSpec& spec, int label_dim) {
  spec.validate();
  require(label_dim >= 1, "delta_l: label dimension must be positive");
  switch (spec.kind) {
    case KernelKind::linear: return 1.0;
    case KernelKind::gaussian:
    case KernelKind::imq: return 1.0 - kernel_from_sqdist(spec, 2.0);
  }
  return 0.0;
}

}  // namespace sslhsic
