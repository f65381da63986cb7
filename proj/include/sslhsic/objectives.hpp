#pragma once

#include "sslhsic/batch.hpp"
#include "sslhsic/common.hpp"
#include "sslhsic/hsic.hpp"
#include "sslhsic/kernel.hpp"
#include "sslhsic/rff.hpp"
#include "sslhsic/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace sslhsic {

struct LossConfig {
  double gamma = 3.0;
  bool use_rff = false;
  int rff_dims = 512;
  double sqrt_eps = 1e-12;
  double kernel_entropy_weight = 0.0;

  void validate() const {
    require(std::isfinite(gamma) && gamma >= 0.0, "loss.gamma must be nonnegative");
    require(sqrt_eps > 0.0, "loss.sqrt_eps must be positive");
    require(rff_dims >= 1, "loss.rff_dims must be positive");
    require(kernel_entropy_weight >= 0.0, "loss.kernel_entropy_weight must be nonnegative");
  }
};

/// gamma * sqrt(max(h, 0) + eps): the smoothed regulariser on HSIC(Z, Z).
inline double sqrt_regularizer(double gamma, double hsic_zz, double eps) {
  return gamma * std::sqrt(std::max(hsic_zz, 0.0) + eps);
}

struct LossReport {
  double loss = 0.0;
  HsicReport hsic;
};

/// -HSIC(Z, Y) + gamma sqrt(HSIC(Z, Z)). With use_rff, two fresh bases are drawn
/// from `rng`; otherwise the exact estimators are used and `rng` is ignored.
inline LossReport ssl_hsic_loss_report(const SslBatchFeatures& batch, const KernelSpec& spec, const LossConfig& cfg, Rng* rng) {
  cfg.validate();
  LossReport out;
  if (cfg.use_rff) {
    require(rng != nullptr, "ssl_hsic_loss: random features need an rng");
    const std::uint64_t s1 = rng->next_u64();
    std::uint64_t s2 = rng->next_u64();
    if (s2 == s1) s2 = mix64(s2);
    const int q = static_cast<int>(batch.dim());
    out.hsic = estimate_rff(batch, sample_rff_basis(spec, q, cfg.rff_dims, s1), sample_rff_basis(spec, q, cfg.rff_dims, s2));
  } else {
    out.hsic = estimate_exact(batch, spec);
  }
  out.loss = -out.hsic.hsic_zy + sqrt_regularizer(cfg.gamma, out.hsic.hsic_zz, cfg.sqrt_eps);
  return out;
}

inline double ssl_hsic_loss(const SslBatchFeatures& batch, const KernelSpec& spec, const LossConfig& cfg, Rng* rng = nullptr) {
  return ssl_hsic_loss_report(batch, spec, cfg, rng).loss;
}

/// Numerically stable log(mean(exp(v))).
inline double log_mean_exp(const Eigen::Ref<const RowVector>& v) {
  const double peak = v.maxCoeff();
  return peak + std::log((v.array() - peak).exp().mean());
}

/// InfoNCE from a Gram matrix: the positive term averages distinct views of the
/// same identity; the log-mean-exp runs over every row as candidate.
inline double info_nce_from_gram(const Matrix& gram, int B, int M) {
  require(M >= 2, "info_nce_loss: need M >= 2");
  require(gram.rows() == static_cast<Eigen::Index>(B) * M && gram.cols() == gram.rows(), "info_nce_loss: Gram shape mismatch");
  Vector positive(B);
  for (int i = 0; i < B; ++i) {
    const Eigen::Index start = static_cast<Eigen::Index>(i) * M;
    const auto block = gram.block(start, start, M, M);
    positive(i) = block.sum() - block.trace();
  }
  const double pos_mean = tree_sum(positive) / (static_cast<double>(B) * M * (M - 1));
  Vector lme(gram.rows());
  for (Eigen::Index r = 0; r < gram.rows(); ++r) lme(r) = log_mean_exp(gram.row(r));
  return -pos_mean + tree_sum(lme) / static_cast<double>(gram.rows());
}

inline double info_nce_loss(const SslBatchFeatures& batch, const KernelSpec& spec) {
  require(batch.M >= 2, "info_nce_loss: need M >= 2");
  return info_nce_from_gram(gram_matrix(spec, batch.features).entries, batch.B, batch.M);
}

/// Per-row variance of k(z1, .) over all rows (population form), averaged over z1.
inline Vector kernel_row_variances(const Matrix& gram) {
  Vector out(gram.rows());
  for (Eigen::Index r = 0; r < gram.rows(); ++r) {
    const double mean = gram.row(r).mean();
    out(r) = (gram.row(r).array() - mean).square().mean();
  }
  return out;
}

inline double variance_penalty(const SslBatchFeatures& batch, const KernelSpec& spec) {
  require(batch.features.rows() >= 2, "variance_penalty: need at least two rows");
  const Vector v = kernel_row_variances(gram_matrix(spec, batch.features).entries);
  return std::max(tree_sum(v) / static_cast<double>(v.size()), 0.0);
}

/// InfoNCE minus its second-order expansion -HSIC(Z, Y) + 1/2 variance penalty.
inline double taylor_residual(const SslBatchFeatures& batch, const KernelSpec& spec) {
  return info_nce_loss(batch, spec) - (-hsic_zy_biased(batch, spec) + 0.5 * variance_penalty(batch, spec));
}

/// The largest gamma for which exp(x) >= 1 + x + gamma x^2 covers x >= min(-2, -2 k_max):
/// gamma = -(1 + x) / x^2 with x = min(-2, -2 k_max). Always in (0, 1/4].
inline double gamma_for_bound(double k_max) {
  require(k_max > 0.0 && std::isfinite(k_max), "gamma_for_bound: k_max must be positive");
  const double x = std::min(-2.0, -2.0 * k_max);
  return -(1.0 + x) / (x * x);
}

/// Left end of the range on which exp(x) >= 1 + x + alpha x^2 is claimed.
inline double exp_lemma_lower_limit(double alpha) {
  require(alpha > 0.0 && alpha <= 0.25, "exp lemma: alpha must lie in (0, 1/4]");
  return -(1.0 + std::sqrt(1.0 - 4.0 * alpha)) / (2.0 * alpha);
}

inline bool check_exp_lemma(double alpha, std::span<const double> x_grid) {
  const double lower = exp_lemma_lower_limit(alpha);
  for (double x : x_grid) {
    require(x >= lower - 1e-12, "check_exp_lemma: grid point below the lemma's range");
    if (std::exp(x) < 1.0 + x + alpha * x * x - 1e-12) return false;
  }
  return true;
}

struct BoundReport {
  double gamma_bound = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Compares -HSIC(Z, Y) + gamma HSIC(Z, Z) against
/// InfoNCE - E_Z (gamma Var)^2 / (1 + gamma Var) on one batch. Unit-norm rows
/// bound every supported kernel by 1, so gamma = gamma_for_bound(1).
inline BoundReport check_infonce_bound(const SslBatchFeatures& batch, const KernelSpec& spec) {
  batch.validate();
  const Matrix gram = gram_matrix(spec, batch.features).entries;
  const double k_max = std::max(1.0, gram.cwiseAbs().maxCoeff());
  BoundReport report;
  report.gamma_bound = gamma_for_bound(k_max);
  const double g = report.gamma_bound;
  report.lhs = -hsic_zy_biased(batch, spec) + g * hsic_zz_biased(batch, spec);
  const Vector var = kernel_row_variances(gram);
  const Vector correction = (g * var).array().square() / (1.0 + g * var.array());
  report.rhs = info_nce_from_gram(gram, batch.B, batch.M) - tree_sum(correction) / static_cast<double>(correction.size());
  report.holds = report.lhs <= report.rhs + 1e-9;
  return report;
}

namespace detail {

inline void require_distance_kernel(const KernelSpec& spec) {
  spec.validate();
  require(spec.kind == KernelKind::gaussian || spec.kind == KernelKind::imq,
          "kernel entropy objective needs a gaussian or imq kernel");
}

inline double log_sq_kernel_derivative(const KernelSpec& spec, double s) {
  const double p = spec.param;
  if (spec.kind == KernelKind::gaussian) return -s / (p * p) - std::log(4.0) - 4.0 * std::log(p);
  return 2.0 * std::log(p) - std::log(4.0) - 3.0 * std::log(p * p + s);
}

inline double log_sq_kernel_derivative_dparam(const KernelSpec& spec, double s) {
  const double p = spec.param;
  if (spec.kind == KernelKind::gaussian) return 2.0 * s / (p * p * p) - 4.0 / p;
  return 2.0 / p - 6.0 * p / (p * p + s);
}

template <typename Fn>
double mean_over_distinct_pairs(const Matrix& points, Fn&& fn) {
  const Eigen::Index n = points.rows();
  require(n >= 2, "kernel entropy objective: need at least two rows");
  const Matrix s = pairwise_sqdist(points);
  bool any_nonzero = false;
  Vector row_acc = Vector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) continue;
      if (s(i, j) > 0.0) any_nonzero = true;
      row_acc(j) += fn(s(i, j));
    }
  }
  if (!any_nonzero) throw NumericalError("kernel entropy objective: all pairwise distances are zero");
  return tree_sum(row_acc) / static_cast<double>(n * (n - 1));
}

}  // namespace detail

/// E over ordered pairs i != j of log |dk/ds|^2 at s = |z_i - z_j|^2.
inline double kernel_entropy_objective(const Matrix& points, const KernelSpec& spec) {
  detail::require_distance_kernel(spec);
  return detail::mean_over_distinct_pairs(points, [&](double s) { return detail::log_sq_kernel_derivative(spec, s); });
}

inline double kernel_entropy_objective(const SslBatchFeatures& batch, const KernelSpec& spec) {
  return kernel_entropy_objective(batch.features, spec);
}

/// Derivative of kernel_entropy_objective with respect to the kernel parameter.
inline double kernel_entropy_gradient(const Matrix& points, const KernelSpec& spec) {
  detail::require_distance_kernel(spec);
  return detail::mean_over_distinct_pairs(points, [&](double s) { return detail::log_sq_kernel_derivative_dparam(spec, s); });
}

}  // namespace sslhsic
