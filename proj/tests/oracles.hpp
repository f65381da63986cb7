#pragma once

// Independent reference computations shared by the tests.

#include "sslhsic/common.hpp"
#include "sslhsic/rng.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

using sslhsic::Matrix;
using sslhsic::Vector;

// log of int_0^inf exp(-x cosh t) cosh(nu t) dt, trapezoid in log space.
inline double log_bessel_k_quadrature(double nu, double x) {
  const double h = 0.005;
  auto f = [&](double t) {
    const double a = nu * t;
    const double log_cosh = a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
    return -x * std::cosh(t) + log_cosh;
  };
  std::vector<double> vals;
  double peak = -1e300;
  for (int i = 0;; ++i) {
    const double t = h * i;
    const double v = f(t);
    vals.push_back(v);
    peak = std::max(peak, v);
    if (v < peak - 80.0 && t > 1.0) break;
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < vals.size(); ++i) acc += (i == 0 ? 0.5 : 1.0) * std::exp(vals[i] - peak);
  return peak + std::log(acc * h);
}

inline Matrix centering(Eigen::Index n) {
  return Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
}

// Tr(K H L H) / (n - 1)^2 with H formed explicitly.
inline double dense_hsic(const Matrix& k, const Matrix& l) {
  const Matrix h = centering(k.rows());
  const double d = static_cast<double>(k.rows() - 1);
  return (k * h * l * h).trace() / (d * d);
}

inline Matrix unit_rows(Eigen::Index n, Eigen::Index q, sslhsic::Rng& rng) {
  Matrix z(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < q; ++j) z(i, j) = rng.normal();
    z.row(i).normalize();
  }
  return z;
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// Central finite difference of f at x along coordinate k.
template <typename Fn>
double central_difference(Fn&& f, std::vector<double> x, std::size_t k, double h) {
  const double x0 = x[k];
  x[k] = x0 + h;
  const double up = f(x);
  x[k] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

}  // namespace oracle
