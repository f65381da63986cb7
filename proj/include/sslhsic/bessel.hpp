#pragma once

// Log-domain modified Bessel function of the second kind, K_nu(x).
//
// Orders needed by the IMQ spectral density are (Q - 1) / 2 for feature
// dimension Q, i.e. integers or half-integers up to a few thousand, where
// K_nu(x) overflows double precision for small x. Everything is carried as
// log K plus ratios K_{nu+1} / K_nu, which stay representable.

#include "sslhsic/common.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace sslhsic {

namespace detail {

// Value and ratio at the starting order of the upward recurrence.
struct BesselSeed {
  double log_k;     // log K_mu(x)
  double ratio;     // K_{mu+1}(x) / K_mu(x)
};

// Coefficients of 1/Gamma(1+z) = sum_k c_k z^k around z = 0.
inline constexpr std::array<double, 8> kInvGammaSeries = {
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
};

// gamma1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu), gamma2 = (1/G(1-mu) + 1/G(1+mu)) / 2,
// plus 1/G(1+mu) and 1/G(1-mu), for |mu| <= 1/2.
struct TemmeGammas {
  double gamma1;
  double gamma2;
  double inv_gamma_plus;
  double inv_gamma_minus;
};

inline TemmeGammas temme_gammas(double mu) {
  TemmeGammas g{};
  if (std::abs(mu) < 1e-3) {
    const double m2 = mu * mu;
    const auto& c = kInvGammaSeries;
    g.gamma1 = -(c[1] + m2 * (c[3] + m2 * (c[5] + m2 * c[7])));
    g.gamma2 = c[0] + m2 * (c[2] + m2 * (c[4] + m2 * c[6]));
    g.inv_gamma_plus = g.gamma2 - mu * g.gamma1;
    g.inv_gamma_minus = g.gamma2 + mu * g.gamma1;
    return g;
  }
  g.inv_gamma_plus = 1.0 / std::tgamma(1.0 + mu);
  g.inv_gamma_minus = 1.0 / std::tgamma(1.0 - mu);
  g.gamma1 = (g.inv_gamma_minus - g.inv_gamma_plus) / (2.0 * mu);
  g.gamma2 = 0.5 * (g.inv_gamma_minus + g.inv_gamma_plus);
  return g;
}

inline constexpr double kBesselEps = 1e-17;
inline constexpr int kBesselMaxIter = 100000;

// Temme's series for K_mu and K_{mu+1}, |mu| <= 1/2, 0 < x < 2.
inline BesselSeed temme_series(double mu, double x) {
  const double half_x = 0.5 * x;
  const double pi_mu = std::numbers::pi * mu;
  const double fact = std::abs(pi_mu) < kBesselEps ? 1.0 : pi_mu / std::sin(pi_mu);
  double d = -std::log(half_x);
  double e = mu * d;
  const double fact2 = std::abs(e) < kBesselEps ? 1.0 : std::sinh(e) / e;
  const TemmeGammas g = temme_gammas(mu);
  double ff = fact * (g.gamma1 * std::cosh(e) + g.gamma2 * fact2 * d);
  double sum = ff;
  e = std::exp(e);
  double p = 0.5 * e / g.inv_gamma_plus;
  double q = 0.5 / (e * g.inv_gamma_minus);
  double c = 1.0;
  d = half_x * half_x;
  double sum1 = p;
  const double mu2 = mu * mu;
  for (int i = 1; i <= kBesselMaxIter; ++i) {
    const double di = static_cast<double>(i);
    ff = (di * ff + p + q) / (di * di - mu2);
    c *= d / di;
    p /= di - mu;
    q /= di + mu;
    const double del = c * ff;
    sum += del;
    sum1 += c * (p - di * ff);
    if (std::abs(del) < std::abs(sum) * 1e-17) break;
  }
  const double k_mu = sum;
  const double k_mu1 = sum1 * 2.0 / x;
  return {std::log(k_mu), k_mu1 / k_mu};
}

// Steed's continued fraction (Thompson-Barnett) for K_mu and K_{mu+1}, x >= 2.
inline BesselSeed steed_continued_fraction(double mu, double x) {
  const double mu2 = mu * mu;
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu2;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 1; i <= kBesselMaxIter; ++i) {
    const double di = static_cast<double>(i);
    a -= 2.0 * di;
    c = -a * c / (di + 1.0);
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < 1e-17) break;
  }
  h = a1 * h;
  const double log_k_mu = 0.5 * std::log(std::numbers::pi / (2.0 * x)) - x - std::log(s);
  const double ratio = (mu + x + 0.5 - h) / x;
  return {log_k_mu, ratio};
}

inline bool is_half_integer(double order) {
  const double twice = 2.0 * order;
  return twice == std::floor(twice) && std::fmod(twice, 2.0) == 1.0;
}

// Sum of log ratios along the upward recurrence
//   K_{m+1} / K_m = K_{m-1} / K_m + 2 m / x,
// starting from ratio K_{mu+1}/K_mu and stepping `steps` times.
inline double climb(double log_k_mu, double ratio, double mu, double x, long steps) {
  double log_k = log_k_mu;
  double m = mu;
  for (long j = 0; j < steps; ++j) {
    log_k += std::log(ratio);
    m += 1.0;
    ratio = 1.0 / ratio + 2.0 * m / x;
  }
  return log_k;
}

}  // namespace detail

/// log K_order(x) for order >= 0 and x > 0.
///
/// Half-integer orders start from the closed forms K_{1/2}(x) = sqrt(pi/(2x)) e^{-x}
/// and K_{3/2} = K_{1/2} (1 + 1/x). Other orders reduce to |mu| <= 1/2 and use
/// Temme's series (x < 2) or Steed's continued fraction (x >= 2). The
/// recurrence upward in order is stable for K.
inline double log_bessel_k(double order, double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw InvalidArgument("log_bessel_k: x must be positive and finite");
  if (!(order >= 0.0) || !std::isfinite(order)) throw InvalidArgument("log_bessel_k: order must be nonnegative");
  if (detail::is_half_integer(order)) {
    const double log_k_half = 0.5 * std::log(std::numbers::pi / (2.0 * x)) - x;
    const long steps = static_cast<long>(order - 0.5);
    return detail::climb(log_k_half, 1.0 + 1.0 / x, 0.5, x, steps);
  }
  const long steps = static_cast<long>(std::floor(order + 0.5));
  const double mu = order - static_cast<double>(steps);
  const detail::BesselSeed seed = x < 2.0 ? detail::temme_series(mu, x) : detail::steed_continued_fraction(mu, x);
  return detail::climb(seed.log_k, seed.ratio, mu, x, steps);
}

}  // namespace sslhsic
