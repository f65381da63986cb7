#pragma once

// Property suites behind `verify` and the acceptance binary. Each check
// returns what it measured next to the tolerance it was judged against.

#include "sslhsic/common.hpp"
#include "sslhsic/finite_world.hpp"
#include "sslhsic/harness.hpp"
#include "sslhsic/hsic.hpp"
#include "sslhsic/kernel.hpp"
#include "sslhsic/learner.hpp"
#include "sslhsic/objectives.hpp"
#include "sslhsic/rff.hpp"
#include "sslhsic/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sslhsic {

struct CheckResult {
  std::string name;
  bool passed = false;
  nlohmann::json measured = nlohmann::json::object();
  nlohmann::json tolerance = nlohmann::json::object();

  nlohmann::json to_json() const {
    return nlohmann::json{{"measured", measured}, {"name", name}, {"passed", passed}, {"tolerance", tolerance}};
  }
};

inline bool all_passed(const std::vector<CheckResult>& checks) {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names{"estimators", "rff", "bounds", "identities", "gradients", "all"};
  return names;
}

inline bool is_verify_suite(const std::string& name) {
  const auto& s = verify_suites();
  return std::find(s.begin(), s.end(), name) != s.end();
}

// ---------------------------------------------------------------------------
// Small statistics helpers

namespace stats {

/// Running mean and variance (Welford).
struct Running {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double delta = x - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (x - mean);
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double standard_error() const { return count > 0 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0; }
};

/// Least-squares slope of y on x.
inline double slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "slope: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  require(sxx > 0.0, "slope: x values are all equal");
  return sxy / sxx;
}

/// Slope of log|y| against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(std::abs(y[i])));
  }
  return slope(lx, ly);
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace stats

namespace suite_streams {
inline constexpr std::uint64_t unbiased = 101;
inline constexpr std::uint64_t bias = 102;
inline constexpr std::uint64_t rff = 103;
inline constexpr std::uint64_t bounds = 104;
inline constexpr std::uint64_t identities = 105;
inline constexpr std::uint64_t gradients = 106;
}  // namespace suite_streams

inline Matrix random_unit_rows(Eigen::Index n, Eigen::Index q, Rng& rng) {
  Matrix m(n, q);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < q; ++c) m(r, c) = rng.normal();
  }
  return normalize_rows(std::move(m));
}

// ---------------------------------------------------------------------------
// Estimators

struct UnbiasednessOptions {
  long batches = 100000;
  int feature_dim = 3;
  double spread = 0.7;
};

/// Monte-Carlo mean of the unbiased HSIC(Z, Y) estimator against exact enumeration.
inline CheckResult check_unbiasedness(long n_identities, int views, std::uint64_t seed, const UnbiasednessOptions& opt = {}) {
  Rng world_rng(derive_seed(seed, static_cast<std::uint64_t>(n_identities), suite_streams::unbiased));
  const FiniteWorld world = make_finite_world(n_identities, views, opt.feature_dim, opt.spread, world_rng);
  const KernelSpec spec = KernelSpec::imq(1.0);
  const int B = static_cast<int>(n_identities / 2);
  const double target = population_hsic_zy(world, spec, static_cast<double>(n_identities));
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n_identities) + 1000, suite_streams::unbiased));
  stats::Running acc;
  for (long r = 0; r < opt.batches; ++r) acc.add(hsic_zy_unbiased(sample_finite_batch(world, B, 2, rng), spec));
  CheckResult c;
  c.name = "unbiased_hsic_zy_N" + std::to_string(n_identities);
  const double se = acc.standard_error();
  const double z = se > 0.0 ? (acc.mean - target) / se : 0.0;
  c.passed = std::abs(acc.mean - target) <= 3.0 * se;
  c.measured = {{"B", B},          {"M", 2},           {"N", n_identities},      {"batches", opt.batches},
                {"mc_mean", acc.mean}, {"population", target}, {"standard_error", se}, {"views", views},
                {"z_score", z}};
  c.tolerance = {{"max_abs_z", 3.0}};
  return c;
}

struct BiasRateOptions {
  std::vector<int> batch_sizes = {4, 8, 16, 32, 64};
  long n_identities = 2048;
  int views = 2;
  int feature_dim = 4;
  double spread = 0.6;
  long zy_batches = 4000;
  long zz_batches = 6000;
  double slope_target = -1.0;
  double slope_tol = 0.3;
};

struct BiasRates {
  CheckResult zy;
  CheckResult zz;
};

/// Bias of the biased HSIC(Z, Y) and HSIC(Z, Z) estimators as B grows.
/// For HSIC(Z, Y) the bias is E[biased - unbiased], which has a far smaller
/// variance than E[biased] - population; HSIC(Z, Z) is compared with its
/// enumerated population value directly.
inline BiasRates check_bias_rates(std::uint64_t seed, const BiasRateOptions& opt = {}) {
  Rng world_rng(derive_seed(seed, 0, suite_streams::bias));
  const FiniteWorld world = make_finite_world(opt.n_identities, opt.views, opt.feature_dim, opt.spread, world_rng);
  const KernelSpec spec = KernelSpec::imq(1.0);
  const double pop_zz = population_hsic_zz(world, spec);
  const double pop_zy = population_hsic_zy(world, spec, static_cast<double>(opt.n_identities));
  std::vector<double> bs, zy_bias, zz_bias, zy_se, zz_se;
  for (std::size_t k = 0; k < opt.batch_sizes.size(); ++k) {
    const int B = opt.batch_sizes[k];
    Rng rng(derive_seed(seed, k + 1, suite_streams::bias));
    stats::Running zy, zz;
    const long reps = std::max(opt.zy_batches, opt.zz_batches);
    for (long r = 0; r < reps; ++r) {
      const SslBatchFeatures batch = sample_finite_batch(world, B, 2, rng);
      if (r < opt.zy_batches) zy.add(hsic_zy_biased(batch, spec) - hsic_zy_unbiased(batch, spec));
      if (r < opt.zz_batches) zz.add(hsic_zz_biased(batch, spec) - pop_zz);
    }
    bs.push_back(B);
    zy_bias.push_back(zy.mean);
    zz_bias.push_back(zz.mean);
    zy_se.push_back(zy.standard_error());
    zz_se.push_back(zz.standard_error());
  }
  auto finish = [&](const std::string& name, const std::vector<double>& bias, const std::vector<double>& se, double pop) {
    CheckResult c;
    c.name = name;
    const double s = stats::loglog_slope(bs, bias);
    c.passed = std::abs(s - opt.slope_target) <= opt.slope_tol;
    c.measured = {{"batch_sizes", bs}, {"bias", bias}, {"population", pop}, {"slope", s}, {"standard_error", se}};
    c.tolerance = {{"slope", opt.slope_target}, {"slope_tol", opt.slope_tol}};
    return c;
  };
  return {finish("bias_rate_hsic_zy", zy_bias, zy_se, pop_zy), finish("bias_rate_hsic_zz", zz_bias, zz_se, pop_zz)};
}

inline std::vector<CheckResult> run_estimators_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_unbiasedness(4, 2, seed));
  out.push_back(check_unbiasedness(6, 3, seed));
  out.push_back(check_unbiasedness(8, 2, seed));
  const BiasRates rates = check_bias_rates(seed);
  out.push_back(rates.zy);
  out.push_back(rates.zz);
  return out;
}

// ---------------------------------------------------------------------------
// Random features

/// Mean of per-feature kernel products over many single-feature draws against the exact kernel.
inline CheckResult check_rff_mean(const KernelSpec& spec, std::uint64_t seed, int draws = 200000, int pairs = 6, int dim = 8) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(spec.kind) + 1, suite_streams::rff));
  const Matrix points = random_unit_rows(2 * pairs, dim, rng);
  // Pull half of the second points towards their partners so a range of kernel values is covered.
  Matrix a = points.topRows(pairs), b = points.bottomRows(pairs);
  for (int p = 0; p < pairs; ++p) {
    const double t = static_cast<double>(p) / pairs;
    b.row(p) = (t * b.row(p) + (1.0 - t) * a.row(p)).normalized();
  }
  const RffBasis basis = sample_rff_basis(spec, dim, draws, rng.next_u64());
  const Matrix ra = rff_features(basis, a), rb = rff_features(basis, b);
  double worst_z = 0.0;
  std::vector<double> exact, mean, se;
  for (int p = 0; p < pairs; ++p) {
    stats::Running acc;
    for (int d = 0; d < draws; ++d) acc.add(static_cast<double>(draws) * ra(p, d) * rb(p, d));
    const double k = kernel_eval(spec, a.row(p).transpose(), b.row(p).transpose());
    exact.push_back(k);
    mean.push_back(acc.mean);
    se.push_back(acc.standard_error());
    worst_z = std::max(worst_z, std::abs(acc.mean - k) / acc.standard_error());
  }
  CheckResult c;
  c.name = "rff_unbiased_" + std::string(to_string(spec.kind));
  c.passed = worst_z <= 3.0;
  c.measured = {{"draws", draws}, {"empirical_mean", mean}, {"exact", exact}, {"max_abs_z", worst_z}, {"standard_error", se}};
  c.tolerance = {{"max_abs_z", 3.0}};
  return c;
}

/// Max |R R^T - K| over a point set as D grows; should fall like D^{-1/2}.
inline CheckResult check_rff_error_rate(std::uint64_t seed, std::vector<int> dims = {64, 128, 256, 512, 1024, 2048, 4096},
                                        int repeats = 20, int points = 24, int dim = 8) {
  Rng rng(derive_seed(seed, 10, suite_streams::rff));
  const KernelSpec spec = KernelSpec::imq(1.0);
  const Matrix z = random_unit_rows(points, dim, rng);
  const Matrix k = gram_matrix(spec, z).entries;
  std::vector<double> ds, errs;
  for (int d : dims) {
    double total = 0.0;
    for (int r = 0; r < repeats; ++r) {
      const Matrix f = rff_features(sample_rff_basis(spec, dim, d, rng.next_u64()), z);
      total += (f * f.transpose() - k).cwiseAbs().maxCoeff();
    }
    ds.push_back(d);
    errs.push_back(total / repeats);
  }
  CheckResult c;
  c.name = "rff_error_rate";
  const double s = stats::loglog_slope(ds, errs);
  c.passed = std::abs(s + 0.5) <= 0.15;
  c.measured = {{"dims", ds}, {"mean_max_error", errs}, {"repeats", repeats}, {"slope", s}};
  c.tolerance = {{"slope", -0.5}, {"slope_tol", 0.15}};
  return c;
}

/// K_0 by the integral representation int_0^inf exp(-x cosh t) dt (trapezoid rule).
inline double bessel_k0_quadrature(double x, double h = 0.02, double t_max = 40.0) {
  double total = 0.5 * std::exp(-x);
  for (double t = h; t <= t_max; t += h) {
    const double term = std::exp(-x * std::cosh(t));
    total += term;
    if (term == 0.0) break;
  }
  return total * h;
}

/// The Q = 1 amplitude pmf against K_0 from quadrature, normalised the same way.
inline CheckResult check_imq_density_q1() {
  const AmplitudeGrid grid = AmplitudeGrid::for_dimension(1);
  const AmplitudePmf pmf = imq_amplitude_pmf(1, grid);
  std::vector<double> oracle(pmf.grid.size());
  for (std::size_t i = 0; i < pmf.grid.size(); ++i) oracle[i] = bessel_k0_quadrature(pmf.grid[i]);
  const double total = detail::pairwise_sum(oracle);
  double worst = 0.0;
  std::size_t where = 0;
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const double rel = std::abs(pmf.probs[i] - oracle[i] / total) / (oracle[i] / total);
    if (rel > worst) {
      worst = rel;
      where = i;
    }
  }
  CheckResult c;
  c.name = "imq_density_q1";
  c.passed = worst <= 1e-10;
  c.measured = {{"grid_points", oracle.size()}, {"max_relative_error", worst}, {"worst_at", pmf.grid[where]}};
  c.tolerance = {{"max_relative_error", 1e-10}};
  return c;
}

inline CheckResult check_gamma_closed_form() {
  CheckResult c;
  c.name = "gamma_closed_form";
  const double g = gamma_for_bound(10.0);
  c.passed = g == 0.0475;
  c.measured = {{"gamma", g}, {"k_max", 10.0}};
  c.tolerance = {{"expected", 0.0475}, {"exact", true}};
  return c;
}

inline std::vector<CheckResult> run_rff_suite(std::uint64_t seed) {
  return {check_rff_mean(KernelSpec::imq(1.0), seed), check_rff_mean(KernelSpec::gaussian(1.0), seed),
          check_rff_error_rate(seed), check_imq_density_q1(), check_gamma_closed_form()};
}

// ---------------------------------------------------------------------------
// Bounds

inline CheckResult check_exp_lemma_sweep(double alpha, int points = 20001, double upper = 20.0) {
  const double lower = exp_lemma_lower_limit(alpha);
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = lower + (upper - lower) * i / (points - 1.0);
  CheckResult c;
  c.name = "exp_lemma_alpha_" + std::to_string(alpha).substr(0, 4);
  c.passed = check_exp_lemma(alpha, grid);
  c.measured = {{"alpha", alpha}, {"grid_points", points}, {"lower", lower}, {"upper", upper}};
  c.tolerance = {{"slack", 1e-12}};
  return c;
}

/// The InfoNCE bound on random unit-norm batches for the three kernels.
inline CheckResult check_infonce_bound_sweep(std::uint64_t seed, int batches = 200) {
  Rng rng(derive_seed(seed, 1, suite_streams::bounds));
  const KernelSpec kernels[] = {KernelSpec::imq(1.0), KernelSpec::gaussian(1.0), KernelSpec::linear()};
  int held = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (int r = 0; r < batches; ++r) {
    const int B = 2 + static_cast<int>(rng.below(7));
    const int M = 2 + static_cast<int>(rng.below(2));
    const int q = 2 + static_cast<int>(rng.below(6));
    const auto batch = SslBatchFeatures::make(random_unit_rows(static_cast<Eigen::Index>(B) * M, q, rng), B, M, 1000);
    const BoundReport rep = check_infonce_bound(batch, kernels[r % 3]);
    if (rep.holds) ++held;
    worst_margin = std::min(worst_margin, rep.rhs - rep.lhs);
  }
  CheckResult c;
  c.name = "infonce_bound";
  c.passed = held == batches;
  c.measured = {{"batches", batches}, {"held", held}, {"min_margin", worst_margin}};
  c.tolerance = {{"required_fraction", 1.0}};
  return c;
}

/// Taylor residual along z_t = normalize(c + t (z - c)) for a shrinking t.
inline CheckResult check_taylor_contraction(std::uint64_t seed, int batches = 5) {
  const std::vector<double> schedule{1.0, 0.5, 0.1, 0.01, 0.001};
  const KernelSpec spec = KernelSpec::imq(1.0);
  bool ok = true;
  double worst_final = 0.0;
  nlohmann::json series = nlohmann::json::array();
  for (int b = 0; b < batches; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b) + 2, suite_streams::bounds));
    const int B = 8, M = 2, q = 6;
    const Matrix z = random_unit_rows(B * M, q, rng);
    const RowVector centre = random_unit_rows(1, q, rng).row(0);
    std::vector<double> residuals;
    for (double t : schedule) {
      Matrix zt = (z * t).rowwise() + (1.0 - t) * centre;
      const auto batch = SslBatchFeatures::make(normalize_rows(std::move(zt)), B, M, 1000);
      residuals.push_back(std::abs(taylor_residual(batch, spec)));
    }
    for (std::size_t i = 1; i < residuals.size(); ++i) ok = ok && residuals[i] < residuals[i - 1];
    worst_final = std::max(worst_final, residuals.back());
    series.push_back(residuals);
  }
  CheckResult c;
  c.name = "taylor_contraction";
  c.passed = ok && worst_final < 1e-6;
  c.measured = {{"abs_residuals", series}, {"max_final", worst_final}, {"monotone", ok}, {"schedule", schedule}};
  c.tolerance = {{"final_below", 1e-6}, {"monotone", true}};
  return c;
}

inline std::vector<CheckResult> run_bounds_suite(std::uint64_t seed) {
  return {check_exp_lemma_sweep(0.05), check_exp_lemma_sweep(0.1), check_exp_lemma_sweep(0.25),
          check_infonce_bound_sweep(seed), check_taylor_contraction(seed)};
}

// ---------------------------------------------------------------------------
// Identities

inline CheckResult check_mmd_identity(std::uint64_t seed, int worlds = 20) {
  double worst = 0.0;
  for (int w = 0; w < worlds; ++w) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(w), suite_streams::identities));
    const long n = 2 + static_cast<long>(rng.below(6));
    const int v = 1 + static_cast<int>(rng.below(4));
    const FiniteWorld world = make_finite_world(n, v, 2 + static_cast<int>(rng.below(4)), 0.8, rng);
    const KernelSpec spec = w % 2 ? KernelSpec::gaussian(0.8) : KernelSpec::imq(1.0);
    worst = std::max(worst, mmd_identity_check(world, spec).gap);
  }
  CheckResult c;
  c.name = "mmd_identity";
  c.passed = worst < 1e-10;
  c.measured = {{"max_gap", worst}, {"worlds", worlds}};
  c.tolerance = {{"max_gap", 1e-10}};
  return c;
}

/// Centered unit rows: random unit vectors and their negations, shuffled.
inline Matrix antipodal_features(int B, int M, int q, Rng& rng) {
  const Eigen::Index n = static_cast<Eigen::Index>(B) * M;
  require(n % 2 == 0, "antipodal_features: need an even number of rows");
  const Matrix half = random_unit_rows(n / 2, q, rng);
  Matrix rows(n, q);
  rows.topRows(n / 2) = half;
  rows.bottomRows(n / 2) = -half;
  const auto order = rng.permutation(static_cast<std::size_t>(n));
  Matrix out(n, q);
  for (Eigen::Index r = 0; r < n; ++r) out.row(r) = rows.row(static_cast<Eigen::Index>(order[static_cast<std::size_t>(r)]));
  return out;
}

inline CheckResult check_clustering_identity(std::uint64_t seed, int inputs = 20) {
  double worst = 0.0;
  for (int k = 0; k < inputs; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k) + 500, suite_streams::identities));
    const int B = 2 + static_cast<int>(rng.below(6)) * 2;
    const int M = 1 + static_cast<int>(rng.below(3));
    worst = std::max(worst, clustering_identity_check(antipodal_features(B, M, 3 + static_cast<int>(rng.below(5)), rng), B, M).gap);
  }
  CheckResult c;
  c.name = "clustering_identity";
  c.passed = worst < 1e-10;
  c.measured = {{"inputs", inputs}, {"max_gap", worst}};
  c.tolerance = {{"max_gap", 1e-10}};
  return c;
}

inline std::vector<CheckResult> run_identities_suite(std::uint64_t seed) {
  return {check_mmd_identity(seed), check_clustering_identity(seed)};
}

// ---------------------------------------------------------------------------
// Gradients

struct GradientCheckOptions {
  int networks = 5;
  int B = 4;
  int M = 2;
  int input_dim = 6;
  int width = 8;
  int out_dim = 8;
  int rff_dims = 64;
  double step = 1e-5;
  double rtol = 1e-4;
  double atol = 1e-7;
};

enum class GradientCase { ssl_hsic_exact, ssl_hsic_rff, infonce };

inline std::string_view to_string(GradientCase g) {
  switch (g) {
    case GradientCase::ssl_hsic_exact:
      return "ssl_hsic_exact";
    case GradientCase::ssl_hsic_rff:
      return "ssl_hsic_rff";
    case GradientCase::infonce:
      return "infonce";
  }
  return "?";
}

/// Analytic gradients against central differences on small random networks.
inline CheckResult check_gradients(GradientCase which, std::uint64_t seed, const GradientCheckOptions& opt = {}) {
  TrainConfig cfg;
  cfg.batch_size = opt.B;
  cfg.views = opt.M;
  cfg.network.encoder_widths = {opt.width};
  cfg.network.projector_hidden = opt.width;
  cfg.network.projector_out = opt.out_dim;
  cfg.loss.use_rff = which == GradientCase::ssl_hsic_rff;
  cfg.loss.rff_dims = opt.rff_dims;
  cfg.loss.kernel_entropy_weight = 0.0;
  cfg.objective = which == GradientCase::infonce ? Objective::infonce : Objective::ssl_hsic;

  double worst = 0.0, worst_abs = 0.0, largest = 0.0;
  std::size_t params = 0;
  bool ok = true;
  for (int net = 0; net < opt.networks; ++net) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(net) * 8 + static_cast<std::uint64_t>(which), suite_streams::gradients));
    NetworkParams p = init_network(cfg.network, opt.input_dim, false, 1.0, rng);
    // Zero biases put rows whose encoder output is all zero exactly on a ReLU
    // kink, where central differences see the mean of the one-sided slopes.
    for (Mlp* mlp : {&p.encoder, &p.projector}) {
      for (Dense& d : mlp->layers) {
        for (Eigen::Index i = 0; i < d.bias.size(); ++i) d.bias.data()[i] = 0.1 * rng.normal();
      }
    }
    params = p.num_weights();
    ViewBatch batch;
    batch.B = opt.B;
    batch.M = opt.M;
    batch.N = 100;
    batch.inputs.resize(static_cast<Eigen::Index>(opt.B) * opt.M, opt.input_dim);
    for (Eigen::Index r = 0; r < batch.inputs.rows(); ++r) {
      for (Eigen::Index q = 0; q < batch.inputs.cols(); ++q) batch.inputs(r, q) = rng.normal();
    }
    std::optional<RffPair> bases;
    if (cfg.loss.use_rff) bases = draw_rff_pair(KernelSpec::imq(1.0), opt.out_dim, opt.rff_dims, rng);
    const RffPair* pin = bases ? &*bases : nullptr;
    Rng unused(0);
    const std::vector<double> analytic = flatten(loss_and_grad(p, batch, cfg, unused, nullptr, pin).grad);
    std::vector<double> theta = flatten(p);
    NetworkParams probe = p;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double keep = theta[k];
      theta[k] = keep + opt.step;
      unflatten(probe, theta);
      const double up = loss_and_grad(probe, batch, cfg, unused, nullptr, pin).loss;
      theta[k] = keep - opt.step;
      unflatten(probe, theta);
      const double down = loss_and_grad(probe, batch, cfg, unused, nullptr, pin).loss;
      theta[k] = keep;
      const double fd = (up - down) / (2.0 * opt.step);
      const double err = std::abs(analytic[k] - fd);
      const double scale = std::max(std::abs(analytic[k]), std::abs(fd));
      if (err > opt.atol + opt.rtol * scale) ok = false;
      worst_abs = std::max(worst_abs, err);
      largest = std::max(largest, scale);
      if (scale > 1e3 * opt.atol) worst = std::max(worst, err / scale);
    }
  }
  CheckResult c;
  c.name = "gradient_" + std::string(to_string(which));
  c.passed = ok;
  c.measured = {{"largest_gradient", largest},
                {"max_abs_error", worst_abs},
                {"max_relative_error", worst},
                {"networks", opt.networks},
                {"parameters_per_network", params}};
  c.tolerance = {{"atol", opt.atol}, {"fd_step", opt.step}, {"rtol", opt.rtol}};
  return c;
}

inline std::vector<CheckResult> run_gradients_suite(std::uint64_t seed) {
  return {check_gradients(GradientCase::ssl_hsic_exact, seed), check_gradients(GradientCase::ssl_hsic_rff, seed),
          check_gradients(GradientCase::infonce, seed)};
}

// ---------------------------------------------------------------------------

inline std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed) {
  require(is_verify_suite(suite), "unknown verify suite '" + suite + "'");
  std::vector<CheckResult> out;
  auto append = [&](std::vector<CheckResult> more) { out.insert(out.end(), more.begin(), more.end()); };
  if (suite == "estimators" || suite == "all") append(run_estimators_suite(seed));
  if (suite == "rff" || suite == "all") append(run_rff_suite(seed));
  if (suite == "bounds" || suite == "all") append(run_bounds_suite(seed));
  if (suite == "identities" || suite == "all") append(run_identities_suite(seed));
  if (suite == "gradients" || suite == "all") append(run_gradients_suite(seed));
  return out;
}

}  // namespace sslhsic
