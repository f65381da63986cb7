#pragma once

// Encoder / projector / predictor stack, differentiable SSL-HSIC and InfoNCE
// losses on the autodiff tape, and the SGD training loop.

#include "sslhsic/autodiff.hpp"
#include "sslhsic/batch.hpp"
#include "sslhsic/common.hpp"
#include "sslhsic/harness.hpp"
#include "sslhsic/hsic.hpp"
#include "sslhsic/kernel.hpp"
#include "sslhsic/objectives.hpp"
#include "sslhsic/rff.hpp"
#include "sslhsic/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace sslhsic {

// ---------------------------------------------------------------------------
// Parameters

struct Dense {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

/// Affine layers with ReLU between them; `relu_last` also rectifies the output.
struct Mlp {
  std::vector<Dense> layers;
  bool relu_last = false;

  int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.rows()); }
  int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.cols()); }
};

struct NetworkConfig {
  std::vector<int> encoder_widths = {64};
  int projector_hidden = 64;
  int projector_out = 32;
  int predictor_hidden = 64;

  void validate() const {
    require(!encoder_widths.empty(), "network.encoder_widths must name at least one layer");
    for (int w : encoder_widths) require(w >= 1, "network.encoder_widths must be positive");
    require(projector_hidden >= 1 && projector_out >= 1, "network projector widths must be positive");
    require(predictor_hidden >= 1, "network.predictor_hidden must be positive");
  }
};

struct NetworkParams {
  Mlp encoder;
  Mlp projector;
  std::optional<Mlp> predictor;
  double kernel_param = 1.0;

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    auto walk = [&](auto& mlp, const std::string& prefix) {
      for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        fn(prefix + "." + std::to_string(l) + ".weight", mlp.layers[l].weight);
        fn(prefix + "." + std::to_string(l) + ".bias", mlp.layers[l].bias);
      }
    };
    walk(self.encoder, "encoder");
    walk(self.projector, "projector");
    if (self.predictor) walk(*self.predictor, "predictor");
  }

  /// Every weight matrix in a fixed order.
  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    visit(*this, [&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    visit(*this, [&](const std::string&, const Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<std::string> tensor_names() const {
    std::vector<std::string> out;
    visit(*this, [&](const std::string& name, const Matrix&) { out.push_back(name); });
    return out;
  }

  std::size_t num_weights() const {
    std::size_t n = 0;
    for (const Matrix* m : tensors()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  /// Same architecture with every entry zero.
  NetworkParams zeros_like() const {
    NetworkParams z = *this;
    for (Matrix* m : z.tensors()) m->setZero();
    z.kernel_param = 0.0;
    return z;
  }
};

inline Mlp init_mlp(const std::vector<int>& widths, bool relu_last, Rng& rng) {
  Mlp mlp;
  mlp.relu_last = relu_last;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Dense layer;
    const double sd = std::sqrt(2.0 / widths[l]);
    layer.weight.resize(widths[l], widths[l + 1]);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = sd * rng.normal();
    }
    layer.bias = Matrix::Zero(1, widths[l + 1]);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

inline NetworkParams init_network(const NetworkConfig& cfg, int input_dim, bool with_predictor, double kernel_param, Rng& rng) {
  cfg.validate();
  require(input_dim >= 1, "init_network: input_dim must be positive");
  NetworkParams p;
  std::vector<int> enc{input_dim};
  enc.insert(enc.end(), cfg.encoder_widths.begin(), cfg.encoder_widths.end());
  p.encoder = init_mlp(enc, true, rng);
  p.projector = init_mlp({p.encoder.out_dim(), cfg.projector_hidden, cfg.projector_out}, false, rng);
  if (with_predictor) p.predictor = init_mlp({cfg.projector_out, cfg.predictor_hidden, cfg.projector_out}, false, rng);
  p.kernel_param = kernel_param;
  return p;
}

inline std::vector<double> flatten(const NetworkParams& p) {
  std::vector<double> out;
  for (const Matrix* m : p.tensors()) out.insert(out.end(), m->data(), m->data() + m->size());
  return out;
}

inline void unflatten(NetworkParams& p, const std::vector<double>& flat) {
  require(flat.size() == p.num_weights(), "unflatten: size mismatch");
  std::size_t k = 0;
  for (Matrix* m : p.tensors()) {
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.begin() + static_cast<std::ptrdiff_t>(k + m->size()), m->data());
    k += static_cast<std::size_t>(m->size());
  }
}

// ---------------------------------------------------------------------------
// Forward pass on a tape

struct TapedNetwork {
  std::vector<ad::Var> leaves;  // parallel to NetworkParams::tensors()
  ad::Var representation;
  ad::Var features;             // batch-normalised, unit rows
};

namespace detail {

inline ad::Var mlp_forward(ad::Tape& t, const Mlp& mlp, std::vector<ad::Var>::const_iterator& leaf, ad::Var x) {
  (void)t;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const ad::Var w = *leaf++;
    const ad::Var b = *leaf++;
    x = ad::add_row(ad::matmul(x, w), b);
    if (l + 1 < mlp.layers.size() || mlp.relu_last) x = ad::relu(x);
  }
  return x;
}

}  // namespace detail

/// Records inputs -> encoder -> projector (-> predictor) -> batch norm -> unit rows.
inline TapedNetwork forward_on_tape(ad::Tape& t, const NetworkParams& p, const Matrix& inputs, bool use_predictor, bool trainable) {
  require(inputs.cols() == p.encoder.in_dim(), "forward: input dimension does not match the encoder");
  if (!inputs.allFinite()) throw InvalidArgument("forward: non-finite inputs");
  TapedNetwork net;
  for (const Matrix* m : p.tensors()) net.leaves.push_back(trainable ? t.variable(*m) : t.constant(*m));
  auto leaf = net.leaves.cbegin();
  net.representation = detail::mlp_forward(t, p.encoder, leaf, t.constant(inputs));
  ad::Var h = detail::mlp_forward(t, p.projector, leaf, net.representation);
  if (p.predictor) {
    if (use_predictor) {
      h = detail::mlp_forward(t, *p.predictor, leaf, h);
    } else {
      leaf += static_cast<std::ptrdiff_t>(2 * p.predictor->layers.size());
    }
  }
  net.features = ad::normalize_rows(ad::batch_norm(h));
  return net;
}

/// Unit-norm projected features of a view batch.
inline SslBatchFeatures forward(const NetworkParams& p, const ViewBatch& views) {
  ad::Tape t;
  const TapedNetwork net = forward_on_tape(t, p, views.inputs, false, false);
  return SslBatchFeatures{net.features.value(), views.B, views.M, views.N};
}

/// Encoder output, used for probing.
inline Matrix encode(const NetworkParams& p, const Matrix& inputs) {
  ad::Tape t;
  return forward_on_tape(t, p, inputs, false, false).representation.value();
}

/// Projected features of arbitrary rows (batch norm over all of them).
inline Matrix project(const NetworkParams& p, const Matrix& inputs) {
  ad::Tape t;
  return forward_on_tape(t, p, inputs, false, false).features.value();
}

// ---------------------------------------------------------------------------
// Differentiable objectives

namespace adloss {

inline ad::Var kernel_matrix(const ad::Var& z, const KernelSpec& spec) {
  switch (spec.kind) {
    case KernelKind::linear:
      return ad::matmul(z, ad::transpose(z));
    case KernelKind::gaussian:
      return ad::exp(ad::scale(ad::pairwise_sqdist(z), -1.0 / (2.0 * spec.param * spec.param)));
    case KernelKind::imq:
      return ad::scale(ad::pow(ad::add_scalar(ad::pairwise_sqdist(z), spec.param * spec.param), -0.5), spec.param);
  }
  throw InvalidArgument("kernel_matrix: unknown kernel");
}

inline Matrix block_mask(int B, int M) {
  Matrix mask = Matrix::Zero(static_cast<Eigen::Index>(B) * M, static_cast<Eigen::Index>(B) * M);
  for (int i = 0; i < B; ++i) mask.block(static_cast<Eigen::Index>(i) * M, static_cast<Eigen::Index>(i) * M, M, M).setOnes();
  return mask;
}

struct Terms {
  ad::Var loss;
  ad::Var hsic_zy;
  ad::Var hsic_zz;
};

inline ad::Var regularised(const ad::Var& zy, const ad::Var& zz, const LossConfig& cfg) {
  const ad::Var root = ad::sqrt(ad::add_scalar(ad::clamp_min(zz, 0.0), cfg.sqrt_eps));
  return ad::sub(ad::scale(root, cfg.gamma), zy);
}

inline ad::Var zy_from_sums(const ad::Var& pos, const ad::Var& all, int B, int M) {
  const double b = B, m = M;
  return ad::add_scalar(ad::sub(ad::scale(pos, 1.0 / (b * m * (m - 1.0))), ad::scale(all, 1.0 / (b * b * m * m))), -1.0 / (m - 1.0));
}

inline Terms ssl_hsic_exact(ad::Tape& t, const ad::Var& z, const KernelSpec& spec, int B, int M, const LossConfig& cfg) {
  const ad::Var k = kernel_matrix(z, spec);
  Terms out;
  out.hsic_zy = zy_from_sums(ad::sum(ad::hadamard(k, t.constant(block_mask(B, M)))), ad::sum(k), B, M);
  const double denom = static_cast<double>(z.rows() - 1);
  out.hsic_zz = ad::scale(ad::sum_squares(ad::double_center(k)), 1.0 / (denom * denom));
  out.loss = regularised(out.hsic_zy, out.hsic_zz, cfg);
  return out;
}

inline ad::Var rff_map(ad::Tape& t, const ad::Var& z, const RffBasis& basis) {
  const double amp = std::sqrt(2.0 / static_cast<double>(basis.num_features()));
  const ad::Var proj = ad::add_row(ad::matmul(z, t.constant(basis.omegas.transpose())), t.constant(basis.offsets.transpose()));
  return ad::scale(ad::cos(proj), amp);
}

inline Terms ssl_hsic_rff(ad::Tape& t, const ad::Var& z, const RffBasis& first, const RffBasis& second, int B, int M,
                          const LossConfig& cfg) {
  require(first.seed != second.seed, "ssl_hsic_rff: the two bases must be drawn independently");
  const Eigen::Index n = z.rows();
  Matrix agg = Matrix::Zero(B, n);
  for (int i = 0; i < B; ++i) agg.block(i, static_cast<Eigen::Index>(i) * M, 1, M).setOnes();
  const ad::Var r1 = rff_map(t, z, first);
  const ad::Var r2 = rff_map(t, z, second);
  Terms out;
  out.hsic_zy = zy_from_sums(ad::sum_squares(ad::matmul(t.constant(agg), r1)),
                             ad::sum_squares(ad::matmul(t.constant(Matrix::Ones(1, n)), r1)), B, M);
  const ad::Var cross = ad::matmul(ad::transpose(ad::center_columns(r1)), ad::center_columns(r2));
  const double denom = static_cast<double>(n - 1);
  out.hsic_zz = ad::scale(ad::sum_squares(cross), 1.0 / (denom * denom));
  out.loss = regularised(out.hsic_zy, out.hsic_zz, cfg);
  return out;
}

inline ad::Var info_nce(ad::Tape& t, const ad::Var& z, const KernelSpec& spec, int B, int M) {
  const ad::Var k = kernel_matrix(z, spec);
  const Eigen::Index n = k.rows();
  const Matrix off_diag = block_mask(B, M) - Matrix::Identity(n, n);
  const ad::Var pos = ad::scale(ad::sum(ad::hadamard(k, t.constant(off_diag))), 1.0 / (static_cast<double>(B) * M * (M - 1)));
  const ad::Var lme = ad::scale(ad::sum(ad::row_log_mean_exp(k)), 1.0 / static_cast<double>(n));
  return ad::sub(lme, pos);
}

}  // namespace adloss

// ---------------------------------------------------------------------------
// Training configuration

enum class Objective { ssl_hsic, infonce };

inline std::string_view to_string(Objective o) { return o == Objective::ssl_hsic ? "ssl_hsic" : "infonce"; }

inline std::optional<Objective> parse_objective(std::string_view name) {
  if (name == "ssl_hsic") return Objective::ssl_hsic;
  if (name == "infonce") return Objective::infonce;
  return std::nullopt;
}

inline LossConfig training_loss_defaults() {
  LossConfig cfg;
  cfg.use_rff = true;
  cfg.kernel_entropy_weight = 1e-3;
  return cfg;
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  int views = 2;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-6;
  bool use_target = false;
  Objective objective = Objective::ssl_hsic;
  LossConfig loss = training_loss_defaults();
  KernelSpec kernel = KernelSpec::imq(1.0);
  NetworkConfig network;
  int probe_every = 1;  // epochs between probes; 0 probes only after the last epoch
  std::uint64_t seed = 0;

  void validate() const {
    require(epochs >= 0, "train.epochs must be nonnegative");
    require(batch_size >= 2, "train.batch_size must be at least 2");
    require(views >= 2, "train.views must be at least 2");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "train.learning_rate must be positive");
    require(momentum >= 0.0 && momentum < 1.0, "train.momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "train.weight_decay must be nonnegative");
    require(probe_every >= 0, "train.probe_every must be nonnegative");
    loss.validate();
    kernel.validate();
    network.validate();
    if (loss.use_rff) require(kernel.kind != KernelKind::linear, "loss.use_rff needs a gaussian or imq kernel");
    if (loss.kernel_entropy_weight > 0.0) {
      require(kernel.kind != KernelKind::linear, "loss.kernel_entropy_weight needs a gaussian or imq kernel");
    }
  }
};

// ---------------------------------------------------------------------------
// Loss and gradient

struct RffPair {
  RffBasis first;
  RffBasis second;
};

struct LossGrad {
  double loss = 0.0;
  double hsic_zy = 0.0;
  double hsic_zz = 0.0;
  NetworkParams grad;  // same layout as the parameters; kernel_param holds its own gradient
  std::vector<std::uint64_t> rff_seeds;
};

/// Two fresh random-feature bases for one step.
inline RffPair draw_rff_pair(const KernelSpec& spec, int feature_dim, int num_features, Rng& rng) {
  const std::uint64_t s1 = rng.next_u64();
  std::uint64_t s2 = rng.next_u64();
  if (s2 == s1) s2 = mix64(s2);
  return {sample_rff_basis(spec, feature_dim, num_features, s1), sample_rff_basis(spec, feature_dim, num_features, s2)};
}

/// Loss of the configured objective and its gradient w.r.t. every weight.
/// With a target network each view takes a turn on the online branch while
/// the others come from the (frozen) target, and the losses are averaged.
/// `bases` pins the random features; otherwise they are drawn from `rng`.
inline LossGrad loss_and_grad(const NetworkParams& params, const ViewBatch& batch, const TrainConfig& cfg, Rng& rng,
                              const NetworkParams* target = nullptr, const RffPair* bases = nullptr) {
  cfg.validate();
  require(batch.B >= 2 && batch.M >= 2, "loss_and_grad: need B >= 2 and M >= 2");
  require(!cfg.use_target || target != nullptr, "loss_and_grad: target network required");
  const KernelSpec spec{cfg.kernel.kind, params.kernel_param};
  spec.validate();

  ad::Tape t;
  const TapedNetwork online = forward_on_tape(t, params, batch.inputs, cfg.use_target, true);
  const Eigen::Index n = batch.inputs.rows();

  std::optional<RffPair> drawn;
  const RffPair* pair = bases;
  if (cfg.objective == Objective::ssl_hsic && cfg.loss.use_rff && pair == nullptr) {
    drawn = draw_rff_pair(spec, static_cast<int>(online.features.cols()), cfg.loss.rff_dims, rng);
    pair = &*drawn;
  }

  auto objective_on = [&](const ad::Var& z, ad::Var& zy, ad::Var& zz) {
    if (cfg.objective == Objective::infonce) return adloss::info_nce(t, z, spec, batch.B, batch.M);
    const adloss::Terms terms = pair ? adloss::ssl_hsic_rff(t, z, pair->first, pair->second, batch.B, batch.M, cfg.loss)
                                     : adloss::ssl_hsic_exact(t, z, spec, batch.B, batch.M, cfg.loss);
    zy = terms.hsic_zy;
    zz = terms.hsic_zz;
    return terms.loss;
  };

  LossGrad out;
  std::vector<double> zy_values, zz_values;
  ad::Var total;
  if (!cfg.use_target) {
    ad::Var zy, zz;
    total = objective_on(online.features, zy, zz);
    if (cfg.objective == Objective::ssl_hsic) {
      zy_values.push_back(zy.scalar());
      zz_values.push_back(zz.scalar());
    }
  } else {
    const Matrix target_z = project(*target, batch.inputs);
    std::vector<ad::Var> parts;
    for (int r = 0; r < batch.M; ++r) {
      Matrix keep = Matrix::Zero(n, online.features.cols());
      for (int i = 0; i < batch.B; ++i) keep.row(batch.row_of(i, r)).setOnes();
      const Matrix rest = target_z.cwiseProduct(Matrix::Ones(keep.rows(), keep.cols()) - keep);
      const ad::Var z = ad::add(ad::hadamard(online.features, t.constant(keep)), t.constant(rest));
      ad::Var zy, zz;
      parts.push_back(objective_on(z, zy, zz));
      if (cfg.objective == Objective::ssl_hsic) {
        zy_values.push_back(zy.scalar());
        zz_values.push_back(zz.scalar());
      }
    }
    total = parts.front();
    for (std::size_t r = 1; r < parts.size(); ++r) total = ad::add(total, parts[r]);
    total = ad::scale(total, 1.0 / static_cast<double>(batch.M));
  }

  t.backward(total);
  out.loss = total.scalar();
  out.grad = params.zeros_like();
  auto grads = out.grad.tensors();
  for (std::size_t k = 0; k < grads.size(); ++k) *grads[k] = t.grad(online.leaves[k]);

  const SslBatchFeatures feats{online.features.value(), batch.B, batch.M, batch.N};
  if (cfg.objective == Objective::ssl_hsic) {
    double zy = 0.0, zz = 0.0;
    for (std::size_t r = 0; r < zy_values.size(); ++r) {
      zy += zy_values[r];
      zz += zz_values[r];
    }
    out.hsic_zy = zy / static_cast<double>(zy_values.size());
    out.hsic_zz = zz / static_cast<double>(zz_values.size());
  } else {
    out.hsic_zy = hsic_zy_biased(feats, spec);
    out.hsic_zz = hsic_zz_biased(feats, spec);
  }
  if (pair) out.rff_seeds = {pair->first.seed, pair->second.seed};
  // The kernel parameter ascends the kernel entropy objective.
  if (cfg.loss.kernel_entropy_weight > 0.0) {
    out.grad.kernel_param = -cfg.loss.kernel_entropy_weight * kernel_entropy_gradient(feats.features, spec);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser and target network

inline double ema_tau(long t, long T) {
  require(T >= 0 && t >= 0 && t <= T, "ema_update: need 0 <= t <= T");
  if (T == 0) return 1.0;
  return 1.0 - 0.01 * (std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(T)) + 1.0) / 2.0;
}

/// target <- tau target + (1 - tau) online, elementwise.
inline void ema_update(NetworkParams& target, const NetworkParams& online, long t, long T) {
  const double tau = ema_tau(t, T);
  auto dst = target.tensors();
  const auto src = online.tensors();
  require(dst.size() == src.size(), "ema_update: architectures differ");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    require(dst[k]->rows() == src[k]->rows() && dst[k]->cols() == src[k]->cols(), "ema_update: architectures differ");
    *dst[k] = tau * *dst[k] + (1.0 - tau) * *src[k];
  }
  target.kernel_param = tau * target.kernel_param + (1.0 - tau) * online.kernel_param;
}

struct SgdState {
  NetworkParams velocity;
};

/// Heavy-ball SGD; weight decay is added to the gradient.
inline void sgd_step(NetworkParams& params, SgdState& state, const NetworkParams& grad, const TrainConfig& cfg) {
  auto p = params.tensors();
  auto v = state.velocity.tensors();
  const auto g = grad.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    *v[k] = cfg.momentum * *v[k] + *g[k] + cfg.weight_decay * *p[k];
    *p[k] -= cfg.learning_rate * *v[k];
  }
  if (cfg.loss.kernel_entropy_weight > 0.0) {
    state.velocity.kernel_param = cfg.momentum * state.velocity.kernel_param + grad.kernel_param;
    params.kernel_param -= cfg.learning_rate * state.velocity.kernel_param;
    if (!(params.kernel_param > 0.0)) throw NumericalError("train: kernel parameter left the positive range");
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct StepMetrics {
  long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double hsic_zy = 0.0;
  double hsic_zz = 0.0;
  double kernel_param = 0.0;
};

struct EpochMetrics {
  int epoch = 0;
  long step = 0;  // steps completed
  double probe_accuracy = 0.0;
  int feature_rank = 0;
  int representation_rank = 0;
};

struct Evaluation {
  double probe_accuracy = 0.0;
  int feature_rank = 0;
  int representation_rank = 0;
};

struct TrainResult {
  NetworkParams params;
  std::optional<NetworkParams> target;
  std::vector<StepMetrics> steps;
  std::vector<EpochMetrics> epochs;
  Evaluation final_eval;
};

namespace streams {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t order = 2;
inline constexpr std::uint64_t views = 3;
inline constexpr std::uint64_t rff = 4;
inline constexpr std::uint64_t probe = 5;
}  // namespace streams

/// Probe accuracy on the clean anchors and numerical ranks of their features.
inline Evaluation evaluate(const NetworkParams& params, const SyntheticWorld& world, std::uint64_t seed) {
  Evaluation e;
  const Matrix rep = encode(params, world.anchors);
  e.probe_accuracy = linear_probe(rep, world.labels, derive_seed(seed, 0, streams::probe));
  e.feature_rank = numerical_rank(project(params, world.anchors));
  e.representation_rank = numerical_rank(rep);
  return e;
}

inline TrainResult train(const SyntheticWorld& world, const TrainConfig& cfg) {
  cfg.validate();
  require(world.size() >= cfg.batch_size, "train: dataset has fewer identities than the batch size");
  Rng init_rng(derive_seed(cfg.seed, 0, streams::init));
  TrainResult result;
  result.params = init_network(cfg.network, world.input_dim(), cfg.use_target, cfg.kernel.param, init_rng);
  if (cfg.use_target) result.target = result.params;
  SgdState opt{result.params.zeros_like()};

  const long per_epoch = world.size() / cfg.batch_size;
  const long total_steps = per_epoch * cfg.epochs;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch), streams::order));
    const auto order = order_rng.permutation(static_cast<std::size_t>(world.size()));
    for (long s = 0; s < per_epoch; ++s, ++step) {
      std::vector<long> ids(static_cast<std::size_t>(cfg.batch_size));
      for (int i = 0; i < cfg.batch_size; ++i) ids[static_cast<std::size_t>(i)] = static_cast<long>(order[static_cast<std::size_t>(s * cfg.batch_size + i)]);
      Rng view_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), streams::views));
      const ViewBatch batch = make_view_batch(world, std::move(ids), cfg.views, view_rng);
      Rng rff_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), streams::rff));
      const LossGrad lg = loss_and_grad(result.params, batch, cfg, rff_rng, result.target ? &*result.target : nullptr);
      sgd_step(result.params, opt, lg.grad, cfg);
      if (result.target) ema_update(*result.target, result.params, step + 1, total_steps);
      result.steps.push_back({step, epoch, lg.loss, lg.hsic_zy, lg.hsic_zz, result.params.kernel_param});
    }
    const bool last = epoch + 1 == cfg.epochs;
    const bool due = cfg.probe_every > 0 && (epoch + 1) % cfg.probe_every == 0;
    if (due || last) {
      const Evaluation e = evaluate(result.params, world, cfg.seed);
      result.epochs.push_back({epoch, step, e.probe_accuracy, e.feature_rank, e.representation_rank});
    }
  }
  result.final_eval = evaluate(result.params, world, cfg.seed);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
  return nlohmann::json{{"cols", m.cols()}, {"data", std::vector<double>(m.data(), m.data() + m.size())}, {"rows", m.rows()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  require(rows >= 0 && cols >= 0 && static_cast<Eigen::Index>(data.size()) == rows * cols, "checkpoint: bad tensor shape");
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

inline nlohmann::json mlp_json(const Mlp& mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Dense& d : mlp.layers) layers.push_back({{"bias", matrix_json(d.bias)}, {"weight", matrix_json(d.weight)}});
  return nlohmann::json{{"layers", layers}, {"relu_last", mlp.relu_last}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp mlp;
  mlp.relu_last = j.at("relu_last").get<bool>();
  for (const auto& layer : j.at("layers")) {
    mlp.layers.push_back({matrix_from_json(layer.at("weight")), matrix_from_json(layer.at("bias"))});
  }
  return mlp;
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const NetworkParams& p, const nlohmann::json& config) {
  nlohmann::json j;
  j["format"] = "sslhsic-checkpoint";
  j["version"] = kVersion;
  j["config"] = config;
  j["kernel_param"] = p.kernel_param;
  j["encoder"] = detail::mlp_json(p.encoder);
  j["projector"] = detail::mlp_json(p.projector);
  j["predictor"] = p.predictor ? detail::mlp_json(*p.predictor) : nlohmann::json(nullptr);
  return j;
}

inline NetworkParams params_from_checkpoint(const nlohmann::json& j) {
  require(j.value("format", "") == "sslhsic-checkpoint", "checkpoint: unrecognised format");
  NetworkParams p;
  p.kernel_param = j.at("kernel_param").get<double>();
  p.encoder = detail::mlp_from_json(j.at("encoder"));
  p.projector = detail::mlp_from_json(j.at("projector"));
  if (!j.at("predictor").is_null()) p.predictor = detail::mlp_from_json(j.at("predictor"));
  return p;
}

inline void save_checkpoint(const std::string& path, const NetworkParams& p, const nlohmann::json& config) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "checkpoint: cannot open " + path);
  out << checkpoint_json(p, config).dump(1) << "\n";
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "checkpoint: cannot open " + path);
  return params_from_checkpoint(nlohmann::json::parse(in));
}

}  // namespace sslhsic
