#include "sslhsic/learner.hpp"
#include "sslhsic/verify.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace sslhsic;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.network.encoder_widths = {8};
  cfg.network.projector_hidden = 8;
  cfg.network.projector_out = 6;
  cfg.network.predictor_hidden = 8;
  cfg.loss.rff_dims = 32;
  return cfg;
}

SyntheticWorld small_world(std::uint64_t seed) {
  WorldConfig w;
  w.n_classes = 3;
  w.identities_per_class = 8;
  w.input_dim = 5;
  w.seed = seed;
  return make_world(w);
}

}  // namespace

TEST(Network, ShapesAndHeInit) {
  NetworkConfig cfg;
  cfg.encoder_widths = {400, 16};
  Rng rng(1);
  const NetworkParams p = init_network(cfg, 300, true, 1.0, rng);
  ASSERT_EQ(p.encoder.layers.size(), 2u);
  EXPECT_EQ(p.encoder.in_dim(), 300);
  EXPECT_EQ(p.encoder.out_dim(), 16);
  EXPECT_TRUE(p.encoder.relu_last);
  EXPECT_EQ(p.projector.out_dim(), cfg.projector_out);
  ASSERT_TRUE(p.predictor.has_value());
  EXPECT_EQ(p.predictor->in_dim(), cfg.projector_out);
  const Matrix& w = p.encoder.layers[0].weight;
  const double var = w.squaredNorm() / static_cast<double>(w.size());
  EXPECT_NEAR(var, 2.0 / 300.0, 0.05 * 2.0 / 300.0);
  EXPECT_EQ(p.encoder.layers[0].bias, Matrix::Zero(1, 400));
}

TEST(Network, FlattenRoundTrip) {
  Rng rng(2);
  NetworkParams p = init_network(NetworkConfig{}, 7, true, 1.0, rng);
  auto flat = flatten(p);
  EXPECT_EQ(flat.size(), p.num_weights());
  for (double& v : flat) v += 1.0;
  NetworkParams q = p;
  unflatten(q, flat);
  EXPECT_EQ(flatten(q), flat);
  EXPECT_EQ(p.tensor_names().size(), p.tensors().size());
  EXPECT_THROW(unflatten(q, std::vector<double>(3)), InvalidArgument);
}

TEST(Network, OutputRowsAreUnitNorm) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(s);
    const NetworkParams p = init_network(NetworkConfig{}, 5, s % 2 == 0, 1.0, rng);
    const Matrix inputs = oracle::unit_rows(16, 5, rng) * 3.0;
    const Matrix z = project(p, inputs);
    for (Eigen::Index r = 0; r < z.rows(); ++r) EXPECT_NEAR(z.row(r).norm(), 1.0, 1e-6);
  }
}

TEST(Network, ZeroFinalLayerCannotBeNormalised) {
  Rng rng(3);
  NetworkParams p = init_network(NetworkConfig{}, 5, false, 1.0, rng);
  p.projector.layers.back().weight.setZero();
  p.projector.layers.back().bias.setZero();
  EXPECT_ANY_THROW(project(p, oracle::unit_rows(8, 5, rng)));
}

TEST(Network, RejectsWrongInputWidth) {
  Rng rng(3);
  const NetworkParams p = init_network(NetworkConfig{}, 5, false, 1.0, rng);
  EXPECT_THROW(project(p, Matrix::Ones(4, 6)), InvalidArgument);
}

TEST(Gradients, SslHsicExact) {
  const CheckResult r = check_gradients(GradientCase::ssl_hsic_exact, 1);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
}

TEST(Gradients, SslHsicRandomFeatures) {
  const CheckResult r = check_gradients(GradientCase::ssl_hsic_rff, 2);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
}

TEST(Gradients, InfoNce) {
  const CheckResult r = check_gradients(GradientCase::infonce, 3);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
}

TEST(Gradients, ConstantOutputIsFlatForHsicZy) {
  // Moving one row off a common point changes every kernel value at second order only.
  const Matrix z = Matrix::Constant(8, 3, 1.0 / std::sqrt(3.0));
  std::vector<double> x(z.data(), z.data() + z.size());
  auto f = [&](const std::vector<double>& v) {
    const Matrix m = Eigen::Map<const Matrix>(v.data(), 8, 3);
    return hsic_zy_biased(SslBatchFeatures{m, 4, 2, 20}, KernelSpec::imq(1.0));
  };
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(oracle::central_difference(f, x, k, 1e-5), 0.0, 1e-9) << k;
}

TEST(Gradients, TargetNetworkBranch) {
  const SyntheticWorld world = small_world(4);
  TrainConfig cfg = small_config();
  cfg.use_target = true;
  cfg.views = 3;
  cfg.loss.use_rff = false;
  cfg.loss.kernel_entropy_weight = 0.0;
  Rng rng(5);
  const NetworkParams online = init_network(cfg.network, world.input_dim(), true, 1.0, rng);
  const NetworkParams target = init_network(cfg.network, world.input_dim(), true, 1.0, rng);
  const ViewBatch batch = sample_batch(world, 4, 3, rng);
  Rng unused(0);
  const LossGrad lg = loss_and_grad(online, batch, cfg, unused, &target);
  const std::vector<double> analytic = flatten(lg.grad);
  auto loss_at = [&](const std::vector<double>& flat) {
    NetworkParams p = online;
    unflatten(p, flat);
    Rng r(0);
    return loss_and_grad(p, batch, cfg, r, &target).loss;
  };
  const std::vector<double> x0 = flatten(online);
  Rng pick(6);
  for (int k = 0; k < 40; ++k) {
    const auto idx = static_cast<std::size_t>(pick.uniform() * static_cast<double>(x0.size()));
    const double fd = oracle::central_difference(loss_at, x0, idx, 1e-5);
    EXPECT_NEAR(analytic[idx], fd, 1e-4 * std::abs(fd) + 1e-7) << "weight " << idx;
  }
}

TEST(Gradients, KernelParameterUntouchedWithoutEntropyWeight) {
  const SyntheticWorld world = small_world(4);
  TrainConfig cfg = small_config();
  cfg.loss.kernel_entropy_weight = 0.0;
  Rng rng(7);
  const NetworkParams p = init_network(cfg.network, world.input_dim(), false, 1.0, rng);
  const LossGrad lg = loss_and_grad(p, sample_batch(world, 6, 2, rng), cfg, rng);
  EXPECT_EQ(lg.grad.kernel_param, 0.0);
  EXPECT_EQ(lg.rff_seeds.size(), 2u);
}

TEST(Ema, Schedule) {
  EXPECT_DOUBLE_EQ(ema_tau(0, 100), 0.99);
  EXPECT_DOUBLE_EQ(ema_tau(100, 100), 1.0);
  EXPECT_NEAR(ema_tau(50, 100), 0.995, 1e-15);
  EXPECT_THROW(ema_tau(5, 4), InvalidArgument);
}

TEST(Ema, UpdateMixesWeights) {
  Rng rng(8);
  NetworkParams target = init_network(NetworkConfig{}, 4, false, 1.0, rng);
  const NetworkParams online = init_network(NetworkConfig{}, 4, false, 2.0, rng);
  const NetworkParams before = target;
  ema_update(target, online, 10, 10);
  EXPECT_EQ(flatten(target), flatten(before));
  ema_update(target, online, 0, 10);
  const auto t = flatten(target), b = flatten(before), o = flatten(online);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(t[i], 0.99 * b[i] + 0.01 * o[i], 1e-15);
  EXPECT_NEAR(target.kernel_param, 0.99 * 1.0 + 0.01 * 2.0, 1e-15);
}

TEST(Ema, FrozenOnlineIsApproachedGeometrically) {
  Rng rng(9);
  NetworkParams target = init_network(NetworkConfig{}, 4, false, 1.0, rng);
  const NetworkParams online = init_network(NetworkConfig{}, 4, false, 1.0, rng);
  auto distance = [&] {
    const auto t = flatten(target), o = flatten(online);
    double d = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) d += (t[i] - o[i]) * (t[i] - o[i]);
    return std::sqrt(d);
  };
  double prev = distance();
  for (int step = 0; step < 50; ++step) {
    ema_update(target, online, 0, 100);  // tau = 0.99
    const double now = distance();
    EXPECT_NEAR(now / prev, 0.99, 1e-12);
    prev = now;
  }
}

TEST(Sgd, MomentumAndWeightDecayByHand) {
  NetworkParams p;
  p.encoder.layers.push_back({Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1)});
  NetworkParams g = p.zeros_like();
  g.encoder.layers[0].weight(0, 0) = 2.0;
  SgdState state{p.zeros_like()};
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.1;
  cfg.loss.kernel_entropy_weight = 0.0;
  sgd_step(p, state, g, cfg);
  EXPECT_NEAR(p.encoder.layers[0].weight(0, 0), -0.05, 1e-15);
  sgd_step(p, state, g, cfg);
  EXPECT_NEAR(p.encoder.layers[0].weight(0, 0), -1.9925, 1e-14);
}

TEST(Train, ZeroEpochsReturnsInitialParams) {
  const SyntheticWorld world = small_world(1);
  TrainConfig cfg = small_config();
  cfg.epochs = 0;
  cfg.batch_size = 6;
  cfg.seed = 12;
  const TrainResult r = train(world, cfg);
  Rng rng(derive_seed(12, 0, streams::init));
  const NetworkParams init = init_network(cfg.network, world.input_dim(), false, cfg.kernel.param, rng);
  EXPECT_EQ(flatten(r.params), flatten(init));
  EXPECT_TRUE(r.steps.empty());
  EXPECT_TRUE(r.epochs.empty());
}

TEST(Train, SameSeedIsBitIdentical) {
  const SyntheticWorld world = small_world(2);
  TrainConfig cfg = small_config();
  cfg.epochs = 3;
  cfg.batch_size = 6;
  cfg.seed = 5;
  const TrainResult a = train(world, cfg);
  const TrainResult b = train(world, cfg);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    EXPECT_EQ(a.steps[i].loss, b.steps[i].loss);
    EXPECT_EQ(a.steps[i].hsic_zz, b.steps[i].hsic_zz);
    EXPECT_EQ(a.steps[i].kernel_param, b.steps[i].kernel_param);
  }
  EXPECT_EQ(flatten(a.params), flatten(b.params));
  cfg.seed = 6;
  EXPECT_NE(flatten(train(world, cfg).params), flatten(a.params));
}

TEST(Train, StepAndProbeBookkeeping) {
  const SyntheticWorld world = small_world(3);
  TrainConfig cfg = small_config();
  cfg.epochs = 5;
  cfg.batch_size = 5;
  cfg.probe_every = 2;
  const TrainResult r = train(world, cfg);
  EXPECT_EQ(r.steps.size(), 5u * (24 / 5));
  ASSERT_EQ(r.epochs.size(), 3u);  // epochs 1, 3 and the last
  EXPECT_EQ(r.epochs[0].epoch, 1);
  EXPECT_EQ(r.epochs[2].epoch, 4);
  EXPECT_EQ(r.epochs[2].step, static_cast<long>(r.steps.size()));
}

TEST(Train, LossFallsOverTheFirstHundredSteps) {
  std::vector<double> drops;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    WorldConfig w;
    w.seed = seed;
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 7;  // 15 steps per epoch
    cfg.probe_every = 0;
    const TrainResult r = train(make_world(w), cfg);
    ASSERT_GE(r.steps.size(), 100u);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 10; ++i) {
      first += r.steps[static_cast<std::size_t>(i)].loss;
      last += r.steps[static_cast<std::size_t>(90 + i)].loss;
    }
    drops.push_back(first - last);
  }
  EXPECT_GT(stats::median(drops), 0.0);
}

TEST(Train, TargetNetworkRuns) {
  const SyntheticWorld world = small_world(3);
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.use_target = true;
  const TrainResult r = train(world, cfg);
  ASSERT_TRUE(r.target.has_value());
  EXPECT_TRUE(r.params.predictor.has_value());
  EXPECT_NE(flatten(*r.target), flatten(r.params));
}

TEST(Train, InfoNceRuns) {
  const SyntheticWorld world = small_world(3);
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.batch_size = 6;
  cfg.objective = Objective::infonce;
  const TrainResult r = train(world, cfg);
  for (const auto& s : r.steps) EXPECT_TRUE(std::isfinite(s.loss));
}

TEST(Train, RejectsInvalidConfigs) {
  const SyntheticWorld world = small_world(3);
  TrainConfig cfg = small_config();
  cfg.batch_size = 100;
  EXPECT_THROW(train(world, cfg), InvalidArgument);
  cfg = small_config();
  cfg.views = 1;
  EXPECT_THROW(train(world, cfg), InvalidArgument);
  cfg = small_config();
  cfg.kernel = KernelSpec::linear();
  EXPECT_THROW(train(world, cfg), InvalidArgument);
  cfg = small_config();
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(world, cfg), InvalidArgument);
}

TEST(Train, ToyWorldReachesProbeAccuracy) {
  WorldConfig w;
  w.seed = 0;
  TrainConfig cfg;
  cfg.seed = 0;
  const TrainResult r = train(make_world(w), cfg);
  EXPECT_GE(r.final_eval.probe_accuracy, 0.9);
}

TEST(Objectives, NamesRoundTrip) {
  EXPECT_EQ(parse_objective("ssl_hsic"), Objective::ssl_hsic);
  EXPECT_EQ(parse_objective("infonce"), Objective::infonce);
  EXPECT_FALSE(parse_objective("byol").has_value());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(9);
  NetworkParams p = init_network(NetworkConfig{}, 6, true, 0.731, rng);
  for (Matrix* m : p.tensors()) *m = m->unaryExpr([](double v) { return v * 1.0000001 + 1e-300; });
  const auto path = std::filesystem::temp_directory_path() / "sslhsic_checkpoint_test.json";
  save_checkpoint(path.string(), p, nlohmann::json{{"seed", 1}});
  const NetworkParams q = load_checkpoint(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(flatten(q), flatten(p));
  EXPECT_EQ(q.kernel_param, p.kernel_param);
  EXPECT_EQ(q.encoder.relu_last, p.encoder.relu_last);
  ASSERT_TRUE(q.predictor.has_value());
  EXPECT_EQ(q.tensor_names(), p.tensor_names());
}

TEST(Checkpoint, RejectsForeignJson) {
  EXPECT_THROW(params_from_checkpoint(nlohmann::json{{"format", "other"}}), InvalidArgument);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ckpt.json"), InvalidArgument);
}
