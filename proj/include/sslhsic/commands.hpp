#pragma once

// The four commands behind the CLI. Each writes its artifacts into an output
// directory and returns a process exit code: 0 ok, 1 a check failed.

#include "sslhsic/common.hpp"
#include "sslhsic/config.hpp"
#include "sslhsic/harness.hpp"
#include "sslhsic/hsic.hpp"
#include "sslhsic/learner.hpp"
#include "sslhsic/rff.hpp"
#include "sslhsic/verify.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace sslhsic {

namespace fs = std::filesystem;

struct BenchConfig {
  int max_batch = 4096;  // largest BM
  int rff_dims = 512;
  int repetitions = 5;
  int feature_dim = 128;

  void validate() const {
    require(max_batch >= 64, "bench.max_batch must be at least 64");
    require(rff_dims >= 1, "bench.rff_dims must be positive");
    require(repetitions >= 1, "bench.repetitions must be positive");
    require(feature_dim >= 1, "bench.feature_dim must be positive");
  }
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<Objective> regularizers = {Objective::ssl_hsic, Objective::infonce};

  void validate() const {
    require(seeds.size() >= 3, "ablate.seeds needs at least 3 seeds");
    require(!regularizers.empty(), "ablate.regularizers must not be empty");
  }
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> world_seed;  // defaults to `seed`
  WorldConfig world;
  TrainConfig train;
  BenchConfig bench;
  AblateConfig ablate;
  std::string suite = "all";

  /// World and training settings for one seed.
  WorldConfig world_for(std::uint64_t s) const {
    WorldConfig w = world;
    w.seed = world_seed.value_or(s);
    return w;
  }
  TrainConfig train_for(std::uint64_t s) const {
    TrainConfig t = train;
    t.seed = s;
    return t;
  }

  void validate() const {
    world.validate();
    train.validate();
    bench.validate();
    ablate.validate();
    require(is_verify_suite(suite), "verify.suite: unknown suite '" + suite + "'");
  }

  nlohmann::json to_json() const {
    const TrainConfig& t = train;
    std::vector<int> widths = t.network.encoder_widths;
    std::vector<std::string> regs;
    for (Objective o : ablate.regularizers) regs.emplace_back(to_string(o));
    nlohmann::json world_json = world_config_json(world_for(seed));
    return nlohmann::json{
        {"ablate", {{"regularizers", regs}, {"seeds", ablate.seeds}}},
        {"bench",
         {{"feature_dim", bench.feature_dim}, {"max_batch", bench.max_batch}, {"repetitions", bench.repetitions}, {"rff_dims", bench.rff_dims}}},
        {"kernel", {{"kind", std::string(to_string(t.kernel.kind))}, {"param", t.kernel.param}}},
        {"loss",
         {{"gamma", t.loss.gamma},
          {"kernel_entropy_weight", t.loss.kernel_entropy_weight},
          {"rff_dims", t.loss.rff_dims},
          {"sqrt_eps", t.loss.sqrt_eps},
          {"use_rff", t.loss.use_rff}}},
        {"network",
         {{"encoder_widths", widths},
          {"predictor_hidden", t.network.predictor_hidden},
          {"projector_hidden", t.network.projector_hidden},
          {"projector_out", t.network.projector_out}}},
        {"seed", seed},
        {"train",
         {{"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"objective", std::string(to_string(t.objective))},
          {"probe_every", t.probe_every},
          {"use_target", t.use_target},
          {"views", t.views},
          {"weight_decay", t.weight_decay}}},
        {"verify", {{"suite", suite}}},
        {"world", world_json}};
  }
};

namespace detail {

inline int to_int(const std::string& key, long long v) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) throw ConfigError(key + ": out of range");
  return static_cast<int>(v);
}

}  // namespace detail

/// Reads every known key from `cfg`, rejects unknown keys, validates the result.
inline RunConfig resolve_config(Config cfg) {
  RunConfig rc;
  auto geti = [&](const std::string& key, int fallback) { return detail::to_int(key, cfg.get_int(key, fallback)); };
  rc.seed = cfg.get_u64("seed", rc.seed);
  if (cfg.has("world.seed")) rc.world_seed = cfg.get_u64("world.seed", 0);

  WorldConfig& w = rc.world;
  w.n_classes = geti("world.n_classes", w.n_classes);
  w.identities_per_class = geti("world.identities_per_class", w.identities_per_class);
  w.input_dim = geti("world.input_dim", w.input_dim);
  w.noise = cfg.get_double("world.noise", w.noise);
  w.class_scale = cfg.get_double("world.class_scale", w.class_scale);
  w.identity_scale = cfg.get_double("world.identity_scale", w.identity_scale);
  w.scale_jitter = cfg.get_double("world.scale_jitter", w.scale_jitter);
  w.flip_dims = geti("world.flip_dims", w.flip_dims);

  TrainConfig& t = rc.train;
  t.epochs = geti("train.epochs", t.epochs);
  t.batch_size = geti("train.batch_size", t.batch_size);
  t.views = geti("train.views", t.views);
  t.learning_rate = cfg.get_double("train.learning_rate", t.learning_rate);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.use_target = cfg.get_bool("train.use_target", t.use_target);
  t.probe_every = geti("train.probe_every", t.probe_every);
  const std::string objective = cfg.get_string("train.objective", std::string(to_string(t.objective)));
  const auto parsed_objective = parse_objective(objective);
  if (!parsed_objective) throw ConfigError("train.objective: expected ssl_hsic or infonce, got '" + objective + "'");
  t.objective = *parsed_objective;

  t.loss.gamma = cfg.get_double("loss.gamma", t.loss.gamma);
  t.loss.use_rff = cfg.get_bool("loss.use_rff", t.loss.use_rff);
  t.loss.rff_dims = geti("loss.rff_dims", t.loss.rff_dims);
  t.loss.sqrt_eps = cfg.get_double("loss.sqrt_eps", t.loss.sqrt_eps);
  t.loss.kernel_entropy_weight = cfg.get_double("loss.kernel_entropy_weight", t.loss.kernel_entropy_weight);

  const std::string kind = cfg.get_string("kernel.kind", std::string(to_string(t.kernel.kind)));
  const auto parsed_kind = parse_kernel_kind(kind);
  if (!parsed_kind) throw ConfigError("kernel.kind: expected linear, gaussian or imq, got '" + kind + "'");
  t.kernel.kind = *parsed_kind;
  t.kernel.param = cfg.get_double("kernel.param", t.kernel.param);

  std::vector<long long> widths(t.network.encoder_widths.begin(), t.network.encoder_widths.end());
  widths = cfg.get_int_list("network.encoder_widths", widths);
  t.network.encoder_widths.clear();
  for (long long v : widths) t.network.encoder_widths.push_back(detail::to_int("network.encoder_widths", v));
  t.network.projector_hidden = geti("network.projector_hidden", t.network.projector_hidden);
  t.network.projector_out = geti("network.projector_out", t.network.projector_out);
  t.network.predictor_hidden = geti("network.predictor_hidden", t.network.predictor_hidden);

  BenchConfig& b = rc.bench;
  b.max_batch = geti("bench.max_batch", b.max_batch);
  b.rff_dims = geti("bench.rff_dims", b.rff_dims);
  b.repetitions = geti("bench.repetitions", b.repetitions);
  b.feature_dim = geti("bench.feature_dim", b.feature_dim);

  std::vector<long long> seeds(rc.ablate.seeds.begin(), rc.ablate.seeds.end());
  seeds = cfg.get_int_list("ablate.seeds", seeds);
  rc.ablate.seeds.clear();
  for (long long s : seeds) {
    if (s < 0) throw ConfigError("ablate.seeds: seeds must be nonnegative");
    rc.ablate.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  std::vector<std::string> regs;
  for (Objective o : rc.ablate.regularizers) regs.emplace_back(to_string(o));
  regs = cfg.get_string_list("ablate.regularizers", regs);
  rc.ablate.regularizers.clear();
  for (const auto& r : regs) {
    const auto o = parse_objective(r);
    if (!o) throw ConfigError("ablate.regularizers: expected ssl_hsic or infonce, got '" + r + "'");
    rc.ablate.regularizers.push_back(*o);
  }

  rc.suite = cfg.get_string("verify.suite", rc.suite);
  cfg.require_all_used();
  try {
    rc.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

// ---------------------------------------------------------------------------
// Output helpers

/// Shortest decimal form that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << text;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json report_header(const std::string& command, const RunConfig& rc) {
  return nlohmann::json{{"command", command}, {"config", rc.to_json()}, {"version", kVersion}};
}

// ---------------------------------------------------------------------------
// verify

inline int run_verify(const RunConfig& rc, const std::string& suite, const fs::path& out_dir, std::ostream& log) {
  require(is_verify_suite(suite), "unknown verify suite '" + suite + "'");
  fs::create_directories(out_dir);
  const std::vector<CheckResult> checks = run_verify_suite(suite, rc.seed);
  nlohmann::json report = report_header("verify", rc);
  report["suite"] = suite;
  report["passed"] = all_passed(checks);
  report["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    report["checks"].push_back(c.to_json());
    log << (c.passed ? "PASS " : "FAIL ") << c.name << "\n";
  }
  write_json(out_dir / "verify_report.json", report);
  return all_passed(checks) ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train

inline std::string metrics_csv(const TrainResult& result) {
  std::string csv = "step,epoch,loss,hsic_zy,hsic_zz,kernel_param,probe_accuracy,feature_rank\n";
  std::size_t next_epoch = 0;
  for (const StepMetrics& s : result.steps) {
    csv += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + format_double(s.loss) + "," + format_double(s.hsic_zy) +
           "," + format_double(s.hsic_zz) + "," + format_double(s.kernel_param) + ",";
    if (next_epoch < result.epochs.size() && result.epochs[next_epoch].step == s.step + 1) {
      const EpochMetrics& e = result.epochs[next_epoch++];
      csv += format_double(e.probe_accuracy) + "," + std::to_string(e.feature_rank);
    } else {
      csv += ",";
    }
    csv += "\n";
  }
  return csv;
}

inline nlohmann::json train_summary(const TrainResult& result) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochMetrics& e : result.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"feature_rank", e.feature_rank},
                      {"probe_accuracy", e.probe_accuracy},
                      {"representation_rank", e.representation_rank},
                      {"step", e.step}});
  }
  nlohmann::json j{{"epochs", epochs},
                   {"final_feature_rank", result.final_eval.feature_rank},
                   {"final_probe_accuracy", result.final_eval.probe_accuracy},
                   {"final_representation_rank", result.final_eval.representation_rank},
                   {"kernel_param", result.params.kernel_param},
                   {"steps", result.steps.size()}};
  j["final_loss"] = result.steps.empty() ? nlohmann::json(nullptr) : nlohmann::json(result.steps.back().loss);
  return j;
}

inline int run_train(const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  const SyntheticWorld world = make_world(rc.world_for(rc.seed));
  const TrainResult result = train(world, rc.train_for(rc.seed));
  write_text(out_dir / "metrics.csv", metrics_csv(result));
  nlohmann::json summary = report_header("train", rc);
  summary["result"] = train_summary(result);
  write_json(out_dir / "summary.json", summary);
  save_checkpoint((out_dir / "checkpoint.json").string(), result.params, rc.to_json());
  if (result.target) save_checkpoint((out_dir / "target_checkpoint.json").string(), *result.target, rc.to_json());
  log << "final probe accuracy " << format_double(result.final_eval.probe_accuracy) << ", feature rank "
      << result.final_eval.feature_rank << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  int bm = 0;
  std::string method;
  int d = 0;  // random features; 0 for the exact estimator
  double median_seconds = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  double exact_slope = 0.0;
  double rff_slope = 0.0;
};

template <typename Fn>
double median_seconds(int repetitions, Fn&& fn) {
  fn();  // warm-up, not recorded
  std::vector<double> times;
  for (int r = 0; r < repetitions; ++r) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return stats::median(times);
}

/// Wall-clock medians of the exact and random-feature estimator pairs over doubling BM.
inline BenchResult bench_estimators(const BenchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const KernelSpec spec = KernelSpec::imq(1.0);
  Rng rng(derive_seed(seed, 0, 201));
  BenchResult out;
  std::vector<double> sizes, exact_t, rff_t;
  volatile double sink = 0.0;
  for (int bm = 64; bm <= cfg.max_batch; bm *= 2) {
    const auto batch = SslBatchFeatures::make(random_unit_rows(bm, cfg.feature_dim, rng), bm / 2, 2, 1L << 30);
    const double te = median_seconds(cfg.repetitions, [&] { sink = sink + hsic_zy_biased(batch, spec) + hsic_zz_biased(batch, spec); });
    // bases drawn outside the timed region: their O(DQ) cost does not depend on BM
    const std::uint64_t s = rng.next_u64();
    const RffBasis b1 = sample_rff_basis(spec, cfg.feature_dim, cfg.rff_dims, s);
    const RffBasis b2 = sample_rff_basis(spec, cfg.feature_dim, cfg.rff_dims, mix64(s));
    const double tr = median_seconds(cfg.repetitions, [&] { sink = sink + hsic_zy_rff(batch, b1) + hsic_zz_rff(batch, b1, b2); });
    out.rows.push_back({bm, "exact", 0, te});
    out.rows.push_back({bm, "rff", cfg.rff_dims, tr});
    sizes.push_back(bm);
    exact_t.push_back(te);
    rff_t.push_back(tr);
  }
  out.exact_slope = sizes.size() >= 2 ? stats::loglog_slope(sizes, exact_t) : 0.0;
  out.rff_slope = sizes.size() >= 2 ? stats::loglog_slope(sizes, rff_t) : 0.0;
  return out;
}

inline std::string bench_csv(const BenchResult& r) {
  std::string csv = "bm,method,d,median_seconds\n";
  for (const BenchRow& row : r.rows) {
    csv += std::to_string(row.bm) + "," + row.method + "," + std::to_string(row.d) + "," + format_double(row.median_seconds) + "\n";
  }
  return csv;
}

inline int run_bench(const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  const BenchResult r = bench_estimators(rc.bench, rc.seed);
  write_text(out_dir / "bench.csv", bench_csv(r));
  nlohmann::json summary = report_header("bench", rc);
  summary["exact_slope"] = r.exact_slope;
  summary["rff_slope"] = r.rff_slope;
  write_json(out_dir / "bench_summary.json", summary);
  log << "exact slope " << format_double(r.exact_slope) << ", rff slope " << format_double(r.rff_slope) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateRow {
  Objective objective = Objective::ssl_hsic;
  std::uint64_t seed = 0;
  double probe_accuracy = 0.0;
  int feature_rank = 0;
  double final_loss = 0.0;
};

inline std::vector<AblateRow> ablate_runs(const RunConfig& rc) {
  std::vector<AblateRow> rows;
  for (Objective o : rc.ablate.regularizers) {
    for (std::uint64_t s : rc.ablate.seeds) {
      TrainConfig t = rc.train_for(s);
      t.objective = o;
      const TrainResult r = train(make_world(rc.world_for(s)), t);
      rows.push_back({o, s, r.final_eval.probe_accuracy, r.final_eval.feature_rank, r.steps.empty() ? 0.0 : r.steps.back().loss});
    }
  }
  return rows;
}

inline int run_ablate(const RunConfig& rc, const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  const std::vector<AblateRow> rows = ablate_runs(rc);
  std::string csv = "objective,seed,probe_accuracy,feature_rank,final_loss\n";
  nlohmann::json means = nlohmann::json::object();
  for (Objective o : rc.ablate.regularizers) {
    double total = 0.0;
    int count = 0;
    for (const AblateRow& r : rows) {
      if (r.objective != o) continue;
      total += r.probe_accuracy;
      ++count;
    }
    means[std::string(to_string(o))] = total / count;
    log << to_string(o) << " mean probe accuracy " << format_double(total / count) << "\n";
  }
  for (const AblateRow& r : rows) {
    csv += std::string(to_string(r.objective)) + "," + std::to_string(r.seed) + "," + format_double(r.probe_accuracy) + "," +
           std::to_string(r.feature_rank) + "," + format_double(r.final_loss) + "\n";
  }
  write_text(out_dir / "ablate.csv", csv);
  nlohmann::json summary = report_header("ablate", rc);
  summary["mean_probe_accuracy"] = means;
  write_json(out_dir / "ablate_summary.json", summary);
  return 0;
}

}  // namespace sslhsic
