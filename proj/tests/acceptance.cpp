// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance                 all criteria
//   acceptance --criterion 7   just one
//
// Exit status is 0 when every requested criterion passes.

#include "sslhsic/cli.hpp"
#include "sslhsic/commands.hpp"
#include "sslhsic/verify.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace sslhsic;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 0;

struct Verdict {
  bool passed = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    passed = passed && ok;
    notes.push_back((ok ? "ok " : "FAILED ") + what);
  }
  void note(const std::string& what) { notes.push_back(what); }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Scalar measurements only; the arrays live in the verify report.
void record(Verdict& v, const CheckResult& c) {
  nlohmann::json brief = nlohmann::json::object();
  for (const auto& [k, val] : c.measured.items()) {
    if (!val.is_structured()) brief[k] = val;
  }
  v.check(c.passed, c.name + " " + brief.dump());
}

Verdict unbiasedness() {
  Verdict v;
  const std::pair<long, int> worlds[] = {{4, 2}, {6, 3}, {8, 2}};
  for (const auto& [n, views] : worlds) {
    const auto start = std::chrono::steady_clock::now();
    const CheckResult c = check_unbiasedness(n, views, kSeed);
    const double t = seconds_since(start);
    record(v, c);
    v.check(t < 120.0, "N=" + std::to_string(n) + " runtime " + fmt(t) + " s < 120 s");
  }
  return v;
}

Verdict bias_rates() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  const BiasRates r = check_bias_rates(kSeed);
  const double t = seconds_since(start);
  record(v, r.zy);
  record(v, r.zz);
  v.check(t < 300.0, "runtime " + fmt(t) + " s < 300 s");
  return v;
}

Verdict rff_fidelity() {
  Verdict v;
  for (const CheckResult& c : run_rff_suite(kSeed)) record(v, c);
  return v;
}

Verdict identities() {
  Verdict v;
  record(v, check_mmd_identity(kSeed, 20));
  record(v, check_clustering_identity(kSeed, 20));
  for (double alpha : {0.05, 0.1, 0.25}) record(v, check_exp_lemma_sweep(alpha));
  record(v, check_infonce_bound_sweep(kSeed, 200));
  return v;
}

Verdict taylor() {
  Verdict v;
  record(v, check_taylor_contraction(kSeed));
  return v;
}

Verdict gradients() {
  Verdict v;
  GradientCheckOptions opt;
  opt.networks = 5;
  opt.rtol = 1e-4;
  for (GradientCase g : {GradientCase::ssl_hsic_exact, GradientCase::ssl_hsic_rff, GradientCase::infonce}) {
    record(v, check_gradients(g, kSeed, opt));
  }
  return v;
}

Verdict complexity() {
  Verdict v;
  BenchConfig cfg;
  cfg.rff_dims = 512;
  const BenchResult r = bench_estimators(cfg, kSeed);
  v.check(r.exact_slope >= 1.7 && r.exact_slope <= 2.3, "exact slope " + fmt(r.exact_slope) + " in [1.7, 2.3]");
  v.check(r.rff_slope >= 0.8 && r.rff_slope <= 1.3, "rff slope " + fmt(r.rff_slope) + " in [0.8, 1.3] at D=512");
  return v;
}

Verdict learning() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  WorldConfig world;  // ten clusters
  const int clusters = world.n_classes;
  std::vector<double> probes, baseline;
  int collapsed = 0;
  std::string ranks;
  for (std::uint64_t s = 0; s < 5; ++s) {
    world.seed = s;
    const SyntheticWorld w = make_world(world);
    TrainConfig cfg;
    cfg.seed = s;
    cfg.epochs = 30;
    cfg.use_target = false;
    cfg.loss.gamma = 3.0;
    cfg.probe_every = 0;
    probes.push_back(train(w, cfg).final_eval.probe_accuracy);

    TrainConfig untrained = cfg;
    untrained.epochs = 0;
    baseline.push_back(train(w, untrained).final_eval.probe_accuracy);

    TrainConfig plain = cfg;
    plain.loss.gamma = 0.0;
    const TrainResult r = train(w, plain);
    if (r.final_eval.feature_rank < clusters) ++collapsed;
    ranks += (ranks.empty() ? "" : ",") + std::to_string(r.final_eval.feature_rank);
  }
  const double t = seconds_since(start);
  const double median = stats::median(probes);
  std::string all;
  for (double p : probes) all += (all.empty() ? "" : ",") + fmt(p, 3);
  v.check(median >= 0.90, "gamma=3 median probe " + fmt(median) + " >= 0.90 (per seed " + all + ")");
  v.note("untrained encoder median probe " + fmt(stats::median(baseline)));
  v.check(collapsed >= 3, "gamma=0 rank < " + std::to_string(clusters) + " in " + std::to_string(collapsed) +
                              " of 5 seeds, need >= 3 (ranks " + ranks + ")");
  v.check(t < 600.0, "runtime " + fmt(t) + " s < 600 s");
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sslhsic");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

// Bench timings are wall-clock; only the schema and row keys are compared.
std::string strip_timings(const fs::path& dir) {
  std::string kept;
  std::istringstream in(slurp(dir / "bench.csv"));
  for (std::string line; std::getline(in, line);) kept += line.substr(0, line.rfind(',')) + "\n";
  auto j = nlohmann::json::parse(slurp(dir / "bench_summary.json"));
  j.erase("exact_slope");
  j.erase("rff_slope");
  return kept + j.dump();
}

Verdict determinism() {
  Verdict v;
  std::random_device rd;
  const fs::path root = fs::temp_directory_path() / ("sslhsic_accept_" + std::to_string(rd()));
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs = {
      {"verify", {"verify", "identities"}},
      {"verify_gradients", {"verify", "gradients"}},
      {"train", {"train", "--set", "train.epochs=3", "--set", "train.use_target=true"}},
      {"ablate", {"ablate", "--set", "train.epochs=1"}},
      {"bench", {"bench", "--set", "bench.max_batch=256", "--set", "bench.repetitions=1"}},
  };
  for (const auto& [name, args] : runs) {
    std::vector<fs::path> dirs;
    bool ran = true;
    for (const char* copy : {"a", "b"}) {
      dirs.push_back(root / name / copy);
      std::vector<std::string> full = args;
      full.insert(full.end(), {"--seed", "7", "--out", dirs.back().string()});
      ran = ran && cli(full) == 0;
    }
    if (!ran) {
      v.check(false, name + " exited with an error");
      continue;
    }
    if (name == "bench") {
      v.check(strip_timings(dirs[0]) == strip_timings(dirs[1]), "bench rows and config identical (timings exempt)");
      continue;
    }
    std::size_t files = 0;
    bool same = true;
    for (const auto& entry : fs::directory_iterator(dirs[0])) {
      ++files;
      same = same && slurp(entry.path()) == slurp(dirs[1] / entry.path().filename());
    }
    v.check(same && files > 0, name + ": " + std::to_string(files) + " files byte-identical");
  }
  fs::remove_all(root);
  return v;
}

struct Criterion {
  int id;
  const char* title;
  std::function<Verdict()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {1, "unbiased HSIC(Z,Y) estimator", unbiasedness},
      {2, "bias decays like 1/B", bias_rates},
      {3, "random Fourier feature fidelity", rff_fidelity},
      {4, "identities and bounds", identities},
      {5, "Taylor relation", taylor},
      {6, "gradient correctness", gradients},
      {7, "estimator complexity", complexity},
      {8, "end-to-end learning", learning},
      {9, "determinism", determinism},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--criterion N]\n";
      return 2;
    }
  }
  if (only < 0 || only > static_cast<int>(criteria().size())) {
    std::cerr << "no criterion " << only << "\n";
    return 2;
  }
  bool all_ok = true;
  for (const Criterion& c : criteria()) {
    if (only != 0 && c.id != only) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.check(false, std::string("threw: ") + e.what());
    }
    for (const auto& n : v.notes) std::cout << "    " << n << "\n";
    std::cout << "criterion " << c.id << " " << (v.passed ? "PASS" : "FAIL") << "  " << c.title << " (" << fmt(seconds_since(start), 3)
              << " s)" << std::endl;
    all_ok = all_ok && v.passed;
  }
  return all_ok ? 0 : 1;
}
