#pragma once

// Command-line front end: `sslhsic <verify|train|bench|ablate> [options]`.

#include "sslhsic/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace sslhsic {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

struct CliOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string suite;
};

inline void add_common_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--config", o.config_path, "key = value config file");
  sub->add_option("--set", o.sets, "override one key, e.g. --set loss.gamma=0")->take_all()->allow_extra_args(false);
  sub->add_option("--seed", o.seed, "run seed");
  sub->add_option("--out", o.out_dir, "output directory");
}

inline RunConfig build_run_config(const CliOptions& o) {
  Config cfg = o.config_path.empty() ? Config{} : Config::load(o.config_path);
  for (const auto& s : o.sets) cfg.set(s);
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  if (!o.suite.empty()) cfg.set("verify.suite", o.suite);
  return resolve_config(std::move(cfg));
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"SSL-HSIC estimators, checks and toy training"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  CliOptions o;

  auto* verify = app.add_subcommand("verify", "run a property suite");
  verify->add_option("suite", o.suite, "estimators, rff, bounds, identities, gradients or all");
  add_common_options(verify, o);
  auto* train_cmd = app.add_subcommand("train", "train on the toy world");
  add_common_options(train_cmd, o);
  auto* bench = app.add_subcommand("bench", "time exact vs random-feature estimators");
  add_common_options(bench, o);
  auto* ablate = app.add_subcommand("ablate", "compare objectives across seeds");
  add_common_options(ablate, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (verify->parsed() && !o.suite.empty() && !is_verify_suite(o.suite)) {
      err << "error: unknown verify suite '" << o.suite << "' (expected estimators, rff, bounds, identities, gradients or all)\n";
      return kExitUsage;
    }
    const RunConfig rc = build_run_config(o);
    if (verify->parsed()) return run_verify(rc, rc.suite, o.out_dir, out);
    if (train_cmd->parsed()) return run_train(rc, o.out_dir, out);
    if (bench->parsed()) return run_bench(rc, o.out_dir, out);
    return run_ablate(rc, o.out_dir, out);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

}  // namespace sslhsic
