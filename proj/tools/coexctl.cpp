// coexctl: train, evaluate and sweep contention-window policies.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "coex/harness.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool paper_scale = false;
  std::string target_rule;
  std::string algorithm;
  std::string scenario;
  bool resume = false;
  int jobs = 1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Run a single seed instead of the configured list");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_flag("--paper-scale", f.paper_scale, "Use the full episode counts (10000 train / 5000 eval)");
  cmd->add_option("--target-rule", f.target_rule, "Bootstrap target rule")->check(CLI::IsMember({"ddqn", "dqn_max"}));
  cmd->add_option("--algorithm", f.algorithm, "Override algorithm")
      ->check(CLI::IsMember({"qasal", "primal_dual", "morl", "no_learning"}));
  cmd->add_option("--scenario", f.scenario, "Override scenario")->check(CLI::IsMember({"S1", "S2", "custom"}));
  cmd->add_flag("--resume", f.resume, "Reuse existing checkpoints instead of retraining");
  cmd->add_option("--jobs", f.jobs, "Cells to run concurrently")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", f.quiet, "Suppress progress lines");
}

coex::ExperimentConfig load_config(const CommonFlags& f) {
  coex::ExperimentConfig cfg;
  nlohmann::json j = nlohmann::json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw coex::JobError("bad_config", "", std::string("cannot parse config: ") + e.what());
    }
  }
  if (!f.algorithm.empty()) j["algorithm"] = f.algorithm;
  if (!f.scenario.empty()) j["scenario"] = f.scenario;
  if (!f.target_rule.empty()) j["target_rule"] = f.target_rule;
  if (f.seed) j["seeds"] = *f.seed;
  if (!f.out.empty()) j["output_dir"] = f.out;
  try {
    cfg = j.get<coex::ExperimentConfig>();
    if (f.paper_scale) cfg.apply_paper_scale();
    cfg.validate();
  } catch (const coex::JobError&) {
    throw;
  } catch (const std::exception& e) {
    throw coex::JobError("bad_config", "", e.what());
  }
  return cfg;
}

int run(const CommonFlags& f, coex::JobMode mode, bool baseline) {
  coex::ExperimentConfig cfg = load_config(f);
  if (baseline) cfg.algorithm = coex::Algorithm::no_learning;
  coex::JobOptions opt;
  opt.mode = mode;
  opt.resume = f.resume;
  opt.jobs = f.jobs;
  if (!f.quiet) opt.log = [](const std::string& s) { std::cerr << s << '\n'; };
  const auto result = coex::run_job(cfg, opt);
  if (!f.quiet) std::cerr << "cells " << result.cells.size() << ", rows " << result.rows.size() << ", out " << cfg.output_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contention-window control for NR-U / Wi-Fi coexistence"};
  app.require_subcommand(1);
  CommonFlags train_f, eval_f, sweep_f, base_f;
  auto* train = app.add_subcommand("train", "Train every cell and write checkpoints and curves");
  auto* eval = app.add_subcommand("eval", "Evaluate every cell from its checkpoint");
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate every cell");
  auto* base = app.add_subcommand("baseline", "Evaluate the fixed-window baseline");
  add_common(train, train_f);
  add_common(eval, eval_f);
  add_common(sweep, sweep_f);
  add_common(base, base_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    std::cerr << nlohmann::json{{"error", "bad_arguments"}, {"cell", ""}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }

  try {
    if (*train) return run(train_f, coex::JobMode::train, false);
    if (*eval) return run(eval_f, coex::JobMode::eval, false);
    if (*sweep) return run(sweep_f, coex::JobMode::train_eval, false);
    if (*base) return run(base_f, coex::JobMode::eval, true);
  } catch (const coex::JobError& e) {
    std::cerr << e.json_line() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"cell", ""}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 1;
}
