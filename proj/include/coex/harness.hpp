#pragma once

// Experiment orchestration: scenario configs, per-cell train/evaluate, result
// aggregation and the CSV / JSON / checkpoint files of an output directory.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "coex/agents.hpp"
#include "coex/env.hpp"
#include "coex/nn.hpp"

namespace coex {

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample.
inline double percentile(std::span<const double> samples, double p) {
  if (samples.empty()) throw std::invalid_argument("percentile: empty sample list");
  if (!(p > 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p must be in (0, 100]");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

enum class Scenario : std::uint8_t { S1, S2, custom };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "S1";
    case Scenario::S2: return "S2";
    case Scenario::custom: return "custom";
  }
  return "?";
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "S1") return Scenario::S1;
  if (s == "S2") return Scenario::S2;
  if (s == "custom") return Scenario::custom;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

/// Shaping scale used for the standard thresholds (1, 2, 3 ms -> 1, 1.5, 2).
inline double default_beta(double d_th_ms) { return 0.5 + 0.5 * d_th_ms; }

inline constexpr int kDeskTrainEpisodes = 2000;
inline constexpr int kDeskEvalEpisodes = 500;
inline constexpr int kPaperTrainEpisodes = 10000;
inline constexpr int kPaperEvalEpisodes = 5000;

struct ExperimentConfig {
  Scenario scenario = Scenario::S1;
  Algorithm algorithm = Algorithm::qasal;
  std::vector<double> d_th_ms{2.0};
  std::vector<double> alpha{0.5};    // morl only
  std::optional<double> beta;        // default_beta(D_th) when unset
  std::vector<int> pc3_totals{25};
  std::vector<std::uint64_t> seeds{1};
  int train_episodes = kDeskTrainEpisodes;
  int eval_episodes = kDeskEvalEpisodes;
  int steps_per_episode = 500;
  TargetRule target_rule = TargetRule::ddqn;
  std::string output_dir = "out";
  EnvConfig env{};      // step length, D_max, PC1 count
  TrainConfig train{};  // learner hyperparameters; episode counts come from above

  /// Fills scenario-implied populations and validates the rest.
  void normalize() {
    if (scenario == Scenario::S1) pc3_totals = {25};
    if (scenario == Scenario::S2 && pc3_totals.empty()) pc3_totals = {0, 10, 20, 30, 40, 50};
    validate();
  }

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be nonempty");
    if (pc3_totals.empty()) throw std::invalid_argument("ExperimentConfig: pc3_totals must be nonempty");
    for (int n : pc3_totals)
      if (n < 0) throw std::invalid_argument("ExperimentConfig: pc3 totals must be nonnegative");
    if (scenario == Scenario::S1 && (pc3_totals.size() != 1 || pc3_totals[0] != 25))
      throw std::invalid_argument("ExperimentConfig: scenario S1 has exactly 25 PC3 transmitters");
    if (d_th_ms.empty()) throw std::invalid_argument("ExperimentConfig: d_th_ms must be nonempty");
    for (double d : d_th_ms)
      if (!(d > 0.0)) throw std::invalid_argument("ExperimentConfig: D_th must be positive");
    if (algorithm == Algorithm::morl) {
      if (alpha.empty()) throw std::invalid_argument("ExperimentConfig: alpha must be nonempty for morl");
      for (double a : alpha)
        if (a < 0.0 || a > 1.0) throw std::invalid_argument("ExperimentConfig: alpha must be in [0, 1]");
    }
    if (beta && *beta < 0.0) throw std::invalid_argument("ExperimentConfig: beta must be nonnegative");
    if (train_episodes <= 0 || eval_episodes <= 0 || steps_per_episode <= 0)
      throw std::invalid_argument("ExperimentConfig: episode counts must be positive");
    env.validate();
  }

  void apply_paper_scale() {
    train_episodes = kPaperTrainEpisodes;
    eval_episodes = kPaperEvalEpisodes;
  }

  /// Sweep parameter values: alpha for morl, D_th otherwise.
  const std::vector<double>& params() const { return algorithm == Algorithm::morl ? alpha : d_th_ms; }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"scenario", to_string(c.scenario)},
                     {"algorithm", to_string(c.algorithm)},
                     {"d_th_ms", c.d_th_ms},
                     {"alpha", c.alpha},
                     {"pc3_totals", c.pc3_totals},
                     {"seeds", c.seeds},
                     {"train_episodes", c.train_episodes},
                     {"eval_episodes", c.eval_episodes},
                     {"steps_per_episode", c.steps_per_episode},
                     {"target_rule", to_string(c.target_rule)},
                     {"output_dir", c.output_dir},
                     {"env", c.env},
                     {"gamma", c.train.gamma},
                     {"batch", c.train.batch},
                     {"lr", c.train.lr},
                     {"target_sync", c.train.target_sync},
                     {"replay_capacity", c.train.replay_capacity}};
  j["beta"] = c.beta ? nlohmann::json(*c.beta) : nlohmann::json(nullptr);
}

namespace detail {
template <typename T>
std::vector<T> scalar_or_list(const nlohmann::json& j, const char* key, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_array()) return v.get<std::vector<T>>();
  return {v.get<T>()};
}
}  // namespace detail

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  ExperimentConfig d;
  c.scenario = parse_scenario(j.value("scenario", std::string(to_string(d.scenario))));
  c.algorithm = parse_algorithm(j.value("algorithm", std::string(to_string(d.algorithm))));
  c.d_th_ms = detail::scalar_or_list<double>(j, "d_th_ms", d.d_th_ms);
  c.alpha = detail::scalar_or_list<double>(j, "alpha", d.alpha);
  c.pc3_totals = detail::scalar_or_list<int>(j, "pc3_totals", c.scenario == Scenario::S2 ? std::vector<int>{} : d.pc3_totals);
  c.seeds = detail::scalar_or_list<std::uint64_t>(j, "seeds", d.seeds);
  c.beta = j.contains("beta") && !j.at("beta").is_null() ? std::optional<double>(j.at("beta").get<double>()) : std::nullopt;
  c.train_episodes = j.value("train_episodes", d.train_episodes);
  c.eval_episodes = j.value("eval_episodes", d.eval_episodes);
  c.steps_per_episode = j.value("steps_per_episode", d.steps_per_episode);
  c.target_rule = parse_target_rule(j.value("target_rule", std::string(to_string(d.target_rule))));
  c.output_dir = j.value("output_dir", d.output_dir);
  c.env = j.contains("env") ? j.at("env").get<EnvConfig>() : d.env;
  c.train = d.train;
  c.train.gamma = j.value("gamma", d.train.gamma);
  c.train.batch = j.value("batch", d.train.batch);
  c.train.lr = j.value("lr", d.train.lr);
  c.train.target_sync = j.value("target_sync", d.train.target_sync);
  c.train.replay_capacity = j.value("replay_capacity", d.train.replay_capacity);
  c.normalize();
}

/// One (sweep point, seed) unit of work.
struct Cell {
  Algorithm algorithm = Algorithm::qasal;
  double d_th_ms = 2.0;
  double alpha = 0.0;
  double beta = 1.5;
  int pc3_total = 25;
  std::uint64_t seed = 1;
  std::uint64_t cell_seed = 0;
  std::string id;
};

inline std::string format_real(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Cells in row order: parameter, then PC3 total, then seed.
inline std::vector<Cell> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  const auto& params = cfg.params();
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t ki = 0; ki < cfg.pc3_totals.size(); ++ki) {
      const std::uint64_t sweep_index = pi * cfg.pc3_totals.size() + ki;
      for (auto seed : cfg.seeds) {
        Cell c;
        c.algorithm = cfg.algorithm;
        if (cfg.algorithm == Algorithm::morl) {
          c.alpha = params[pi];
          c.d_th_ms = cfg.d_th_ms.front();
        } else {
          c.d_th_ms = params[pi];
        }
        c.beta = cfg.beta.value_or(default_beta(c.d_th_ms));
        c.pc3_total = cfg.pc3_totals[ki];
        c.seed = seed;
        c.cell_seed = hash_seed({seed, sweep_index});
        std::ostringstream id;
        id << to_string(cfg.scenario) << '_' << to_string(c.algorithm) << '_';
        if (c.algorithm == Algorithm::morl) id << "alpha" << format_real(c.alpha);
        else id << "dth" << format_real(c.d_th_ms);
        id << "_pc3-" << c.pc3_total << "_seed-" << seed;
        if (c.algorithm != Algorithm::no_learning)
          id << "_ep-" << cfg.train_episodes << "x" << cfg.steps_per_episode << '_' << to_string(cfg.target_rule);
        c.id = id.str();
        cells.push_back(std::move(c));
      }
    }
  }
  return cells;
}

inline EnvConfig cell_env(const ExperimentConfig& cfg, const Cell& c, std::uint64_t seed) {
  EnvConfig e = with_pc3_total(cfg.env, c.pc3_total);
  e.D_th_ms = c.d_th_ms;
  e.D_max_ms = std::max(e.D_max_ms, c.d_th_ms);
  e.seed = seed;
  return e;
}

inline TrainConfig cell_train_config(const ExperimentConfig& cfg, const Cell& c) {
  TrainConfig t = cfg.train;
  t.episodes = cfg.train_episodes;
  t.steps_per_episode = cfg.steps_per_episode;
  t.d_th_ms = c.d_th_ms;
  t.beta = c.beta;
  t.alpha = c.alpha;
  t.seed = hash_seed({c.cell_seed, 0x74'7261'696eULL});
  t.target_rule = cfg.target_rule;
  return t;
}

struct ResultsRow {
  std::string scenario;
  std::string algorithm;
  double d_th_ms = 0.0;
  std::optional<double> alpha;
  int pc3_total = 0;
  std::uint64_t seed = 0;
  std::uint64_t cell_seed = 0;
  double avg_delay_pc1_ms = 0.0;        // running mean over all delay samples of the run
  double mean_smoothed_delay_ms = 0.0;  // mean of per-step smoothed delay
  double p95_smoothed_delay_ms = 0.0;
  double median_smoothed_delay_ms = 0.0;
  double mean_jfi = 0.0;
  double collision_rate = 0.0;
  double airtime_efficiency = 0.0;
  double violation_rate = 0.0;
};

inline constexpr int kResultsSchemaVersion = 1;
inline constexpr const char* kResultsHeader =
    "scenario,algorithm,d_th_ms,alpha,pc3_total,seed,cell_seed,avg_delay_pc1_ms,mean_smoothed_delay_ms,"
    "p95_smoothed_delay_ms,median_smoothed_delay_ms,mean_jfi,collision_rate,airtime_efficiency,violation_rate";
inline constexpr const char* kCurvesHeader = "cell,episode,mean_loss,mean_reward,mean_v,epsilon,lambda_sample";

/// RFC 4180 field quoting.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

inline std::string to_csv(const ResultsRow& r) {
  std::ostringstream os;
  os << csv_field(r.scenario) << ',' << csv_field(r.algorithm) << ',' << format_real(r.d_th_ms) << ','
     << (r.alpha ? format_real(*r.alpha) : std::string()) << ',' << r.pc3_total << ',' << r.seed << ','
     << r.cell_seed << ',' << format_real(r.avg_delay_pc1_ms) << ',' << format_real(r.mean_smoothed_delay_ms)
     << ',' << format_real(r.p95_smoothed_delay_ms) << ',' << format_real(r.median_smoothed_delay_ms) << ','
     << format_real(r.mean_jfi) << ',' << format_real(r.collision_rate) << ','
     << format_real(r.airtime_efficiency) << ',' << format_real(r.violation_rate);
  return os.str();
}

inline std::string to_csv(const std::string& cell, const EpisodeCurve& c) {
  std::ostringstream os;
  os << csv_field(cell) << ',' << c.episode << ',' << format_real(c.mean_loss) << ',' << format_real(c.mean_reward)
     << ',' << format_real(c.mean_v) << ',' << format_real(c.epsilon) << ',' << format_real(c.lambda_sample);
  return os.str();
}

/// Summary statistics of an evaluation trace. `final_avg_delay_ms` is the
/// environment's running mean after the last step.
inline ResultsRow summarize(const ExecutionTrace& trace, double d_th_ms) {
  if (trace.steps.empty()) throw std::invalid_argument("summarize: empty trace");
  ResultsRow r;
  r.d_th_ms = d_th_ms;
  std::vector<double> d_bar;
  d_bar.reserve(trace.steps.size());
  double jfi = 0.0;
  std::uint64_t attempts = 0, collisions = 0;
  Micros ok = 0, occupied = 0;
  std::size_t violations = 0;
  for (const auto& s : trace.steps) {
    d_bar.push_back(s.metrics.d_bar_pc1_ms);
    jfi += s.metrics.jfi;
    attempts += s.metrics.pc1_attempts;
    collisions += s.metrics.pc1_collisions;
    ok += s.metrics.pc1_success_us;
    occupied += s.metrics.pc1_occupied_us;
    violations += s.metrics.violation ? 1 : 0;
  }
  const auto n = static_cast<double>(trace.steps.size());
  r.avg_delay_pc1_ms = trace.steps.back().metrics.avg_delay_pc1_ms;
  double sum = 0.0;
  for (double d : d_bar) sum += d;
  r.mean_smoothed_delay_ms = sum / n;
  r.p95_smoothed_delay_ms = percentile(d_bar, 95.0);
  r.median_smoothed_delay_ms = percentile(d_bar, 50.0);
  r.mean_jfi = jfi / n;
  r.collision_rate = attempts ? static_cast<double>(collisions) / static_cast<double>(attempts) : 0.0;
  r.airtime_efficiency = occupied ? static_cast<double>(ok) / static_cast<double>(occupied) : 0.0;
  r.violation_rate = static_cast<double>(violations) / n;
  return r;
}

/// Evaluation run: one continuous rollout of eval_episodes * steps_per_episode
/// steps from a fresh environment, dual variable starting at 0.
inline ExecutionTrace evaluate_cell(const ExperimentConfig& cfg, const Cell& c, const Mlp* policy) {
  CoexEnv env(cell_env(cfg, c, hash_seed({c.cell_seed, 0x65'7661'6cULL})));
  DualController dual(cfg.train.dual);
  const auto steps = static_cast<std::size_t>(cfg.eval_episodes) * static_cast<std::size_t>(cfg.steps_per_episode);
  return execute(c.algorithm, policy, env, steps, dual, c.d_th_ms);
}

inline ResultsRow make_row(const ExperimentConfig& cfg, const Cell& c, const ExecutionTrace& trace) {
  ResultsRow r = summarize(trace, c.d_th_ms);
  r.scenario = std::string(to_string(cfg.scenario));
  r.algorithm = std::string(to_string(c.algorithm));
  if (c.algorithm == Algorithm::morl) r.alpha = c.alpha;
  r.pc3_total = c.pc3_total;
  r.seed = c.seed;
  r.cell_seed = c.cell_seed;
  return r;
}

/// Failure tied to one cell; `code` is a stable machine-readable tag.
class JobError : public std::runtime_error {
 public:
  JobError(std::string code, std::string cell, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)), cell_(std::move(cell)) {}
  const std::string& code() const { return code_; }
  const std::string& cell() const { return cell_; }

  std::string json_line() const {
    return nlohmann::json{{"error", code_}, {"cell", cell_}, {"message", what()}}.dump();
  }

 private:
  std::string code_, cell_;
};

enum class JobMode : std::uint8_t { train, eval, train_eval };

struct JobOptions {
  JobMode mode = JobMode::train_eval;
  bool resume = false;  // reuse existing checkpoints instead of retraining
  int jobs = 1;
  bool write_files = true;
  std::function<void(const Cell&, const ExecutionTrace&)> on_trace;  // called from worker threads
  std::function<void(const std::string&)> log;
};

struct JobResult {
  std::vector<ResultsRow> rows;
  std::vector<Cell> cells;
};

namespace detail {

struct CellOutput {
  std::optional<ResultsRow> row;
  std::vector<EpisodeCurve> curves;
  std::exception_ptr error;
};

inline std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, const Cell& c) {
  return std::filesystem::path(cfg.output_dir) / "checkpoints" / (c.id + ".ckpt");
}

inline CellOutput run_cell(const ExperimentConfig& cfg, const Cell& c, const JobOptions& opt) {
  CellOutput out;
  try {
    std::optional<Mlp> net;
    const auto ckpt = checkpoint_path(cfg, c);
    if (c.algorithm != Algorithm::no_learning) {
      const bool have = std::filesystem::exists(ckpt);
      if (opt.mode == JobMode::eval || (opt.resume && have)) {
        std::ifstream in(ckpt, std::ios::binary);
        if (!in) throw JobError("missing_checkpoint", c.id, "checkpoint not found: " + ckpt.string());
        try {
          net = load_checkpoint(in).net;
        } catch (const std::exception& e) {
          throw JobError("bad_checkpoint", c.id, e.what());
        }
        if (net->input_dim() != static_cast<int>(policy_input_dim(c.algorithm)))
          throw JobError("bad_checkpoint", c.id, "checkpoint input dimension does not match algorithm");
      } else {
        CoexEnv env(cell_env(cfg, c, c.cell_seed));
        TrainResult tr;
        try {
          tr = train(c.algorithm, env, cell_train_config(cfg, c));
        } catch (const NonFiniteError& e) {
          throw JobError("non_finite_loss", c.id, e.what());
        }
        out.curves = std::move(tr.curves);
        net = std::move(tr.net);
        if (opt.write_files) {
          std::ofstream os(ckpt, std::ios::binary | std::ios::trunc);
          if (!os) throw JobError("unwritable_output", c.id, "cannot write " + ckpt.string());
          save_checkpoint(os, *net, tr.optimizer_step);
        }
      }
    }
    if (opt.mode != JobMode::train) {
      const ExecutionTrace trace = evaluate_cell(cfg, c, net ? &*net : nullptr);
      out.row = make_row(cfg, c, trace);
      if (opt.on_trace) opt.on_trace(c, trace);
    }
  } catch (const JobError&) {
    out.error = std::current_exception();
  } catch (const std::exception& e) {
    out.error = std::make_exception_ptr(JobError("cell_failed", c.id, e.what()));
  }
  return out;
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw JobError("unwritable_output", "", "cannot write " + p.string());
  return os;
}

}  // namespace detail

/// Runs every cell of the configuration. Output files (when enabled):
/// results.csv, curves.csv, checkpoints/<cell>.ckpt, config.echo.json. Rows
/// are written in cell order regardless of `jobs`.
inline JobResult run_job(const ExperimentConfig& cfg, const JobOptions& opt = {}) {
  cfg.validate();
  JobResult result;
  result.cells = enumerate_cells(cfg);
  const std::size_t n = result.cells.size();

  std::ofstream results_csv, curves_csv;
  if (opt.write_files) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(cfg.output_dir) / "checkpoints", ec);
    if (ec) throw JobError("unwritable_output", "", "cannot create " + cfg.output_dir + ": " + ec.message());
    {
      auto echo = detail::open_output(fs::path(cfg.output_dir) / "config.echo.json");
      nlohmann::json j = cfg;
      j["results_schema"] = kResultsSchemaVersion;
      echo << j.dump(2) << '\n';
    }
    if (opt.mode != JobMode::train) {
      results_csv = detail::open_output(fs::path(cfg.output_dir) / "results.csv");
      results_csv << kResultsHeader << '\n' << std::flush;
    }
    if (opt.mode != JobMode::eval) {
      curves_csv = detail::open_output(fs::path(cfg.output_dir) / "curves.csv");
      curves_csv << kCurvesHeader << '\n' << std::flush;
    }
  }

  std::vector<std::optional<detail::CellOutput>> outputs(n);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      auto o = detail::run_cell(cfg, result.cells[i], opt);
      {
        std::lock_guard lock(mu);
        outputs[i] = std::move(o);
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::max(1, std::min<int>(opt.jobs, static_cast<int>(n)));
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);

  // Single writer: the calling thread drains outputs in order, working on
  // cells itself when running without a pool.
  std::exception_ptr first_error;
  for (std::size_t i = 0; i < n; ++i) {
    if (pool.empty()) {
      std::size_t idx = next++;
      if (idx < n) outputs[idx] = detail::run_cell(cfg, result.cells[idx], opt);
    }
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return outputs[i].has_value(); });
    detail::CellOutput o = std::move(*outputs[i]);
    lock.unlock();
    if (o.error) {
      if (!first_error) first_error = o.error;
      continue;
    }
    if (opt.write_files) {
      for (const auto& c : o.curves) curves_csv << to_csv(result.cells[i].id, c) << '\n';
      curves_csv.flush();
      if (o.row) results_csv << to_csv(*o.row) << '\n' << std::flush;
    }
    if (opt.log) opt.log("done " + result.cells[i].id);
    if (o.row) result.rows.push_back(std::move(*o.row));
    if (first_error) break;
  }
  next = n;
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return result;
}

}  // namespace coex
