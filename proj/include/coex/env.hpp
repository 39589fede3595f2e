#pragma once

// Discrete-time coexistence environment: one step = step_us of simulated
// channel time under a contention-window decision.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "coex/mac_sim.hpp"
#include "coex/metrics.hpp"

namespace coex {

inline constexpr int kNumActions = 7;
inline constexpr std::size_t kStateDim = 8;

/// CW decision index in {0, ..., 6}.
class CpmAction {
 public:
  constexpr explicit CpmAction(int a) : a_(a) {
    if (a < 0 || a >= kNumActions) throw std::out_of_range("CpmAction: index must be in [0, 6]");
  }
  constexpr int value() const { return a_; }
  constexpr bool operator==(const CpmAction&) const = default;

 private:
  int a_;
};

/// CW_max = 2^(a + b) - 1 with b = 0 for PC1 and b = 4 for PC3.
constexpr int action_to_cw(CpmAction a, PriorityClass pclass) {
  const int b = pclass == PriorityClass::PC1 ? 0 : 4;
  return (1 << (a.value() + b)) - 1;
}

struct EnvConfig {
  Micros step_us = 2500;
  double D_th_ms = 2.0;
  double D_max_ms = 10.0;
  int n_pc3_nru = 13;
  int n_pc3_wifi = 12;
  int n_pc1 = 1;
  std::uint64_t seed = 1;
  // Not part of the JSON surface; exposed for tests and sweeps.
  SimClock clock{};
  Micros airtime_window_us = 50'000;

  void validate() const {
    if (step_us <= 0) throw std::invalid_argument("EnvConfig: step_us must be positive");
    if (!(D_th_ms > 0.0)) throw std::invalid_argument("EnvConfig: D_th_ms must be positive");
    if (!(D_max_ms >= D_th_ms)) throw std::invalid_argument("EnvConfig: D_max_ms must be >= D_th_ms");
    if (n_pc3_nru < 0 || n_pc3_wifi < 0 || n_pc1 < 0)
      throw std::invalid_argument("EnvConfig: transmitter counts must be nonnegative");
    if (airtime_window_us <= 0) throw std::invalid_argument("EnvConfig: airtime window must be positive");
  }

  std::vector<TransmitterSpec> transmitters() const {
    std::vector<TransmitterSpec> out;
    int id = 0;
    for (int i = 0; i < n_pc1; ++i) out.push_back(make_transmitter(id++, Network::NRU, PriorityClass::PC1));
    for (int i = 0; i < n_pc3_nru; ++i) out.push_back(make_transmitter(id++, Network::NRU, PriorityClass::PC3));
    for (int i = 0; i < n_pc3_wifi; ++i) out.push_back(make_transmitter(id++, Network::WiFi, PriorityClass::PC3));
    return out;
  }
};

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"step_us", c.step_us},       {"D_th_ms", c.D_th_ms}, {"D_max_ms", c.D_max_ms},
                     {"n_pc3_nru", c.n_pc3_nru},   {"n_pc3_wifi", c.n_pc3_wifi}, {"n_pc1", c.n_pc1},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  EnvConfig d;
  c.step_us = j.value("step_us", d.step_us);
  c.D_th_ms = j.value("D_th_ms", d.D_th_ms);
  c.D_max_ms = j.value("D_max_ms", d.D_max_ms);
  c.n_pc3_nru = j.value("n_pc3_nru", d.n_pc3_nru);
  c.n_pc3_wifi = j.value("n_pc3_wifi", d.n_pc3_wifi);
  c.n_pc1 = j.value("n_pc1", d.n_pc1);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

/// Splits a PC3 total evenly, NR-U taking the odd one.
inline EnvConfig with_pc3_total(EnvConfig c, int total) {
  if (total < 0) throw std::invalid_argument("with_pc3_total: negative count");
  c.n_pc3_nru = (total + 1) / 2;
  c.n_pc3_wifi = total / 2;
  return c;
}

/// Features: avg delay, smoothed delay (both / D_max), PC1 collision rate,
/// busy ratio, trailing violation rate, JFI, delay trend, short collision avg.
using StateVector = std::array<double, kStateDim>;

struct AugmentedState {
  StateVector base{};
  std::vector<double> lambdas;  // normalized by lambda_max

  std::size_t dim() const { return base.size() + lambdas.size(); }
  std::vector<double> to_vector() const {
    std::vector<double> v(base.begin(), base.end());
    v.insert(v.end(), lambdas.begin(), lambdas.end());
    return v;
  }
};

struct FeatureParams {
  double D_max_ms = 10.0;
  std::size_t violation_window = 5;  // T0
  std::size_t collision_window = 5;
};

/// Builds the state from the chronological step history (latest last).
inline StateVector featurize(std::span<const StepMetrics> history, const FeatureParams& p) {
  if (history.empty()) throw std::invalid_argument("featurize: need at least one completed step");
  auto clamp01 = [](double x) { return std::clamp(x, 0.0, 1.0); };
  const auto& cur = history.back();
  StateVector s{};
  s[0] = clamp01(cur.avg_delay_pc1_ms / p.D_max_ms);
  s[1] = clamp01(cur.d_bar_pc1_ms / p.D_max_ms);
  s[2] = clamp01(cur.collision_rate);
  s[3] = clamp01(cur.busy_airtime_ratio);

  const std::size_t nv = std::min(p.violation_window, history.size());
  std::size_t viol = 0;
  for (std::size_t i = history.size() - nv; i < history.size(); ++i) viol += history[i].violation ? 1 : 0;
  s[4] = static_cast<double>(viol) / static_cast<double>(nv);

  s[5] = clamp01(cur.jfi);
  s[6] = history.size() < 2
             ? 0.0
             : std::clamp((cur.d_bar_pc1_ms - history[history.size() - 2].d_bar_pc1_ms) / p.D_max_ms, -1.0, 1.0);

  const std::size_t nc = std::min(p.collision_window, history.size());
  double coll = 0.0;
  for (std::size_t i = history.size() - nc; i < history.size(); ++i) coll += history[i].collision_rate;
  s[7] = clamp01(coll / static_cast<double>(nc));
  return s;
}

inline AugmentedState augment(const StateVector& s, std::span<const double> lambdas, double lambda_max) {
  if (!(lambda_max > 0.0)) throw std::invalid_argument("augment: lambda_max must be positive");
  AugmentedState out{s, {}};
  out.lambdas.reserve(lambdas.size());
  for (double l : lambdas) out.lambdas.push_back(std::clamp(l / lambda_max, 0.0, 1.0));
  return out;
}

/// Raw objective signals of one step.
struct StepSignals {
  double jfi = 1.0;
  double d_bar_pc1_ms = 0.0;
  bool violation = false;
};

struct StepResult {
  StateVector state{};
  StepSignals signals;
  StepMetrics metrics;
};

class CoexEnv {
 public:
  CoexEnv() = default;
  explicit CoexEnv(const EnvConfig& cfg) { reset(cfg); }

  StateVector reset(const EnvConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    sim_.emplace(cfg.transmitters(), cfg.seed, cfg.clock);
    trackers_.clear();
    for (const auto& s : sim_->specs())
      if (s.pclass == PriorityClass::PC1) trackers_.emplace_back(s.id);
    const auto window_steps = static_cast<std::size_t>(std::max<Micros>(1, cfg.airtime_window_us / cfg.step_us));
    airtime_ = AirtimeWindow(window_steps);
    history_.clear();
    steps_ = 0;
    return StateVector{};
  }

  /// Re-seeds and restarts with the current configuration.
  StateVector reset(std::uint64_t seed) {
    require_init();
    EnvConfig c = cfg_;
    c.seed = seed;
    return reset(c);
  }

  StepResult step(CpmAction a) {
    require_init();
    sim_->set_cw_limits(PriorityClass::PC1, action_to_cw(a, PriorityClass::PC1));
    sim_->set_cw_limits(PriorityClass::PC3, action_to_cw(a, PriorityClass::PC3));
    last_timeline_ = sim_->advance(cfg_.step_us);
    for (auto& t : trackers_) t.update(last_timeline_);
    StepResult r;
    r.metrics = step_metrics(last_timeline_, sim_->specs(), trackers_, cfg_.D_th_ms, airtime_);
    history_.push_back(r.metrics);
    if (history_.size() > kHistory) history_.erase(history_.begin());
    ++steps_;
    r.state = featurize(history_, feature_params());
    r.signals = {r.metrics.jfi, r.metrics.d_bar_pc1_ms, r.metrics.violation};
    return r;
  }

  StepResult step(int a) { return step(CpmAction(a)); }

  bool initialized() const { return sim_.has_value(); }
  const EnvConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }
  const MacSimulator& simulator() const { return *sim_; }
  std::span<const DelayTracker> pc1_trackers() const { return trackers_; }
  const ChannelTimeline& last_timeline() const { return last_timeline_; }
  FeatureParams feature_params() const { return {cfg_.D_max_ms, 5, 5}; }

 private:
  static constexpr std::size_t kHistory = 8;

  void require_init() const {
    if (!sim_) throw std::logic_error("CoexEnv: reset() must be called before step()");
  }

  EnvConfig cfg_{};
  std::optional<MacSimulator> sim_;
  std::vector<DelayTracker> trackers_;
  AirtimeWindow airtime_{20};
  std::vector<StepMetrics> history_;
  ChannelTimeline last_timeline_;
  std::uint64_t steps_ = 0;
};

/// Trajectory CSV: step, action, features..., jfi, d_bar_pc1_ms, violation.
inline void write_trajectory_header(std::ostream& os, std::size_t n_features = kStateDim) {
  os << "step,action";
  for (std::size_t i = 0; i < n_features; ++i) os << ",f" << i;
  os << ",jfi,d_bar_pc1_ms,violation\n";
}

inline void write_trajectory_row(std::ostream& os, std::uint64_t step, int action, std::span<const double> features,
                                 const StepSignals& sig) {
  os << step << ',' << action;
  for (double f : features) os << ',' << f;
  os << ',' << sig.jfi << ',' << sig.d_bar_pc1_ms << ',' << (sig.violation ? 1 : 0) << '\n';
}

}  // namespace coex
