#pragma once

// Coexistence parameter controllers: scalarized multi-objective DDQN (MORL),
// primal-dual DDQN, and the state-augmented constrained DDQN (QaSAL), plus the
// dual-variable machinery they share.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "coex/env.hpp"
#include "coex/nn.hpp"
#include "coex/rng.hpp"

namespace coex {

enum class Algorithm : std::uint8_t { qasal, primal_dual, morl, no_learning };
enum class TargetRule : std::uint8_t { ddqn, dqn_max };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::qasal: return "qasal";
    case Algorithm::primal_dual: return "primal_dual";
    case Algorithm::morl: return "morl";
    case Algorithm::no_learning: return "no_learning";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "qasal") return Algorithm::qasal;
  if (s == "primal_dual") return Algorithm::primal_dual;
  if (s == "morl") return Algorithm::morl;
  if (s == "no_learning") return Algorithm::no_learning;
  throw std::invalid_argument("unknown algorithm '" + std::string(s) + "'");
}

inline std::string_view to_string(TargetRule r) { return r == TargetRule::ddqn ? "ddqn" : "dqn_max"; }

inline TargetRule parse_target_rule(std::string_view s) {
  if (s == "ddqn") return TargetRule::ddqn;
  if (s == "dqn_max") return TargetRule::dqn_max;
  throw std::invalid_argument("unknown target rule '" + std::string(s) + "'");
}

/// Index of the largest value; ties go to the lowest index.
inline int argmax(std::span<const double> q) {
  if (q.empty()) throw std::invalid_argument("argmax: empty input");
  int best = 0;
  for (int i = 1; i < static_cast<int>(q.size()); ++i)
    if (q[i] > q[best]) best = i;
  return best;
}

inline int epsilon_greedy(std::span<const double> q, double eps, Rng& rng) {
  if (q.empty()) throw std::invalid_argument("epsilon_greedy: empty Q vector");
  if (eps > 0.0 && rng.uniform01() < eps) return static_cast<int>(rng.uniform_int(q.size() - 1));
  return argmax(q);
}

/// Bootstrap target. ddqn: r + gamma * Q_target(s', argmax Q_online(s')).
/// dqn_max: r + gamma * max Q_target(s').
inline double ddqn_target(double r, std::span<const double> q_online_next, std::span<const double> q_target_next,
                          double gamma, TargetRule rule = TargetRule::ddqn) {
  if (q_target_next.empty() || q_online_next.size() != q_target_next.size())
    throw std::invalid_argument("ddqn_target: Q vectors must be nonempty and equal length");
  const int a = rule == TargetRule::ddqn ? argmax(q_online_next) : argmax(q_target_next);
  return r + gamma * q_target_next[a];
}

/// lambda * (D_th - d_bar) / D_th: negative when the delay exceeds the threshold.
inline double violation_term(double lambda, double d_bar_ms, double d_th_ms) {
  if (lambda < 0.0) throw std::invalid_argument("violation_term: lambda must be nonnegative");
  if (!(d_th_ms > 0.0)) throw std::invalid_argument("violation_term: D_th must be positive");
  return lambda * (d_th_ms - d_bar_ms) / d_th_ms;
}

/// Projected dual step over one epoch:
/// clamp(lambda + eta/T0 * sum((d_bar - D_th) / D_th), 0, lambda_max), T0 = window size.
inline double dual_update(double lambda, std::span<const double> d_bar_window_ms, double d_th_ms, double eta,
                          double lambda_max) {
  if (d_bar_window_ms.empty()) throw std::invalid_argument("dual_update: empty window");
  if (!(d_th_ms > 0.0)) throw std::invalid_argument("dual_update: D_th must be positive");
  double sum = 0.0;
  for (double d : d_bar_window_ms) sum += (d - d_th_ms) / d_th_ms;
  const double next = lambda + eta / static_cast<double>(d_bar_window_ms.size()) * sum;
  return std::clamp(next, 0.0, lambda_max);
}

/// Violation-rate driven step size, linear between eta_min and eta_max.
inline double adaptive_eta(double rho, double eta_min = 0.01, double eta_max = 0.2) {
  if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("adaptive_eta: rho must be in [0, 1]");
  return eta_min + (eta_max - eta_min) * rho;
}

/// JFI minus a penalty for leaving delay budget unused.
inline double shaped_reward(double jfi, double d_bar_ms, double d_th_ms, double beta) {
  if (!(d_th_ms > 0.0)) throw std::invalid_argument("shaped_reward: D_th must be positive");
  if (beta < 0.0) throw std::invalid_argument("shaped_reward: beta must be nonnegative");
  return jfi - beta * std::max(0.0, (d_th_ms - d_bar_ms) / d_th_ms);
}

/// (1 - alpha) * JFI + alpha * (1 - clamp(d_bar / D_max, 0, 1)).
inline double scalarized_reward(double jfi, double d_bar_ms, double d_max_ms, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("scalarized_reward: alpha must be in [0, 1]");
  if (!(d_max_ms > 0.0)) throw std::invalid_argument("scalarized_reward: D_max must be positive");
  const double d = std::clamp(d_bar_ms / d_max_ms, 0.0, 1.0);
  return (1.0 - alpha) * jfi + alpha * (1.0 - d);
}

struct DualConfig {
  double lambda_max = 5.0;
  std::size_t T0 = 5;
  double eta_min = 0.01;
  double eta_max = 0.2;
};

/// Record of one completed dual epoch.
struct DualEpoch {
  double lambda_before = 0.0;
  double lambda_after = 0.0;
  double eta = 0.0;
  double violation_rate = 0.0;
  double max_d_bar_ms = 0.0;
};

/// Single-constraint dual variable with epoch-wise adaptive updates.
class DualController {
 public:
  explicit DualController(DualConfig cfg = {}, double initial_lambda = 0.0) : cfg_(cfg) {
    if (cfg_.T0 == 0) throw std::invalid_argument("DualController: T0 must be positive");
    if (!(cfg_.lambda_max > 0.0)) throw std::invalid_argument("DualController: lambda_max must be positive");
    if (cfg_.eta_min < 0.0 || cfg_.eta_max < cfg_.eta_min) throw std::invalid_argument("DualController: bad eta range");
    set_lambda(initial_lambda);
  }

  const DualConfig& config() const { return cfg_; }
  double lambda() const { return lambda_[0]; }
  std::span<const double> lambdas() const { return lambda_; }
  void set_lambda(double l) { lambda_[0] = std::clamp(l, 0.0, cfg_.lambda_max); }

  /// Adds one step; at the end of every T0-step epoch applies the dual update.
  std::optional<DualEpoch> observe(double d_bar_ms, double d_th_ms) {
    window_.push_back(d_bar_ms);
    flags_.push_back(d_bar_ms > d_th_ms);
    if (window_.size() < cfg_.T0) return std::nullopt;
    DualEpoch e;
    e.lambda_before = lambda_[0];
    e.violation_rate = violation_rate(flags_);
    e.eta = adaptive_eta(e.violation_rate, cfg_.eta_min, cfg_.eta_max);
    e.max_d_bar_ms = *std::max_element(window_.begin(), window_.end());
    lambda_[0] = dual_update(lambda_[0], window_, d_th_ms, e.eta, cfg_.lambda_max);
    e.lambda_after = lambda_[0];
    window_.clear();
    flags_.clear();
    return e;
  }

  void reset(double initial_lambda = 0.0) {
    window_.clear();
    flags_.clear();
    set_lambda(initial_lambda);
  }

 private:
  DualConfig cfg_;
  std::vector<double> lambda_ = std::vector<double>(1, 0.0);
  std::vector<double> window_;
  std::vector<bool> flags_;
};

struct ReplayTransition {
  std::vector<double> s_tilde;
  int a = 0;
  double r = 0.0;
  double v = 0.0;
  std::vector<double> s_tilde_next;
};

/// Fixed-capacity ring of transitions with uniform sampling.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t state_dim)
      : capacity_(capacity), dim_(state_dim), s_(capacity * state_dim), s_next_(capacity * state_dim),
        a_(capacity), r_(capacity), v_(capacity) {
    if (capacity == 0 || state_dim == 0) throw std::invalid_argument("ReplayBuffer: capacity and dim must be positive");
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t state_dim() const { return dim_; }

  void push(std::span<const double> s, int a, double r, double v, std::span<const double> s_next) {
    if (s.size() != dim_ || s_next.size() != dim_) throw std::invalid_argument("ReplayBuffer: state dimension mismatch");
    if (a < 0 || a >= kNumActions) throw std::out_of_range("ReplayBuffer: action out of range");
    if (!std::isfinite(r) || !std::isfinite(v)) throw NonFiniteError("ReplayBuffer: non-finite reward");
    std::copy(s.begin(), s.end(), s_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
    std::copy(s_next.begin(), s_next.end(), s_next_.begin() + static_cast<std::ptrdiff_t>(head_ * dim_));
    a_[head_] = a;
    r_[head_] = r;
    v_[head_] = v;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  void push(const ReplayTransition& t) { push(t.s_tilde, t.a, t.r, t.v, t.s_tilde_next); }

  /// i-th stored transition in insertion order among those still held.
  ReplayTransition at(std::size_t i) const {
    if (i >= size_) throw std::out_of_range("ReplayBuffer::at");
    const std::size_t slot = size_ < capacity_ ? i : (head_ + i) % capacity_;
    return get_slot(slot);
  }

  std::size_t sample_slot(Rng& rng) const {
    if (size_ == 0) throw std::logic_error("ReplayBuffer: sampling from empty buffer");
    return static_cast<std::size_t>(rng.uniform_int(size_ - 1));
  }

  ReplayTransition get_slot(std::size_t slot) const {
    ReplayTransition t;
    t.s_tilde.assign(s_.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
                     s_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
    t.s_tilde_next.assign(s_next_.begin() + static_cast<std::ptrdiff_t>(slot * dim_),
                          s_next_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * dim_));
    t.a = a_[slot];
    t.r = r_[slot];
    t.v = v_[slot];
    return t;
  }

  std::span<const double> state(std::size_t slot) const { return {s_.data() + slot * dim_, dim_}; }
  std::span<const double> next_state(std::size_t slot) const { return {s_next_.data() + slot * dim_, dim_}; }
  int action(std::size_t slot) const { return a_[slot]; }
  double reward(std::size_t slot) const { return r_[slot]; }
  double violation(std::size_t slot) const { return v_[slot]; }

 private:
  std::size_t capacity_, dim_;
  std::vector<double> s_, s_next_;
  std::vector<int> a_;
  std::vector<double> r_, v_;
  std::size_t head_ = 0, size_ = 0;
};

struct TrainConfig {
  int episodes = 10000;
  int steps_per_episode = 500;
  double gamma = 0.99;
  double eps_start = 1.0;
  double eps_end = 0.01;
  double eps_decay_fraction = 0.8;
  int target_sync = 1000;  // gradient steps between target-network copies
  int batch = 16;
  std::size_t replay_capacity = 100'000;
  double lr = 1e-5;
  std::vector<int> hidden = {128, 128, 128};
  double d_th_ms = 2.0;
  double beta = 1.5;
  double alpha = 0.5;
  DualConfig dual{};
  std::uint64_t seed = 1;
  TargetRule target_rule = TargetRule::ddqn;

  void validate() const {
    if (episodes <= 0 || steps_per_episode <= 0) throw std::invalid_argument("TrainConfig: episodes and steps must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrainConfig: gamma must be in [0, 1]");
    if (!(eps_end >= 0.0 && eps_end <= eps_start && eps_start <= 1.0))
      throw std::invalid_argument("TrainConfig: need 0 <= eps_end <= eps_start <= 1");
    if (batch <= 0 || static_cast<std::size_t>(batch) > replay_capacity)
      throw std::invalid_argument("TrainConfig: need 0 < batch <= replay capacity");
    if (target_sync <= 0) throw std::invalid_argument("TrainConfig: target_sync must be positive");
    if (!(d_th_ms > 0.0)) throw std::invalid_argument("TrainConfig: D_th must be positive");
    if (beta < 0.0) throw std::invalid_argument("TrainConfig: beta must be nonnegative");
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("TrainConfig: alpha must be in [0, 1]");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  }
};

/// Linear decay over the first eps_decay_fraction of episodes, then flat.
inline double epsilon_at(const TrainConfig& cfg, int episode) {
  const double horizon = cfg.eps_decay_fraction * cfg.episodes;
  if (horizon <= 0.0) return cfg.eps_end;
  const double frac = static_cast<double>(episode) / horizon;
  if (frac >= 1.0) return cfg.eps_end;
  return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac;
}

inline std::size_t policy_input_dim(Algorithm alg) { return alg == Algorithm::qasal ? kStateDim + 1 : kStateDim; }

/// Network input for a given algorithm; QaSAL appends lambda / lambda_max.
inline std::vector<double> policy_input(Algorithm alg, const StateVector& s, double lambda, double lambda_max) {
  if (alg == Algorithm::qasal) {
    const double l = lambda;
    return augment(s, std::span<const double>(&l, 1), lambda_max).to_vector();
  }
  return {s.begin(), s.end()};
}

/// Reward bookkeeping of one stored transition.
struct RewardSplit {
  double r = 0.0;
  double v = 0.0;
};

/// qasal stores (shaped reward, violation term) separately; primal_dual stores
/// the Lagrangian reward JFI + violation term of the current lambda; morl has
/// no v.
inline RewardSplit transition_reward(Algorithm alg, const StepSignals& sig, double lambda, const TrainConfig& cfg,
                                     double d_max_ms) {
  switch (alg) {
    case Algorithm::qasal:
      return {shaped_reward(sig.jfi, sig.d_bar_pc1_ms, cfg.d_th_ms, cfg.beta),
              violation_term(lambda, sig.d_bar_pc1_ms, cfg.d_th_ms)};
    case Algorithm::primal_dual:
      return {sig.jfi + violation_term(lambda, sig.d_bar_pc1_ms, cfg.d_th_ms), 0.0};
    case Algorithm::morl: return {scalarized_reward(sig.jfi, sig.d_bar_pc1_ms, d_max_ms, cfg.alpha), 0.0};
    case Algorithm::no_learning: break;
  }
  throw std::invalid_argument("transition_reward: no_learning has no reward");
}

/// Online/target network pair, replay memory and optimizer.
class DdqnLearner {
 public:
  DdqnLearner(std::size_t input_dim, const TrainConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), replay_(cfg.replay_capacity, input_dim), rng_(hash_seed({seed, 0x5eed'0001ULL})) {
    std::vector<int> dims{static_cast<int>(input_dim)};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(kNumActions);
    online_ = Mlp::he_uniform(dims, hash_seed({seed, 0x5eed'0002ULL}));
    target_ = copy_params(online_);
    adam_ = Adam(online_.num_params(), AdamConfig{cfg.lr});
  }

  int act(std::span<const double> x, double eps) {
    const Eigen::VectorXd q = online_.forward(x);
    return epsilon_greedy(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), eps, rng_);
  }

  ReplayBuffer& replay() { return replay_; }
  const ReplayBuffer& replay() const { return replay_; }
  const Mlp& online() const { return online_; }
  const Mlp& target() const { return target_; }
  std::uint64_t gradient_steps() const { return adam_.step_count(); }
  Rng& rng() { return rng_; }

  /// One minibatch update on mean (y + v - Q(s, a))^2. Returns the loss, or
  /// nothing while the buffer holds fewer than `batch` transitions.
  std::optional<double> train_step() {
    const auto B = static_cast<std::size_t>(cfg_.batch);
    if (replay_.size() < B) return std::nullopt;
    const auto dim = static_cast<Eigen::Index>(replay_.state_dim());
    QBatch batch;
    batch.inputs.resize(dim, static_cast<Eigen::Index>(B));
    Eigen::MatrixXd next(dim, static_cast<Eigen::Index>(B));
    std::vector<std::size_t> slots(B);
    for (std::size_t j = 0; j < B; ++j) {
      slots[j] = replay_.sample_slot(rng_);
      const auto s = replay_.state(slots[j]);
      const auto sn = replay_.next_state(slots[j]);
      for (Eigen::Index k = 0; k < dim; ++k) {
        batch.inputs(k, static_cast<Eigen::Index>(j)) = s[k];
        next(k, static_cast<Eigen::Index>(j)) = sn[k];
      }
    }
    const Eigen::MatrixXd q_target = target_.forward_batch(next);
    Eigen::MatrixXd q_online;
    if (cfg_.target_rule == TargetRule::ddqn) q_online = online_.forward_batch(next);
    else q_online = q_target;
    batch.actions.resize(B);
    batch.targets.resize(B);
    for (std::size_t j = 0; j < B; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const Eigen::VectorXd qo = q_online.col(col);
      const Eigen::VectorXd qt = q_target.col(col);
      const double y = ddqn_target(replay_.reward(slots[j]), {qo.data(), static_cast<std::size_t>(qo.size())},
                                   {qt.data(), static_cast<std::size_t>(qt.size())}, cfg_.gamma, cfg_.target_rule);
      batch.actions[j] = replay_.action(slots[j]);
      batch.targets[j] = y + replay_.violation(slots[j]);
    }
    const LossGradient lg = grad_squared_loss(online_, batch);
    if (!std::isfinite(lg.loss)) throw NonFiniteError("training loss became non-finite");
    adam_.step(online_, lg.grad);
    if (adam_.step_count() % static_cast<std::uint64_t>(cfg_.target_sync) == 0) target_ = copy_params(online_);
    return lg.loss;
  }

 private:
  TrainConfig cfg_;
  ReplayBuffer replay_;
  Rng rng_;
  Mlp online_, target_;
  Adam adam_;
};

struct EpisodeCurve {
  int episode = 0;
  double mean_loss = 0.0;
  double mean_reward = 0.0;
  double mean_v = 0.0;
  double epsilon = 0.0;
  double lambda_sample = 0.0;
};

struct TrainResult {
  Mlp net;
  std::uint64_t optimizer_step = 0;
  std::size_t replay_size = 0;
  std::vector<EpisodeCurve> curves;
  double final_lambda = 0.0;  // primal-dual only
};

using EpisodeCallback = std::function<void(const EpisodeCurve&)>;

/// DDQN training loop shared by the three learners. The environment must have
/// been reset once with the scenario configuration; every episode re-seeds it.
///   qasal:       lambda ~ U[0, lambda_max] per episode, state augmented,
///                stores (r = shaped reward, v = violation term)
///   primal_dual: plain state, stores JFI + v(lambda) with lambda carried across
///                episodes and updated every T0 steps
///   morl:        plain state, r = scalarized reward, v = 0
inline TrainResult train(Algorithm alg, CoexEnv& env, const TrainConfig& cfg, const EpisodeCallback& on_episode = {}) {
  if (alg == Algorithm::no_learning) throw std::invalid_argument("train: no_learning has nothing to train");
  cfg.validate();
  if (!env.initialized()) throw std::logic_error("train: environment not initialized");
  const double d_max = env.config().D_max_ms;
  DdqnLearner learner(policy_input_dim(alg), cfg, cfg.seed);
  DualController dual(cfg.dual);
  Rng lambda_rng(hash_seed({cfg.seed, 0x1a3bdaULL}));

  TrainResult out;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const double eps = epsilon_at(cfg, ep);
    StateVector s = env.reset(hash_seed({cfg.seed, 0x7ea1'17ULL, static_cast<std::uint64_t>(ep)}));
    double lambda_ep = 0.0;
    if (alg == Algorithm::qasal) lambda_ep = lambda_rng.uniform(0.0, cfg.dual.lambda_max);

    EpisodeCurve curve;
    curve.episode = ep;
    curve.epsilon = eps;
    curve.lambda_sample = alg == Algorithm::primal_dual ? dual.lambda() : lambda_ep;
    double loss_sum = 0.0;
    int loss_n = 0;

    std::vector<double> x = policy_input(alg, s, lambda_ep, cfg.dual.lambda_max);
    for (int t = 0; t < cfg.steps_per_episode; ++t) {
      const int a = learner.act(x, eps);
      const StepResult res = env.step(CpmAction(a));
      const double lambda_now = alg == Algorithm::primal_dual ? dual.lambda() : lambda_ep;
      const auto [r, v] = transition_reward(alg, res.signals, lambda_now, cfg, d_max);
      if (alg == Algorithm::primal_dual) dual.observe(res.signals.d_bar_pc1_ms, cfg.d_th_ms);
      std::vector<double> x_next = policy_input(alg, res.state, lambda_ep, cfg.dual.lambda_max);
      learner.replay().push(x, a, r, v, x_next);
      if (auto loss = learner.train_step()) {
        loss_sum += *loss;
        ++loss_n;
      }
      curve.mean_reward += r;
      curve.mean_v += v;
      x = std::move(x_next);
    }
    curve.mean_reward /= cfg.steps_per_episode;
    curve.mean_v /= cfg.steps_per_episode;
    curve.mean_loss = loss_n ? loss_sum / loss_n : 0.0;
    out.curves.push_back(curve);
    if (on_episode) on_episode(curve);
  }
  out.net = learner.online();
  out.optimizer_step = learner.gradient_steps();
  out.replay_size = learner.replay().size();
  out.final_lambda = dual.lambda();
  return out;
}

inline TrainResult train_qasal(CoexEnv& env, const TrainConfig& cfg, const EpisodeCallback& cb = {}) {
  return train(Algorithm::qasal, env, cfg, cb);
}
inline TrainResult train_primal_dual(CoexEnv& env, const TrainConfig& cfg, const EpisodeCallback& cb = {}) {
  return train(Algorithm::primal_dual, env, cfg, cb);
}
inline TrainResult train_morl(CoexEnv& env, const TrainConfig& cfg, const EpisodeCallback& cb = {}) {
  return train(Algorithm::morl, env, cfg, cb);
}

/// Fixed decision of the non-adaptive baseline: PC1 CW_max 7, PC3 CW_max 127.
constexpr CpmAction no_learning_policy() { return CpmAction(3); }

struct ExecutionStep {
  int action = 0;
  double lambda = 0.0;  // dual variable seen by the policy at this step
  StepMetrics metrics;
};

struct ExecutionTrace {
  std::vector<ExecutionStep> steps;
  std::vector<DualEpoch> epochs;
};

/// Greedy rollout on the current environment (no reset). The dual controller
/// is stepped for every algorithm so its trace is comparable; only QaSAL
/// feeds lambda back into the policy input.
inline ExecutionTrace execute(Algorithm alg, const Mlp* policy, CoexEnv& env, std::size_t steps,
                              DualController& dual, double d_th_ms, StateVector initial_state = {}) {
  if (alg != Algorithm::no_learning && policy == nullptr) throw std::invalid_argument("execute: policy required");
  if (policy && policy->input_dim() != static_cast<int>(policy_input_dim(alg)))
    throw std::invalid_argument("execute: policy input dimension does not match algorithm");
  ExecutionTrace trace;
  trace.steps.reserve(steps);
  StateVector s = initial_state;
  const double lmax = dual.config().lambda_max;
  for (std::size_t t = 0; t < steps; ++t) {
    int a = no_learning_policy().value();
    if (alg != Algorithm::no_learning) {
      const auto x = policy_input(alg, s, dual.lambda(), lmax);
      const Eigen::VectorXd q = policy->forward(x);
      a = argmax({q.data(), static_cast<std::size_t>(q.size())});
    }
    const double lambda_seen = dual.lambda();
    const StepResult res = env.step(CpmAction(a));
    trace.steps.push_back({a, lambda_seen, res.metrics});
    if (auto e = dual.observe(res.signals.d_bar_pc1_ms, d_th_ms)) trace.epochs.push_back(*e);
    s = res.state;
  }
  return trace;
}

/// Execution phase of QaSAL: lambda starts at 0 and follows the epoch updates.
inline ExecutionTrace execute_qasal(CoexEnv& env, const Mlp& policy, DualController& dual, std::size_t steps,
                                    double d_th_ms) {
  return execute(Algorithm::qasal, &policy, env, steps, dual, d_th_ms);
}

}  // namespace coex
