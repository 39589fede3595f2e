#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "coex/agents.hpp"

using namespace coex;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.episodes = 2;
  c.steps_per_episode = 20;
  c.batch = 4;
  c.replay_capacity = 1000;
  c.hidden = {16, 16};
  c.target_sync = 10;
  c.seed = 3;
  return c;
}

EnvConfig small_env() { return with_pc3_total(EnvConfig{}, 4); }

}  // namespace

TEST(EpsilonGreedy, GreedyAndTieBreak) {
  Rng rng(1);
  const std::array<double, 7> q{0, 0, 0, 1, 0, 0, 0};
  EXPECT_EQ(epsilon_greedy(q, 0.0, rng), 3);
  const std::array<double, 7> flat{};
  EXPECT_EQ(epsilon_greedy(flat, 0.0, rng), 0);
}

TEST(EpsilonGreedy, FullExplorationIsUniform) {
  Rng rng(2);
  const std::array<double, 7> q{0, 0, 0, 1, 0, 0, 0};
  std::array<int, 7> hist{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++hist[static_cast<std::size_t>(epsilon_greedy(q, 1.0, rng))];
  const double p = 1.0 / 7.0, mean = n * p, sd = std::sqrt(n * p * (1 - p));
  for (int h : hist) EXPECT_LE(std::abs(h - mean), 3 * sd);
}

TEST(EpsilonGreedy, ArgmaxInvariantUnderShift) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    std::array<double, 7> q{}, shifted{};
    const double c = rng.uniform(-100, 100);
    for (std::size_t k = 0; k < 7; ++k) {
      q[k] = static_cast<double>(rng.uniform_int(5));  // frequent ties
      shifted[k] = q[k] + c;
    }
    EXPECT_EQ(epsilon_greedy(q, 0.0, rng), epsilon_greedy(shifted, 0.0, rng));
  }
}

TEST(DdqnTarget, DegenerateCases) {
  const std::array<double, 3> qo{1, 5, 2}, qt{4, 3, 9}, zero{};
  EXPECT_EQ(ddqn_target(0.7, qo, qt, 0.0), 0.7);
  EXPECT_EQ(ddqn_target(0.7, qo, zero, 0.99), 0.7);
  EXPECT_EQ(ddqn_target(0.7, qo, zero, 0.99, TargetRule::dqn_max), 0.7);
}

TEST(DdqnTarget, DecoupledVersusMaxOnToyTables) {
  // Online prefers action 1, target prefers action 0.
  const std::array<double, 2> qo{1.0, 2.0}, qt{5.0, 3.0};
  const double r = 0.5, g = 0.9;
  const double y_ddqn = ddqn_target(r, qo, qt, g, TargetRule::ddqn);
  const double y_max = ddqn_target(r, qo, qt, g, TargetRule::dqn_max);
  EXPECT_NEAR(y_ddqn, 0.5 + 0.9 * 3.0, 1e-12);
  EXPECT_NEAR(y_max, 0.5 + 0.9 * 5.0, 1e-12);
  EXPECT_NEAR(y_max - y_ddqn, 0.9 * 2.0, 1e-12);
}

TEST(ViolationTerm, Examples) {
  EXPECT_EQ(violation_term(3.0, 2.0, 2.0), 0.0);
  EXPECT_NEAR(violation_term(2.0, 3.0, 2.0), -1.0, 1e-12);
  EXPECT_EQ(violation_term(0.0, 9.0, 2.0), 0.0);
  EXPECT_THROW(violation_term(-1.0, 1.0, 2.0), std::invalid_argument);
}

TEST(DualUpdate, Examples) {
  const std::vector<double> at(5, 2.0), over(5, 3.0), slack(5, 0.0);
  EXPECT_EQ(dual_update(1.3, at, 2.0, 0.1, 5.0), 1.3);
  EXPECT_NEAR(dual_update(1.0, over, 2.0, 0.1, 5.0), 1.05, 1e-12);
  EXPECT_EQ(dual_update(0.01, slack, 2.0, 0.2, 5.0), 0.0);
  EXPECT_EQ(dual_update(4.99, std::vector<double>(5, 50.0), 2.0, 0.2, 5.0), 5.0);
}

TEST(DualUpdate, MonotoneInViolationSum) {
  Rng rng(5);
  for (int i = 0; i < 5000; ++i) {
    std::vector<double> w(5), w2(5);
    for (std::size_t k = 0; k < 5; ++k) {
      w[k] = rng.uniform(0, 6);
      w2[k] = w[k] + (k == rng.uniform_int(4) ? rng.uniform(0, 3) : 0.0);
    }
    const double l = rng.uniform(0, 5), eta = adaptive_eta(rng.uniform01());
    EXPECT_LE(dual_update(l, w, 2.0, eta, 5.0), dual_update(l, w2, 2.0, eta, 5.0));
  }
}

TEST(AdaptiveEta, Interpolates) {
  EXPECT_DOUBLE_EQ(adaptive_eta(0.0), 0.01);
  EXPECT_DOUBLE_EQ(adaptive_eta(1.0), 0.2);
  EXPECT_NEAR(adaptive_eta(0.5), 0.105, 1e-15);
  EXPECT_THROW(adaptive_eta(1.5), std::invalid_argument);
}

TEST(ShapedReward, Examples) {
  EXPECT_EQ(shaped_reward(0.7, 2.0, 2.0, 1.5), 0.7);
  EXPECT_NEAR(shaped_reward(0.9, 0.0, 2.0, 2.0), -1.1, 1e-12);
  EXPECT_EQ(shaped_reward(0.7, 4.0, 2.0, 1.5), 0.7);
}

TEST(ScalarizedReward, Examples) {
  EXPECT_EQ(scalarized_reward(0.66, 3.0, 10.0, 0.0), 0.66);
  EXPECT_EQ(scalarized_reward(0.66, 10.0, 10.0, 1.0), 0.0);
  EXPECT_NEAR(scalarized_reward(0.8, 2.0, 10.0, 0.5), 0.8, 1e-12);
  EXPECT_EQ(scalarized_reward(0.5, 25.0, 10.0, 1.0), 0.0);  // clamped
}

TEST(DualController, EpochCadenceAndSigns) {
  DualController dc;
  for (int t = 0; t < 4; ++t) EXPECT_FALSE(dc.observe(3.0, 2.0).has_value());
  const auto e = dc.observe(3.0, 2.0);
  ASSERT_TRUE(e.has_value());
  EXPECT_EQ(e->violation_rate, 1.0);
  EXPECT_DOUBLE_EQ(e->eta, 0.2);
  EXPECT_GT(e->lambda_after, e->lambda_before);
  EXPECT_NEAR(dc.lambda(), 0.2 * 0.5, 1e-12);

  DualController slack;
  for (int t = 0; t < 50; ++t) slack.observe(0.5, 2.0);
  EXPECT_EQ(slack.lambda(), 0.0);
}

TEST(DualController, LambdaStaysInRange) {
  Rng rng(6);
  DualController dc;
  for (int t = 0; t < 100000; ++t) {
    dc.observe(rng.uniform(0, 12), 2.0);
    ASSERT_GE(dc.lambda(), 0.0);
    ASSERT_LE(dc.lambda(), 5.0);
  }
}

TEST(EpsilonSchedule, LinearThenFlat) {
  TrainConfig c;
  c.episodes = 100;
  EXPECT_DOUBLE_EQ(epsilon_at(c, 0), 1.0);
  EXPECT_DOUBLE_EQ(epsilon_at(c, 80), 0.01);
  EXPECT_DOUBLE_EQ(epsilon_at(c, 99), 0.01);
  EXPECT_NEAR(epsilon_at(c, 40), 1.0 - 0.99 * 0.5, 1e-12);
  for (int e = 1; e < 100; ++e) {
    EXPECT_LE(epsilon_at(c, e), epsilon_at(c, e - 1));
    EXPECT_GE(epsilon_at(c, e), 0.01);
  }
}

TEST(ReplayBuffer, RingOverwritesOldest) {
  ReplayBuffer rb(3, 2);
  const std::vector<double> s{0, 0};
  for (int i = 0; i < 5; ++i) rb.push(s, i % 7, static_cast<double>(i), 0.0, s);
  EXPECT_EQ(rb.size(), 3u);
  EXPECT_EQ(rb.at(0).r, 2.0);
  EXPECT_EQ(rb.at(2).r, 4.0);
  EXPECT_THROW(rb.at(3), std::out_of_range);
  EXPECT_THROW(rb.push(std::vector<double>{0}, 0, 0, 0, s), std::invalid_argument);
  EXPECT_THROW(rb.push(s, 7, 0, 0, s), std::out_of_range);
}

TEST(ReplayBuffer, SamplingIsUniform) {
  ReplayBuffer rb(1000, 1);
  const std::vector<double> s{0};
  for (int i = 0; i < 1000; ++i) rb.push(s, 0, 0, 0, s);
  Rng rng(7);
  std::vector<int> hist(1000, 0);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) ++hist[rb.sample_slot(rng)];
  double chi2 = 0.0;
  for (int h : hist) chi2 += std::pow(h - 1000.0, 2) / 1000.0;
  // Chi-square with 999 dof: mean 999, sd sqrt(2 * 999).
  EXPECT_LE(std::abs(chi2 - 999.0), 3 * std::sqrt(2 * 999.0));
}

TEST(TransitionReward, QasalKeepsViolationSeparate) {
  TrainConfig c;
  c.d_th_ms = 2.0;
  c.beta = 1.5;
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const StepSignals sig{rng.uniform(0.5, 1.0), rng.uniform(0, 8), false};
    const double lambda = rng.uniform(0, 5);
    const auto q = transition_reward(Algorithm::qasal, sig, lambda, c, 10.0);
    const auto pd = transition_reward(Algorithm::primal_dual, sig, lambda, c, 10.0);
    EXPECT_EQ(q.r, shaped_reward(sig.jfi, sig.d_bar_pc1_ms, 2.0, 1.5));
    EXPECT_EQ(q.v, violation_term(lambda, sig.d_bar_pc1_ms, 2.0));
    EXPECT_EQ(pd.v, 0.0);
    EXPECT_NEAR(pd.r, sig.jfi + q.v, 1e-12);
    EXPECT_EQ(transition_reward(Algorithm::morl, sig, lambda, c, 10.0).v, 0.0);
  }
  EXPECT_THROW(transition_reward(Algorithm::no_learning, {}, 0.0, c, 10.0), std::invalid_argument);
}

TEST(TransitionReward, PrimalDualAtZeroLambdaIsFairnessOnly) {
  TrainConfig c;
  const StepSignals sig{0.73, 0.4, false};
  EXPECT_EQ(transition_reward(Algorithm::primal_dual, sig, 0.0, c, 10.0).r, 0.73);
  // With no shaping the two bookkeeping schemes carry the same total.
  c.beta = 0.0;
  const auto q = transition_reward(Algorithm::qasal, sig, 2.0, c, 10.0);
  EXPECT_NEAR(transition_reward(Algorithm::primal_dual, sig, 2.0, c, 10.0).r, q.r + q.v, 1e-12);
}

TEST(Train, ReplayBookkeeping) {
  TrainConfig c = tiny_config();
  c.episodes = 1;
  c.steps_per_episode = 2;
  c.batch = 1;
  CoexEnv env(small_env());
  const auto r = train_qasal(env, c);
  EXPECT_EQ(r.replay_size, 2u);
  EXPECT_EQ(r.optimizer_step, 2u);
  EXPECT_EQ(r.net.input_dim(), static_cast<int>(kStateDim + 1));
}

TEST(Train, DeterministicPerSeed) {
  for (auto alg : {Algorithm::qasal, Algorithm::primal_dual, Algorithm::morl}) {
    CoexEnv e1(small_env()), e2(small_env());
    const auto a = train(alg, e1, tiny_config());
    const auto b = train(alg, e2, tiny_config());
    EXPECT_EQ(a.net.checksum(), b.net.checksum()) << to_string(alg);
    auto c3 = tiny_config();
    c3.seed = 4;
    CoexEnv e3(small_env());
    EXPECT_NE(train(alg, e3, c3).net.checksum(), a.net.checksum()) << to_string(alg);
  }
}

TEST(Train, RejectsBadInputs) {
  CoexEnv env(small_env());
  EXPECT_THROW(train(Algorithm::no_learning, env, tiny_config()), std::invalid_argument);
  CoexEnv blank;
  EXPECT_THROW(train(Algorithm::morl, blank, tiny_config()), std::logic_error);
  auto c = tiny_config();
  c.batch = 5000;
  EXPECT_THROW(train(Algorithm::morl, env, c), std::invalid_argument);
}

TEST(DdqnLearner, ZeroDiscountConvergesToImmediateTarget) {
  TrainConfig c = tiny_config();
  c.gamma = 0.0;
  c.lr = 1e-3;
  c.batch = 8;
  DdqnLearner learner(kStateDim + 1, c, 1);
  const std::vector<double> s{0.1, 0.2, 0.05, 0.9, 0.4, 0.6, 0.0, 0.05, 0.3};
  const double r = 0.62, v = -0.35;
  for (int i = 0; i < 64; ++i) learner.replay().push(s, 2, r, v, s);
  for (int i = 0; i < 3000; ++i) learner.train_step();
  EXPECT_NEAR(learner.online().forward(s)(2), r + v, 1e-2);
}

TEST(Execute, NoLearningHoldsActionThree) {
  CoexEnv env(small_env());
  DualController dc;
  const auto tr = execute(Algorithm::no_learning, nullptr, env, 1000, dc, 2.0);
  ASSERT_EQ(tr.steps.size(), 1000u);
  for (const auto& s : tr.steps) EXPECT_EQ(s.action, 3);
  EXPECT_EQ(tr.epochs.size(), 200u);
  EXPECT_EQ(action_to_cw(no_learning_policy(), PriorityClass::PC1), 7);
  EXPECT_EQ(env.simulator().specs()[0].cw_max, 7);
}

TEST(Execute, QasalLambdaTraceBoundsAndEpochs) {
  CoexEnv env(small_env());
  const auto net = train_qasal(env, tiny_config()).net;
  env.reset(EnvConfig(with_pc3_total(EnvConfig{}, 30)));
  DualController dc;
  const auto tr = execute_qasal(env, net, dc, 2000, 2.0);
  ASSERT_EQ(tr.epochs.size(), 400u);
  EXPECT_EQ(tr.steps.front().lambda, 0.0);
  for (const auto& s : tr.steps) {
    EXPECT_GE(s.lambda, 0.0);
    EXPECT_LE(s.lambda, 5.0);
  }
  for (const auto& e : tr.epochs) {
    if (e.violation_rate == 1.0 && e.lambda_before < 5.0) EXPECT_GT(e.lambda_after, e.lambda_before);
    if (e.violation_rate == 0.0 && e.max_d_bar_ms < 2.0) EXPECT_LE(e.lambda_after, e.lambda_before);
  }
}

TEST(Execute, PolicyDimensionChecked) {
  CoexEnv env(small_env());
  DualController dc;
  const auto net = Mlp::he_uniform({static_cast<int>(kStateDim), 4, kNumActions}, 1);
  EXPECT_THROW(execute(Algorithm::qasal, &net, env, 10, dc, 2.0), std::invalid_argument);
  EXPECT_THROW(execute(Algorithm::morl, nullptr, env, 10, dc, 2.0), std::invalid_argument);
  EXPECT_NO_THROW(execute(Algorithm::morl, &net, env, 10, dc, 2.0));
}

TEST(AlgorithmNames, RoundTrip) {
  for (auto a : {Algorithm::qasal, Algorithm::primal_dual, Algorithm::morl, Algorithm::no_learning})
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  EXPECT_EQ(parse_target_rule("dqn_max"), TargetRule::dqn_max);
  EXPECT_THROW(parse_algorithm("sarsa"), std::invalid_argument);
}
