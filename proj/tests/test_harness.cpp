#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "coex/harness.hpp"

using namespace coex;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("coex_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(Algorithm alg, const fs::path& out) {
  ExperimentConfig c;
  c.scenario = Scenario::S2;
  c.algorithm = alg;
  c.pc3_totals = {0, 10, 20, 30, 40, 50};
  c.seeds = {1, 2, 3};
  c.train_episodes = 1;
  c.eval_episodes = 1;
  c.steps_per_episode = 40;
  c.train.batch = 4;
  c.train.hidden = {8};
  c.output_dir = out.string();
  c.normalize();
  return c;
}

}  // namespace

TEST(Percentile, NearestRank) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  EXPECT_EQ(percentile(v, 95), 95);
  EXPECT_EQ(percentile(v, 100), 100);
  EXPECT_EQ(percentile(std::vector<double>{4.2}, 1), 4.2);
  EXPECT_EQ(percentile(std::vector<double>{4.2}, 100), 4.2);
  EXPECT_EQ(percentile(std::vector<double>{3, 1, 2}, 50), 2);
  EXPECT_EQ(percentile(v, 7), 7);  // 7/100 * 100 rounds above 7 in floating point
  EXPECT_THROW(percentile(std::vector<double>{}, 50), std::invalid_argument);
  EXPECT_THROW(percentile(v, 0), std::invalid_argument);
  EXPECT_THROW(percentile(v, 101), std::invalid_argument);
}

TEST(Percentile, MatchesSortOracleAndOrdering) {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> v(1 + rng.uniform_int(60));
    for (auto& x : v) x = rng.uniform(-5, 5);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const double p = rng.uniform(0.5, 100.0);
    std::size_t rank = 0;
    while (static_cast<double>(rank) < p / 100.0 * static_cast<double>(v.size()) - 1e-12) ++rank;
    EXPECT_EQ(percentile(v, p), sorted[std::max<std::size_t>(rank, 1) - 1]);
    EXPECT_GE(percentile(v, 95), percentile(v, 50));
  }
}

TEST(ExperimentConfig, JsonScalarsListsAndScenarios) {
  const auto j = nlohmann::json::parse(R"({"scenario":"S2","algorithm":"morl","alpha":[0.1,0.9],"d_th_ms":3,
                                           "seeds":7,"target_rule":"dqn_max"})");
  const auto c = j.get<ExperimentConfig>();
  EXPECT_EQ(c.scenario, Scenario::S2);
  EXPECT_EQ(c.pc3_totals, (std::vector<int>{0, 10, 20, 30, 40, 50}));
  EXPECT_EQ(c.alpha, (std::vector<double>{0.1, 0.9}));
  EXPECT_EQ(c.d_th_ms, (std::vector<double>{3.0}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7}));
  EXPECT_EQ(c.target_rule, TargetRule::dqn_max);
  EXPECT_EQ(c.train_episodes, kDeskTrainEpisodes);

  const auto s1 = nlohmann::json::parse(R"({"scenario":"S1"})").get<ExperimentConfig>();
  EXPECT_EQ(s1.pc3_totals, (std::vector<int>{25}));
  nlohmann::json echo = s1;
  EXPECT_EQ(echo.get<ExperimentConfig>().pc3_totals, s1.pc3_totals);

  EXPECT_THROW(nlohmann::json::parse(R"({"seeds":[]})").get<ExperimentConfig>(), std::invalid_argument);
  EXPECT_THROW(nlohmann::json::parse(R"({"scenario":"S3"})").get<ExperimentConfig>(), std::invalid_argument);
  EXPECT_THROW(nlohmann::json::parse(R"({"algorithm":"morl","alpha":1.5})").get<ExperimentConfig>(),
               std::invalid_argument);
  ExperimentConfig paper;
  paper.apply_paper_scale();
  EXPECT_EQ(paper.train_episodes, 10000);
  EXPECT_EQ(paper.eval_episodes, 5000);
}

TEST(Cells, SeedProtocolAndIds) {
  const auto c = tiny(Algorithm::qasal, "unused");
  const auto cells = enumerate_cells(c);
  ASSERT_EQ(cells.size(), 18u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    const std::uint64_t sweep_index = i / 3;
    EXPECT_EQ(cell.cell_seed, hash_seed({cell.seed, sweep_index}));
    EXPECT_EQ(cell.beta, 1.5);
    ids.insert(cell.id);
  }
  EXPECT_EQ(ids.size(), cells.size());
  EXPECT_EQ(default_beta(1.0), 1.0);
  EXPECT_EQ(default_beta(3.0), 2.0);
}

TEST(Csv, QuotingAndHeader) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  ResultsRow r;
  r.scenario = "S1";
  r.algorithm = "qasal";
  const auto line = to_csv(r);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), std::count(kResultsHeader, kResultsHeader + std::strlen(kResultsHeader), ','));
  EXPECT_EQ(format_real(0.1), "0.1");
  EXPECT_EQ(format_real(2.0), "2");
}

TEST(RunJob, BaselineRowCountNoTrainingAndDeterminism) {
  const auto out1 = scratch("base1"), out2 = scratch("base2");
  auto c = tiny(Algorithm::no_learning, out1);
  const auto res = run_job(c, {.mode = JobMode::eval});
  EXPECT_EQ(res.rows.size(), 18u);
  EXPECT_TRUE(fs::is_empty(out1 / "checkpoints"));
  const auto csv1 = slurp(out1 / "results.csv");
  EXPECT_EQ(count_lines(csv1), 19u);
  for (const auto& row : res.rows) {
    EXPECT_GE(row.p95_smoothed_delay_ms, row.median_smoothed_delay_ms);
    for (double rate : {row.collision_rate, row.airtime_efficiency, row.violation_rate}) {
      EXPECT_GE(rate, 0.0);
      EXPECT_LE(rate, 1.0);
    }
  }
  c.output_dir = out2.string();
  run_job(c, {.mode = JobMode::eval});
  EXPECT_EQ(slurp(out2 / "results.csv"), csv1);
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST(RunJob, NoLearningHistogramIsSingleBin) {
  auto c = tiny(Algorithm::no_learning, "unused");
  std::mutex mu;
  std::size_t steps = 0;
  JobOptions opt{.mode = JobMode::eval, .write_files = false};
  opt.on_trace = [&](const Cell&, const ExecutionTrace& tr) {
    std::lock_guard lock(mu);
    for (const auto& s : tr.steps) EXPECT_EQ(s.action, 3);
    steps += tr.steps.size();
  };
  run_job(c, opt);
  EXPECT_EQ(steps, 18u * 40u);
}

TEST(RunJob, SweepWritesAllArtifactsAndIsReproducible) {
  const auto a = scratch("sweep_a"), b = scratch("sweep_b");
  auto c = tiny(Algorithm::qasal, a);
  c.pc3_totals = {0, 10};
  c.seeds = {5};
  const auto r1 = run_job(c);
  EXPECT_EQ(r1.rows.size(), 2u);
  for (const auto& cell : r1.cells) EXPECT_TRUE(fs::exists(a / "checkpoints" / (cell.id + ".ckpt")));
  EXPECT_TRUE(fs::exists(a / "config.echo.json"));
  EXPECT_EQ(count_lines(slurp(a / "curves.csv")), 1u + 2u);
  c.output_dir = b.string();
  run_job(c, {.jobs = 2});
  for (const char* f : {"results.csv", "curves.csv"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  for (const auto& cell : r1.cells)
    EXPECT_EQ(slurp(a / "checkpoints" / (cell.id + ".ckpt")), slurp(b / "checkpoints" / (cell.id + ".ckpt")));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunJob, CheckpointEvalEqualsInProcessEval) {
  const auto dir = scratch("ckpt_eval");
  auto c = tiny(Algorithm::primal_dual, dir);
  c.pc3_totals = {20};
  c.seeds = {9};
  const auto trained = run_job(c, {.mode = JobMode::train_eval});
  const auto in_process = slurp(dir / "results.csv");
  const auto reloaded = run_job(c, {.mode = JobMode::eval});
  EXPECT_EQ(slurp(dir / "results.csv"), in_process);
  ASSERT_EQ(trained.rows.size(), 1u);
  EXPECT_EQ(to_csv(trained.rows[0]), to_csv(reloaded.rows[0]));
  fs::remove_all(dir);
}

TEST(RunJob, MissingCheckpointNamesTheCell) {
  const auto dir = scratch("missing");
  auto c = tiny(Algorithm::morl, dir);
  c.seeds = {1};
  c.pc3_totals = {10};
  try {
    run_job(c, {.mode = JobMode::eval});
    FAIL() << "expected JobError";
  } catch (const JobError& e) {
    EXPECT_EQ(e.code(), "missing_checkpoint");
    EXPECT_EQ(e.cell(), enumerate_cells(c)[0].id);
    const auto j = nlohmann::json::parse(e.json_line());
    EXPECT_EQ(j.at("error"), "missing_checkpoint");
  }
  fs::remove_all(dir);
}

TEST(RunJob, ResumeReusesCheckpoints) {
  const auto dir = scratch("resume");
  auto c = tiny(Algorithm::morl, dir);
  c.seeds = {2};
  c.pc3_totals = {10};
  run_job(c, {.mode = JobMode::train});
  const auto ckpt = dir / "checkpoints" / (enumerate_cells(c)[0].id + ".ckpt");
  const auto stamp = fs::last_write_time(ckpt);
  const auto r = run_job(c, {.mode = JobMode::train_eval, .resume = true});
  EXPECT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(fs::last_write_time(ckpt), stamp);
  EXPECT_EQ(count_lines(slurp(dir / "curves.csv")), 1u);  // header only: nothing retrained
  fs::remove_all(dir);
}

TEST(RunJob, UnwritableOutputReported) {
  const auto file = scratch("blocker");
  std::ofstream(file) << "x";
  auto c = tiny(Algorithm::no_learning, file / "sub");
  try {
    run_job(c, {.mode = JobMode::eval});
    FAIL() << "expected JobError";
  } catch (const JobError& e) {
    EXPECT_EQ(e.code(), "unwritable_output");
  }
  fs::remove(file);
}
