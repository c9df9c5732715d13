// Copyright 2026 The QAvatar Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "qavatar/harness.hpp"

namespace qavatar {
namespace {

namespace fs = std::filesystem;

ExperimentConfig parse(const std::string& text) { return parse_config(YAML::Load(text), "cfg.yaml"); }

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qavatar_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(Config, MinimalDefaults) {
  const ExperimentConfig c = parse("scenario: perfect-transfer\nalgorithms: [q-npg]\n");
  EXPECT_EQ(c.scenario.kind, ScenarioKind::perfect_transfer);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1}));
  EXPECT_EQ(c.format, OutputFormat::csv);
  EXPECT_TRUE(c.exact_logging);
  EXPECT_FALSE(c.verify_bounds);
  EXPECT_EQ(c.algorithms.size(), 1u);
  EXPECT_EQ(c.algorithms[0].config.iterations, 100);
}

TEST(Config, DefaultsAndOverridesCompose) {
  const ExperimentConfig c = parse(R"(scenario: reversed-goal
defaults:
  iterations: 40
  samples_per_iter: 32
  learning_rate: 0.5
  error_window: full-history
algorithms:
  - q-npg
  - name: qavatar
    samples_per_iter: 8
    learning_rate: default
    final_policy: uniform-mixture
    map_class: {mode: exhaustive, candidate_bound: 10}
seeds: [3, 4]
format: json
)");
  ASSERT_EQ(c.algorithms.size(), 2u);
  const AlgoConfig& a = c.algorithms[0].config;
  const AlgoConfig& b = c.algorithms[1].config;
  EXPECT_EQ(a.iterations, 40);
  EXPECT_EQ(a.samples_per_iter, 32);
  EXPECT_EQ(a.learning_rate, 0.5);
  EXPECT_EQ(a.error_window, ErrorWindow::full_history);
  EXPECT_EQ(b.iterations, 40);
  EXPECT_EQ(b.samples_per_iter, 8);
  EXPECT_FALSE(b.learning_rate.has_value());
  EXPECT_EQ(b.final_rule, FinalPolicyRule::uniform_mixture);
  EXPECT_EQ(b.map_class.mode, MapSearch::exhaustive);
  EXPECT_EQ(b.map_class.candidate_bound, 10u);
  EXPECT_TRUE(c.algorithms[1].map_class_set);
  EXPECT_FALSE(c.algorithms[0].map_class_set);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.format, OutputFormat::json);
}

TEST(Config, ErrorsNameFileAndLine) {
  EXPECT_NE(error_of("scenario: perfect-transfer\nalgorithms: [q-npg]\nbogus: 1\n").find("cfg.yaml:3:"),
            std::string::npos);
  EXPECT_NE(error_of("scenario: mirror-world\n").find("cfg.yaml:1:"), std::string::npos);
  const std::string bad_algo = error_of("scenario: perfect-transfer\nalgorithms:\n  - q-npg\n  - sarsa\n");
  EXPECT_NE(bad_algo.find("cfg.yaml:4:"), std::string::npos);
  EXPECT_NE(bad_algo.find("sarsa"), std::string::npos);
  const std::string bad_type =
      error_of("scenario: perfect-transfer\nalgorithms: [q-npg]\ndefaults:\n  iterations: many\n");
  EXPECT_NE(bad_type.find("cfg.yaml:4:"), std::string::npos);
  EXPECT_NE(error_of("algorithms: [q-npg]\n").find("scenario"), std::string::npos);
  EXPECT_NE(error_of("scenario: perfect-transfer\nthreshold_fraction: 1.5\n").find("threshold_fraction"),
            std::string::npos);
  EXPECT_NE(error_of("scenario: perfect-transfer\nformat: xml\n").find("format"), std::string::npos);
  EXPECT_NE(error_of("scenario: perfect-transfer\nseeds: []\n").find("seeds"), std::string::npos);
}

TEST(Config, LoadReportsMissingAndMalformedFiles) {
  try {
    load_config("/nonexistent/experiment.yaml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/experiment.yaml"), std::string::npos);
  }
  const fs::path dir = fresh_dir("malformed");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "bad.yaml");
    f << "scenario: perfect-transfer\nalgorithms: [q-npg\n";
  }
  try {
    load_config(dir / "bad.yaml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.yaml:"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Config, GridScenarioRoundTrip) {
  GridSpec g = scenario_grid();
  g.treasure = Cell{0, 3};
  g.slip_prob = 0.1;
  g.actions = {Move::right, Move::up};
  g.encoding = {EncodingKind::permuted, 7};
  g.progress_reward = 0.25;
  const GridSpec back = grid_from_yaml(YAML::Load(YAML::Dump(grid_to_yaml(g))));
  EXPECT_EQ(back.width, g.width);
  EXPECT_EQ(back.height, g.height);
  EXPECT_EQ(back.obstacles, g.obstacles);
  EXPECT_EQ(back.treasure, g.treasure);
  EXPECT_EQ(back.actions, g.actions);
  EXPECT_EQ(back.encoding.kind, g.encoding.kind);
  EXPECT_EQ(back.encoding.seed, g.encoding.seed);
  EXPECT_EQ(back.slip_prob, g.slip_prob);
  EXPECT_EQ(back.progress_reward, g.progress_reward);
  EXPECT_TRUE(build_grid(back).mdp.transitions() == build_grid(g).mdp.transitions());

  YAML::Node root;
  root["scenario"]["target"] = grid_to_yaml(scenario_grid());
  root["scenario"]["source"] = grid_to_yaml(g);
  root["algorithms"].push_back("dqt");
  const ExperimentConfig c = parse_config(root);
  ASSERT_TRUE(c.scenario.grids.has_value());
  const ExperimentInstance inst = instantiate(c.scenario);
  EXPECT_EQ(inst.scenario.map_class.mode, MapSearch::greedy_coordinate);
}

ExperimentConfig tiny(const std::string& out, int T = 5) {
  ExperimentConfig c = parse("scenario: perfect-transfer\nalgorithms: [q-npg, dqt, qavatar]\nseeds: [1, 2, 3]\n"
                             "defaults: {iterations: " +
                             std::to_string(T) + ", samples_per_iter: 4}\n");
  c.output = out;
  return c;
}

TEST(Run, SingleIterationWritesOneRowPerRun) {
  const fs::path dir = fresh_dir("single");
  ExperimentConfig c = tiny(dir.string(), 1);
  c.seeds = {1};
  run_experiment(c);
  for (const char* name : {"q-npg", "dqt", "qavatar"}) {
    const std::string csv = slurp(dir / "runs" / (std::string(name) + "_seed1.csv"));
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2) << name;
    EXPECT_EQ(csv.rfind(kCsvHeader, 0), 0u);
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["algorithms"].size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_FALSE(fs::exists(dir / "bounds.json"));
  fs::remove_all(dir);
}

TEST(Run, OutputsAreByteIdenticalAcrossRunsAndThreadCounts) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  run_experiment(tiny(a.string()), 1);
  run_experiment(tiny(b.string()), 3);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Run, JsonFormatAndBounds) {
  const fs::path dir = fresh_dir("json");
  ExperimentConfig c = tiny(dir.string());
  c.format = OutputFormat::json;
  c.verify_bounds = true;
  c.seeds = {1};
  const ExperimentSummary s = run_experiment(c);
  const auto log = nlohmann::json::parse(slurp(dir / "runs" / "qavatar_seed1.json"));
  EXPECT_EQ(log["records"].size(), 5u);
  const auto bounds = nlohmann::json::parse(slurp(dir / "bounds.json"));
  ASSERT_EQ(bounds.size(), 3u);
  for (const auto& b : bounds) EXPECT_TRUE(b["report"].contains("term_a_stated"));
  EXPECT_EQ(s.bounds_ok, s.algorithms[0].bounds_satisfied && s.algorithms[1].bounds_satisfied &&
                             s.algorithms[2].bounds_satisfied);
  fs::remove_all(dir);
}

TEST(Run, UnwritableOutputFails) {
  ExperimentConfig c = tiny("/proc/qavatar_cannot_write_here");
  c.seeds = {1};
  EXPECT_THROW(run_experiment(c), std::runtime_error);
}

TEST(Run, MultiSourceRulesAreChecked) {
  ExperimentConfig c = parse("scenario: two-source-complementary\nalgorithms: [qavatar]\n");
  EXPECT_THROW(run_experiment_in_memory(c), ConfigError);
  c = parse("scenario: two-source-complementary\nalgorithms: [q-npg, qavatar-multi]\n"
            "defaults: {iterations: 3, samples_per_iter: 4}\n");
  const ExperimentSummary s = run_experiment_in_memory(c);
  EXPECT_EQ(s.runs[1].log.algorithm, "qavatar-multi");
  EXPECT_EQ(s.runs[1].log.records[0].source_alphas.size(), 2u);
}

TEST(Summary, TimeToThresholdAndStatistics) {
  RunLog log;
  for (int t = 1; t <= 4; ++t) {
    IterationRecord r;
    r.t = t;
    r.suboptimality = 10.0 - 3.0 * t;  // values 3, 6, 9, 12 against V* = 10
    log.records.push_back(r);
  }
  EXPECT_EQ(time_to_threshold(log, 10.0, 0.9), 3);
  EXPECT_EQ(time_to_threshold(log, 10.0, 0.5), 2);
  log.records.resize(2);
  EXPECT_EQ(time_to_threshold(log, 10.0, 0.9), 3);  // never reached: T + 1
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0 / 3.0), "0.333333333333");
}

TEST(Verify, SmallSuitePassesAndDetectsInjectedFault) {
  VerifySuite v;
  v.bound_mdps = 3;
  v.bound_iterations = 20;
  v.bound_samples = 16;
  v.exact_critic_mdps = 2;
  v.pdl_trials = 3;
  v.ratio_mdps = 2;
  v.occupancy_mdps = 2;
  v.occupancy_episodes = 2000;
  v.regret_trials = 2;
  v.regret_iterations = 20;
  v.anchor_mdps = 2;
  const VerifyReport ok = run_verification(v);
  for (const auto& s : ok.suites) EXPECT_EQ(s.failures, 0) << s.name << ": " << s.detail;
  EXPECT_TRUE(ok.ok());
  const VerifyReport bad = run_verification(v, ExactOracle{0.5});
  EXPECT_FALSE(bad.ok());
  const auto j = to_json(bad);
  EXPECT_TRUE(j.contains("suites"));
}

TEST(Toy, TableSelectsIsomorphism) {
  const ToyTable t = toy_table();
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].map, "A");
  EXPECT_NEAR(t.rows[0].cd_loss, 0.0, 1e-12);
  EXPECT_NEAR(t.rows[1].cd_loss, 1.0, 1e-9);
  EXPECT_EQ(t.rows[0].cycle_loss, 0.0);
  EXPECT_EQ(t.rows[1].cycle_loss, 0.0);
  EXPECT_EQ(t.selected, "A");
}

}  // namespace
}  // namespace qavatar
