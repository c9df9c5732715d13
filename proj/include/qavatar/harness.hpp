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

#pragma once

// Experiment harness: YAML configs, seeded run fan-out, CSV / JSON sinks,
// summaries, and the lemma and bound verification suites.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qavatar/algorithms.hpp"
#include "qavatar/environments.hpp"
#include "qavatar/theory.hpp"

namespace qavatar {

// Invalid configuration; the message carries file:line:column when known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OutputFormat { csv, json };

// Target / source pair given directly as grids.
struct GridPair {
  GridSpec target;
  GridSpec source;
  std::optional<int> truncated_sweeps;  // source critic from k sweeps instead of the optimum
};

struct ScenarioSpec {
  std::optional<ScenarioKind> kind;
  std::optional<GridPair> grids;
  std::uint64_t seed = 0;
  ScenarioOptions options;
};

struct AlgorithmEntry {
  std::string name;  // q-npg | dqt | qavatar | qavatar-multi
  AlgoConfig config;
  bool map_class_set = false;
};

struct VerifySuite {
  std::uint64_t seed = 2026;
  double gamma = 0.9;
  int max_states = 8;
  int max_actions = 3;
  int bound_mdps = 50;
  int bound_iterations = 100;
  int bound_samples = 64;
  int exact_critic_mdps = 5;
  int pdl_trials = 20;
  int ratio_mdps = 10;
  std::vector<int> ratio_steps{1, 2, 5};
  int occupancy_mdps = 20;
  int occupancy_episodes = 20000;
  int regret_trials = 20;
  int regret_iterations = 100;
  int anchor_mdps = 10;
};

struct ExperimentConfig {
  std::string source_file;
  ScenarioSpec scenario;
  std::vector<AlgorithmEntry> algorithms;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output{"out"};
  bool exact_logging = true;
  bool verify_bounds = false;
  double threshold_fraction = 0.9;
  OutputFormat format = OutputFormat::csv;
  VerifySuite verify;
};

// ---------------------------------------------------------------------------
// Config parsing.

namespace detail {

inline std::string where(const std::string& file, const YAML::Node& node) {
  const YAML::Mark m = node.Mark();
  if (m.line < 0) return file;
  return file + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

class ConfigReader {
 public:
  explicit ConfigReader(std::string file) : file_(std::move(file)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& msg) const {
    throw ConfigError(where(file_, node) + ": " + msg);
  }

  void require_map(const YAML::Node& node, const std::string& what) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
  }

  void allow_keys(const YAML::Node& node, std::initializer_list<const char*> keys, const std::string& what) const {
    require_map(node, what);
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) fail(kv.first, "unknown key '" + key + "' in " + what);
    }
  }

  template <typename T>
  T scalar(const YAML::Node& node, const std::string& what) const {
    if (!node.IsScalar()) fail(node, what + " must be a scalar");
    try {
      return node.as<T>();
    } catch (const YAML::Exception&) {
      fail(node, "invalid value '" + node.Scalar() + "' for " + what);
    }
  }

  template <typename T>
  void read(const YAML::Node& parent, const char* key, T& out) const {
    if (const YAML::Node n = parent[key]) out = scalar<T>(n, key);
  }

  Cell cell(const YAML::Node& node, const std::string& what) const {
    if (!node.IsSequence() || node.size() != 2) fail(node, what + " must be a [x, y] pair");
    return {scalar<int>(node[0], what), scalar<int>(node[1], what)};
  }

  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

inline GridSpec parse_grid(const ConfigReader& r, const YAML::Node& node) {
  r.allow_keys(node,
               {"width", "height", "obstacles", "start", "terminal", "treasure", "treasure_reward", "terminal_reward",
                "terminal_reward_persists", "progress_reward", "actions", "encoding", "slip_prob", "gamma",
                "start_concentration"},
               "grid");
  GridSpec g;
  r.read(node, "width", g.width);
  r.read(node, "height", g.height);
  if (const auto n = node["obstacles"]) {
    if (!n.IsSequence()) r.fail(n, "obstacles must be a list of [x, y] pairs");
    g.obstacles.clear();
    for (const auto& c : n) g.obstacles.push_back(r.cell(c, "obstacle"));
  }
  if (const auto n = node["start"]) g.start = r.cell(n, "start");
  if (const auto n = node["terminal"]) g.terminal = r.cell(n, "terminal");
  if (const auto n = node["treasure"]) g.treasure = r.cell(n, "treasure");
  r.read(node, "treasure_reward", g.treasure_reward);
  r.read(node, "terminal_reward", g.terminal_reward);
  r.read(node, "terminal_reward_persists", g.terminal_reward_persists);
  r.read(node, "progress_reward", g.progress_reward);
  if (const auto n = node["actions"]) {
    if (!n.IsSequence()) r.fail(n, "actions must be a list");
    g.actions.clear();
    for (const auto& a : n) {
      try {
        g.actions.push_back(move_from_string(r.scalar<std::string>(a, "action")));
      } catch (const std::invalid_argument& e) {
        r.fail(a, e.what());
      }
    }
  }
  if (const auto n = node["encoding"]) {
    if (n.IsMap()) {
      r.allow_keys(n, {"permuted"}, "encoding");
      g.encoding = {EncodingKind::permuted, r.scalar<std::uint64_t>(n["permuted"], "permuted seed")};
    } else {
      try {
        g.encoding = {encoding_from_string(r.scalar<std::string>(n, "encoding")), 0};
      } catch (const std::invalid_argument& e) {
        r.fail(n, e.what());
      }
      if (g.encoding.kind == EncodingKind::permuted) r.fail(n, "permuted encoding needs a seed: {permuted: <seed>}");
    }
  }
  r.read(node, "slip_prob", g.slip_prob);
  r.read(node, "gamma", g.gamma);
  r.read(node, "start_concentration", g.start_concentration);
  try {
    detail::validate_spec(g);
  } catch (const std::invalid_argument& e) {
    r.fail(node, e.what());
  }
  return g;
}

inline MapClass parse_map_class(const ConfigReader& r, const YAML::Node& node) {
  r.allow_keys(node, {"mode", "candidate_bound", "restarts", "max_sweeps"}, "map_class");
  MapClass cls;
  if (const auto n = node["mode"]) {
    try {
      cls.mode = map_search_from_string(r.scalar<std::string>(n, "mode"));
    } catch (const std::invalid_argument& e) {
      r.fail(n, e.what());
    }
    if (cls.mode == MapSearch::candidates) r.fail(n, "candidate lists cannot be given in a config file");
  }
  r.read(node, "candidate_bound", cls.candidate_bound);
  r.read(node, "restarts", cls.restarts);
  r.read(node, "max_sweeps", cls.max_sweeps);
  if (cls.restarts < 0 || cls.max_sweeps < 1) r.fail(node, "restarts must be >= 0 and max_sweeps >= 1");
  return cls;
}

// Applies the AlgoConfig keys present in node onto cfg.
inline void parse_algo_fields(const ConfigReader& r, const YAML::Node& node, AlgoConfig& cfg, bool& map_class_set) {
  r.read(node, "iterations", cfg.iterations);
  r.read(node, "samples_per_iter", cfg.samples_per_iter);
  if (const auto n = node["learning_rate"]) {
    if (n.IsScalar() && n.Scalar() == "default")
      cfg.learning_rate.reset();
    else
      cfg.learning_rate = r.scalar<double>(n, "learning_rate");
  }
  if (const auto n = node["final_policy"]) {
    const auto v = r.scalar<std::string>(n, "final_policy");
    if (v == "last-iterate") cfg.final_rule = FinalPolicyRule::last_iterate;
    else if (v == "uniform-mixture") cfg.final_rule = FinalPolicyRule::uniform_mixture;
    else r.fail(n, "final_policy must be last-iterate or uniform-mixture");
  }
  if (const auto n = node["error_window"]) {
    const auto v = r.scalar<std::string>(n, "error_window");
    if (v == "current-batch") cfg.error_window = ErrorWindow::current_batch;
    else if (v == "full-history") cfg.error_window = ErrorWindow::full_history;
    else r.fail(n, "error_window must be current-batch or full-history");
  }
  if (const auto n = node["restart_prob"]) cfg.restart_prob = r.scalar<double>(n, "restart_prob");
  r.read(node, "record_wall_time", cfg.record_wall_time);
  if (const auto n = node["sampling"]) {
    const auto v = r.scalar<std::string>(n, "sampling");
    // The behavior policy is bound to the target's dimensions after the scenario is built.
    if (v == "on-policy") cfg.behavior.reset();
    else if (v == "uniform-behavior") cfg.behavior = Policy::uniform(1, 1);
    else r.fail(n, "sampling must be on-policy or uniform-behavior");
  }
  if (const auto n = node["map_class"]) {
    cfg.map_class = parse_map_class(r, n);
    map_class_set = true;
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(node, e.what());
  }
}

inline constexpr std::initializer_list<const char*> kAlgoKeys = {
    "iterations", "samples_per_iter", "learning_rate", "final_policy", "error_window",
    "restart_prob", "record_wall_time", "sampling", "map_class"};

inline void parse_verify(const ConfigReader& r, const YAML::Node& node, VerifySuite& v) {
  r.allow_keys(node,
               {"seed", "gamma", "max_states", "max_actions", "bound_mdps", "bound_iterations", "bound_samples",
                "exact_critic_mdps", "pdl_trials", "ratio_mdps", "ratio_steps", "occupancy_mdps",
                "occupancy_episodes", "regret_trials", "regret_iterations", "anchor_mdps"},
               "verify");
  r.read(node, "seed", v.seed);
  r.read(node, "gamma", v.gamma);
  r.read(node, "max_states", v.max_states);
  r.read(node, "max_actions", v.max_actions);
  r.read(node, "bound_mdps", v.bound_mdps);
  r.read(node, "bound_iterations", v.bound_iterations);
  r.read(node, "bound_samples", v.bound_samples);
  r.read(node, "exact_critic_mdps", v.exact_critic_mdps);
  r.read(node, "pdl_trials", v.pdl_trials);
  r.read(node, "ratio_mdps", v.ratio_mdps);
  if (const auto n = node["ratio_steps"]) {
    if (!n.IsSequence() || n.size() == 0) r.fail(n, "ratio_steps must be a nonempty list");
    v.ratio_steps.clear();
    for (const auto& k : n) v.ratio_steps.push_back(r.scalar<int>(k, "ratio step"));
  }
  r.read(node, "occupancy_mdps", v.occupancy_mdps);
  r.read(node, "occupancy_episodes", v.occupancy_episodes);
  r.read(node, "regret_trials", v.regret_trials);
  r.read(node, "regret_iterations", v.regret_iterations);
  r.read(node, "anchor_mdps", v.anchor_mdps);
  if (!(v.gamma >= 0.0 && v.gamma < 1.0)) r.fail(node, "verify.gamma must lie in [0,1)");
  if (v.max_states < 1 || v.max_actions < 1 || v.bound_iterations < 1 || v.bound_samples < 1 ||
      v.regret_iterations < 1 || v.occupancy_episodes < 2)
    r.fail(node, "verify sizes must be positive");
}

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root, const std::string& file = "<config>") {
  detail::ConfigReader r(file);
  if (!root.IsDefined() || root.IsNull()) throw ConfigError(file + ": empty config");
  r.allow_keys(root,
               {"scenario", "scenario_seed", "low_quality_sweeps", "algorithms", "seeds", "output", "exact_logging",
                "verify_bounds", "threshold_fraction", "format", "defaults", "verify"},
               "config");
  ExperimentConfig cfg;
  cfg.source_file = file;

  if (const auto n = root["scenario"]) {
    if (n.IsMap()) {
      r.allow_keys(n, {"target", "source", "truncated_sweeps"}, "scenario");
      if (!n["target"] || !n["source"]) r.fail(n, "grid scenarios need both target and source");
      GridPair pair{detail::parse_grid(r, n["target"]), detail::parse_grid(r, n["source"]), std::nullopt};
      if (const auto k = n["truncated_sweeps"]) pair.truncated_sweeps = r.scalar<int>(k, "truncated_sweeps");
      cfg.scenario.grids = std::move(pair);
    } else {
      try {
        cfg.scenario.kind = scenario_from_string(r.scalar<std::string>(n, "scenario"));
      } catch (const std::invalid_argument& e) {
        r.fail(n, e.what());
      }
    }
  } else {
    r.fail(root, "missing required key 'scenario'");
  }
  r.read(root, "scenario_seed", cfg.scenario.seed);
  r.read(root, "low_quality_sweeps", cfg.scenario.options.low_quality_sweeps);

  AlgoConfig defaults;
  bool defaults_map_class = false;
  if (const auto n = root["defaults"]) {
    r.allow_keys(n, detail::kAlgoKeys, "defaults");
    detail::parse_algo_fields(r, n, defaults, defaults_map_class);
  }

  if (const auto n = root["algorithms"]) {
    if (!n.IsSequence() || n.size() == 0) r.fail(n, "algorithms must be a nonempty list");
    for (const auto& item : n) {
      AlgorithmEntry entry{"", defaults, defaults_map_class};
      if (item.IsMap()) {
        std::vector<const char*> keys(detail::kAlgoKeys.begin(), detail::kAlgoKeys.end());
        r.require_map(item, "algorithm entry");
        for (const auto& kv : item) {
          const auto key = kv.first.as<std::string>();
          if (key != "name" && std::find(keys.begin(), keys.end(), key) == keys.end())
            r.fail(kv.first, "unknown key '" + key + "' in algorithm entry");
        }
        if (!item["name"]) r.fail(item, "algorithm entry needs a name");
        detail::parse_algo_fields(r, item, entry.config, entry.map_class_set);
      }
      // Node assignment writes through to the referenced node, so bind once.
      const YAML::Node name_node = item.IsMap() ? item["name"] : item;
      entry.name = r.scalar<std::string>(name_node, "algorithm");
      if (entry.name != "q-npg" && entry.name != "dqt" && entry.name != "qavatar" && entry.name != "qavatar-multi")
        r.fail(name_node, "unknown algorithm '" + entry.name + "' (expected q-npg, dqt, qavatar or qavatar-multi)");
      cfg.algorithms.push_back(std::move(entry));
    }
  }

  if (const auto n = root["seeds"]) {
    if (!n.IsSequence() || n.size() == 0) r.fail(n, "seeds must be a nonempty list");
    for (const auto& s : n) cfg.seeds.push_back(r.scalar<std::uint64_t>(s, "seed"));
  } else {
    cfg.seeds = {1};
  }
  if (const auto n = root["output"]) cfg.output = r.scalar<std::string>(n, "output");
  r.read(root, "exact_logging", cfg.exact_logging);
  r.read(root, "verify_bounds", cfg.verify_bounds);
  r.read(root, "threshold_fraction", cfg.threshold_fraction);
  if (!(cfg.threshold_fraction > 0.0 && cfg.threshold_fraction <= 1.0))
    r.fail(root["threshold_fraction"], "threshold_fraction must lie in (0,1]");
  if (const auto n = root["format"]) {
    const auto v = r.scalar<std::string>(n, "format");
    if (v == "csv") cfg.format = OutputFormat::csv;
    else if (v == "json") cfg.format = OutputFormat::json;
    else r.fail(n, "format must be csv or json");
  }
  if (const auto n = root["verify"]) detail::parse_verify(r, n, cfg.verify);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError(path.string() + ": config file not found");
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path.string() + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                      ": " + e.msg);
  } catch (const YAML::BadFile&) {
    throw ConfigError(path.string() + ": cannot read config file");
  }
  return parse_config(root, path.string());
}

// GridSpec -> YAML, the inverse of the grid block accepted by parse_config.
inline YAML::Node grid_to_yaml(const GridSpec& g) {
  YAML::Node n;
  auto cell = [](Cell c) {
    YAML::Node p;
    p.SetStyle(YAML::EmitterStyle::Flow);
    p.push_back(c.x);
    p.push_back(c.y);
    return p;
  };
  n["width"] = g.width;
  n["height"] = g.height;
  YAML::Node obs(YAML::NodeType::Sequence);
  for (const auto& c : g.obstacles) obs.push_back(cell(c));
  n["obstacles"] = obs;
  n["start"] = cell(g.start);
  n["terminal"] = cell(g.terminal);
  if (g.treasure) n["treasure"] = cell(*g.treasure);
  n["treasure_reward"] = g.treasure_reward;
  n["terminal_reward"] = g.terminal_reward;
  n["terminal_reward_persists"] = g.terminal_reward_persists;
  n["progress_reward"] = g.progress_reward;
  YAML::Node acts(YAML::NodeType::Sequence);
  acts.SetStyle(YAML::EmitterStyle::Flow);
  for (Move m : g.actions) acts.push_back(std::string(to_string(m)));
  n["actions"] = acts;
  if (g.encoding.kind == EncodingKind::permuted)
    n["encoding"]["permuted"] = g.encoding.seed;
  else
    n["encoding"] = std::string(to_string(g.encoding.kind));
  n["slip_prob"] = g.slip_prob;
  n["gamma"] = g.gamma;
  n["start_concentration"] = g.start_concentration;
  return n;
}

inline GridSpec grid_from_yaml(const YAML::Node& node, const std::string& file = "<grid>") {
  return detail::parse_grid(detail::ConfigReader(file), node);
}

// ---------------------------------------------------------------------------
// Run-log sinks.

inline constexpr const char* kCsvHeader = "t,alpha,eps_td_emp,eps_cd_emp,eps_td_exact,eps_cd_exact,suboptimality,wall_ms";

inline std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

// Multi-source runs report the smallest per-source error in the CSV; the
// JSON log keeps every source.
inline std::string run_log_csv(const RunLog& log) {
  std::string out = std::string(kCsvHeader) + "\n";
  auto opt = [](const std::optional<double>& x) { return x ? format_number(*x) : std::string(); };
  auto smallest = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return *std::min_element(v.begin(), v.end());
  };
  for (const auto& r : log.records) {
    out += std::to_string(r.t) + "," + format_number(r.alpha) + "," + format_number(r.eps_td_emp) + "," +
           opt(smallest(r.eps_cd_emp)) + "," + opt(r.eps_td_exact) + "," + opt(smallest(r.eps_cd_exact)) + "," +
           opt(r.suboptimality) + "," + opt(r.wall_ms) + "\n";
  }
  return out;
}

inline nlohmann::json to_json(const IterationRecord& r) {
  nlohmann::json j{{"t", r.t},
                   {"alpha", r.alpha},
                   {"source_alphas", r.source_alphas},
                   {"eps_td_emp", r.eps_td_emp},
                   {"eps_cd_emp", r.eps_cd_emp},
                   {"eps_cd_exact", r.eps_cd_exact},
                   {"fit_rank_deficient", r.fit_rank_deficient}};
  j["eps_td_exact"] = r.eps_td_exact ? nlohmann::json(*r.eps_td_exact) : nlohmann::json(nullptr);
  j["suboptimality"] = r.suboptimality ? nlohmann::json(*r.suboptimality) : nlohmann::json(nullptr);
  j["wall_ms"] = r.wall_ms ? nlohmann::json(*r.wall_ms) : nlohmann::json(nullptr);
  nlohmann::json maps = nlohmann::json::array();
  for (const auto& m : r.maps) maps.push_back(to_json(m));
  j["maps"] = std::move(maps);
  return j;
}

inline nlohmann::json to_json(const RunLog& log) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : log.records) records.push_back(to_json(r));
  return {{"algorithm", log.algorithm},
          {"seed", log.seed},
          {"eta", log.eta},
          {"optimal_value", std::isnan(log.optimal_value) ? nlohmann::json(nullptr) : nlohmann::json(log.optimal_value)},
          {"returned_index", log.returned_index},
          {"records", std::move(records)}};
}

inline nlohmann::json to_json(const BoundReport& b) {
  return {{"kind", std::string(to_string(b.kind))},
          {"iterations", b.iterations},
          {"term_a", b.term_a},
          {"term_a_stated", b.term_a_stated},
          {"term_b", b.term_b},
          {"term_c", b.term_c},
          {"C0", b.C0},
          {"C1", b.C1},
          {"coverage_bound", b.coverage_bound},
          {"mu_min", b.mu_min},
          {"lhs_avg_suboptimality", b.lhs_avg_suboptimality},
          {"satisfied", b.satisfied},
          {"satisfied_as_stated", b.satisfied_as_stated},
          {"term_b_within_term_c", b.b_within_c}};
}

// ---------------------------------------------------------------------------
// Experiment execution.

struct ExperimentInstance {
  Scenario scenario;
  double optimal_value = 0.0;
  Policy optimal_policy;
};

inline ExperimentInstance instantiate(const ScenarioSpec& spec) {
  if (spec.kind) {
    Scenario sc = build_scenario(*spec.kind, spec.seed, spec.options);
    auto opt = value_iteration(sc.tar, 1e-10);
    const double v = start_value(sc.tar, opt.policy);
    return {std::move(sc), v, std::move(opt.policy)};
  }
  if (!spec.grids) throw std::invalid_argument("scenario: neither a named scenario nor a grid pair");
  const GridPair& g = *spec.grids;
  TabularMdp tar = build_grid(g.target).mdp;
  TabularMdp src = build_grid(g.source).mdp;
  QTable q = g.truncated_sweeps ? truncated_value_iteration(src, *g.truncated_sweeps) : value_iteration(src, 1e-10).q;
  q.values = q.values.cwiseMin(src.value_bound());
  const bool same_shape = tar.n_states() == src.n_states() && tar.n_actions() == src.n_actions();
  MapClass cls{same_shape ? MapSearch::fixed_identity : MapSearch::greedy_coordinate, 1'000'000, 2, 50, {}};
  Scenario sc = detail::single_source(ScenarioKind::perfect_transfer, std::move(tar), std::move(src), std::move(q), cls,
                                      std::nullopt, "grid pair from config");
  auto opt = value_iteration(sc.tar, 1e-10);
  const double v = start_value(sc.tar, opt.policy);
  return {std::move(sc), v, std::move(opt.policy)};
}

struct RunOutcome {
  std::string algorithm;
  std::uint64_t seed = 0;
  RunLog log;
  double final_return = 0.0;
  std::optional<BoundReport> bound;
};

struct AlgorithmSummary {
  std::string algorithm;
  int runs = 0;
  double final_return_mean = 0.0, final_return_std = 0.0;
  double final_suboptimality_mean = 0.0, final_suboptimality_std = 0.0;
  std::optional<double> time_to_threshold_mean, time_to_threshold_std;
  std::vector<double> alpha_trace;  // mean alpha per iteration
  bool bounds_satisfied = true;
};

struct ExperimentSummary {
  double optimal_value = 0.0;
  double threshold_fraction = 0.9;
  std::vector<RunOutcome> runs;  // sorted by (algorithm order, seed)
  std::vector<AlgorithmSummary> algorithms;
  bool bounds_ok = true;
};

// First iteration whose policy reaches fraction * V*(mu); T + 1 if none does.
inline int time_to_threshold(const RunLog& log, double optimal_value, double fraction) {
  for (const auto& r : log.records)
    if (r.suboptimality && optimal_value - *r.suboptimality >= fraction * optimal_value - 1e-12) return r.t;
  return static_cast<int>(log.records.size()) + 1;
}

namespace detail {

inline RunOutcome execute_run(const ExperimentInstance& inst, const AlgorithmEntry& entry, std::uint64_t seed,
                              bool exact_logging, bool verify_bounds) {
  const Scenario& sc = inst.scenario;
  AlgoConfig cfg = entry.config;
  cfg.seed = seed;
  cfg.exact_logging = exact_logging || verify_bounds;
  cfg.retain_iterates = verify_bounds;
  if (!entry.map_class_set) cfg.map_class = sc.map_class;
  if (!cfg.initial_map) cfg.initial_map = sc.initial_map;
  if (cfg.behavior) cfg.behavior = Policy::uniform(sc.tar.n_states(), sc.tar.n_actions());

  RunResult res;
  std::optional<BoundKind> kind;
  if (entry.name == "q-npg") {
    res = run_q_npg(sc.tar, cfg);
    kind = BoundKind::npg;
  } else if (entry.name == "dqt") {
    res = run_dqt(sc.tar, sc.q_src.front(), cfg);
    kind = BoundKind::dqt;
  } else if (entry.name == "qavatar") {
    res = run_qavatar(sc.tar, sc.q_src.front(), cfg);
    kind = BoundKind::qavatar;
  } else {
    res = run_qavatar(sc.tar, std::span<const QTable>(sc.q_src), cfg);
    if (sc.q_src.size() == 1) kind = BoundKind::qavatar;
  }
  RunOutcome out{entry.name, seed, std::move(res.log), start_value(sc.tar, res.policy), std::nullopt};
  if (verify_bounds && kind) {
    BoundOptions opts;
    if (cfg.behavior) opts.behavior = cfg.behavior;
    out.bound = prop_bound(*kind, sc.tar, out.log.iterates, inst.optimal_policy, opts);
  }
  out.log.iterates.clear();
  if (!exact_logging) {
    // Exact quantities were only computed for the bound; keep the log as configured.
    for (auto& r : out.log.records) {
      r.eps_td_exact.reset();
      r.eps_cd_exact.clear();
      r.suboptimality.reset();
    }
  }
  return out;
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  // Population standard deviation; zero for a single run.
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

}  // namespace detail

// Runs every (algorithm, seed) pair, optionally on several threads. Results
// are stored by job index, so the outcome does not depend on the thread count.
inline ExperimentSummary run_experiment_in_memory(const ExperimentConfig& cfg, int threads = 1) {
  if (cfg.algorithms.empty()) throw ConfigError(cfg.source_file + ": algorithms list is empty");
  if (cfg.seeds.empty()) throw ConfigError(cfg.source_file + ": seeds list is empty");
  const ExperimentInstance inst = instantiate(cfg.scenario);
  for (const auto& a : cfg.algorithms)
    if ((a.name == "dqt" || a.name == "qavatar") && inst.scenario.q_src.size() != 1)
      throw ConfigError(cfg.source_file + ": algorithm '" + a.name + "' needs a single-source scenario");

  struct Job {
    std::size_t algo;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < cfg.algorithms.size(); ++a)
    for (auto s : cfg.seeds) jobs.push_back({a, s});
  std::vector<std::optional<RunOutcome>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(jobs.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = detail::execute_run(inst, cfg.algorithms[jobs[i].algo], jobs[i].seed, cfg.exact_logging,
                                         cfg.verify_bounds);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("run failed: " + e);

  ExperimentSummary summary;
  summary.optimal_value = inst.optimal_value;
  summary.threshold_fraction = cfg.threshold_fraction;
  for (auto& r : results) summary.runs.push_back(std::move(*r));

  for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
    AlgorithmSummary s;
    s.algorithm = cfg.algorithms[a].name;
    std::vector<double> ret, sub, ttt;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].algo != a) continue;
      const RunOutcome& r = summary.runs[i];
      ++s.runs;
      ret.push_back(r.final_return);
      sub.push_back(inst.optimal_value - r.final_return);
      if (cfg.exact_logging) ttt.push_back(time_to_threshold(r.log, inst.optimal_value, cfg.threshold_fraction));
      if (s.alpha_trace.size() < r.log.records.size()) s.alpha_trace.resize(r.log.records.size(), 0.0);
      for (std::size_t t = 0; t < r.log.records.size(); ++t) s.alpha_trace[t] += r.log.records[t].alpha;
      if (r.bound && !r.bound->ok()) s.bounds_satisfied = false;
    }
    for (auto& x : s.alpha_trace) x /= s.runs;
    std::tie(s.final_return_mean, s.final_return_std) = detail::mean_std(ret);
    std::tie(s.final_suboptimality_mean, s.final_suboptimality_std) = detail::mean_std(sub);
    if (!ttt.empty()) {
      auto [m, sd] = detail::mean_std(ttt);
      s.time_to_threshold_mean = m;
      s.time_to_threshold_std = sd;
    }
    summary.bounds_ok = summary.bounds_ok && s.bounds_satisfied;
    summary.algorithms.push_back(std::move(s));
  }
  return summary;
}

inline nlohmann::json to_json(const ExperimentSummary& s) {
  nlohmann::json algos = nlohmann::json::array();
  for (const auto& a : s.algorithms) {
    nlohmann::json j{{"algorithm", a.algorithm},
                     {"runs", a.runs},
                     {"final_return_mean", a.final_return_mean},
                     {"final_return_std", a.final_return_std},
                     {"final_suboptimality_mean", a.final_suboptimality_mean},
                     {"final_suboptimality_std", a.final_suboptimality_std},
                     {"alpha_trace", a.alpha_trace},
                     {"bounds_satisfied", a.bounds_satisfied}};
    j["time_to_threshold_mean"] = a.time_to_threshold_mean ? nlohmann::json(*a.time_to_threshold_mean) : nlohmann::json(nullptr);
    j["time_to_threshold_std"] = a.time_to_threshold_std ? nlohmann::json(*a.time_to_threshold_std) : nlohmann::json(nullptr);
    algos.push_back(std::move(j));
  }
  return {{"optimal_value", s.optimal_value}, {"threshold_fraction", s.threshold_fraction}, {"algorithms", std::move(algos)}};
}

inline std::string summary_csv(const ExperimentSummary& s) {
  std::string out =
      "algorithm,runs,final_return_mean,final_return_std,final_suboptimality_mean,final_suboptimality_std,"
      "time_to_threshold_mean,time_to_threshold_std\n";
  auto opt = [](const std::optional<double>& x) { return x ? format_number(*x) : std::string(); };
  for (const auto& a : s.algorithms)
    out += a.algorithm + "," + std::to_string(a.runs) + "," + format_number(a.final_return_mean) + "," +
           format_number(a.final_return_std) + "," + format_number(a.final_suboptimality_mean) + "," +
           format_number(a.final_suboptimality_std) + "," + opt(a.time_to_threshold_mean) + "," +
           opt(a.time_to_threshold_std) + "\n";
  return out;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << content;
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace detail

// Writes run logs, the summary and (when requested) the bound reports.
inline void write_outputs(const ExperimentConfig& cfg, const ExperimentSummary& s) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.output / "runs", ec);
  if (ec) throw std::runtime_error(cfg.output.string() + ": cannot create output directory (" + ec.message() + ")");
  for (const auto& r : s.runs) {
    const std::string stem = r.algorithm + "_seed" + std::to_string(r.seed);
    if (cfg.format == OutputFormat::csv)
      detail::write_file(cfg.output / "runs" / (stem + ".csv"), run_log_csv(r.log));
    else
      detail::write_file(cfg.output / "runs" / (stem + ".json"), to_json(r.log).dump(1) + "\n");
  }
  detail::write_file(cfg.output / "summary.json", to_json(s).dump(1) + "\n");
  detail::write_file(cfg.output / "summary.csv", summary_csv(s));
  if (cfg.verify_bounds) {
    nlohmann::json bounds = nlohmann::json::array();
    for (const auto& r : s.runs) {
      nlohmann::json j{{"algorithm", r.algorithm}, {"seed", r.seed}};
      j["report"] = r.bound ? to_json(*r.bound) : nlohmann::json(nullptr);
      bounds.push_back(std::move(j));
    }
    detail::write_file(cfg.output / "bounds.json", bounds.dump(1) + "\n");
  }
}

inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, int threads = 1) {
  ExperimentSummary s = run_experiment_in_memory(cfg, threads);
  write_outputs(cfg, s);
  return s;
}

// ---------------------------------------------------------------------------
// Verification suites.

struct SuiteResult {
  std::string name;
  int trials = 0;
  int failures = 0;
  double seconds = 0.0;
  std::string detail;  // first failure, if any
  std::string note;    // informational, never a failure
};

struct VerifyReport {
  std::vector<SuiteResult> suites;
  std::vector<BoundReport> bounds;
  bool ok() const {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.failures == 0; });
  }
};

namespace detail {

struct RandomInstance {
  TabularMdp mdp;
  int n_states;
  int n_actions;
};

inline RandomInstance random_instance(const VerifySuite& v, std::uint64_t seed, int min_states = 2) {
  Rng rng(seed);
  const int S = min_states + rng.index(std::max(1, v.max_states - min_states + 1));
  const int A = 1 + rng.index(v.max_actions);
  return {random_mdp(S, std::max(A, 1), v.gamma, derive_seed(seed, 1)), S, std::max(A, 1)};
}

template <typename Fn>
SuiteResult timed_suite(std::string name, Fn&& body) {
  SuiteResult r;
  r.name = std::move(name);
  const auto start = std::chrono::steady_clock::now();
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline void note_stated_form(SuiteResult& r, const std::vector<BoundReport>& reports, std::size_t first) {
  int exceeded = 0;
  for (std::size_t i = first; i < reports.size(); ++i)
    if (!reports[i].satisfied_as_stated) ++exceeded;
  r.note = std::to_string(exceeded) + " of " + std::to_string(reports.size() - first) +
           " runs exceed the single-(1-gamma) form of term_a";
}

inline void record(SuiteResult& r, bool ok, const std::string& what) {
  ++r.trials;
  if (!ok) {
    ++r.failures;
    if (r.detail.empty()) r.detail = what;
  }
}

}  // namespace detail

// Lemma suites plus the bound sweep over random MDPs. Every check uses the
// supplied oracle for exact action values, so a corrupted oracle must be
// caught by at least one suite.
inline VerifyReport run_verification(const VerifySuite& v, const ExactOracle& oracle = {}) {
  VerifyReport rep;
  const std::uint64_t root = v.seed;

  rep.suites.push_back(detail::timed_suite("exact-q-anchor", [&](SuiteResult& r) {
    for (int i = 0; i < v.anchor_mdps; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 100 + i));
      Policy pi = random_policy(inst.n_states, inst.n_actions, derive_seed(root, 200 + i));
      const double err = td_error(inst.mdp, oracle.q(inst.mdp, pi), pi).per_pair.maxCoeff();
      detail::record(r, err <= 1e-10, "td error of the exact table is " + format_number(err));
    }
  }));

  rep.suites.push_back(detail::timed_suite("performance-difference", [&](SuiteResult& r) {
    for (int i = 0; i < v.pdl_trials; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 300 + i));
      Policy a = random_policy(inst.n_states, inst.n_actions, derive_seed(root, 400 + i));
      Policy b = random_policy(inst.n_states, inst.n_actions, derive_seed(root, 500 + i));
      auto c = check_performance_difference(inst.mdp, a, b, oracle);
      detail::record(r, c.holds, "lhs " + format_number(c.lhs) + " vs rhs " + format_number(c.rhs));
    }
  }));

  rep.suites.push_back(detail::timed_suite("importance-ratio", [&](SuiteResult& r) {
    for (int i = 0; i < v.ratio_mdps; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 600 + i));
      Policy pi = random_policy(inst.n_states, inst.n_actions, derive_seed(root, 700 + i));
      for (int k : v.ratio_steps) {
        auto c = check_importance_ratio(inst.mdp, pi, k);
        detail::record(r, c.holds, "k=" + std::to_string(k) + " worst ratio " + format_number(c.worst_ratio));
      }
    }
  }));

  rep.suites.push_back(detail::timed_suite("occupancy-identity", [&](SuiteResult& r) {
    for (int i = 0; i < v.occupancy_mdps; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 800 + i));
      Policy pi = random_policy(inst.n_states, inst.n_actions, derive_seed(root, 900 + i));
      Rng rng(derive_seed(root, 1000 + i));
      Matrix f(inst.n_states, inst.n_actions);
      for (int s = 0; s < inst.n_states; ++s)
        for (int a = 0; a < inst.n_actions; ++a) f(s, a) = 2.0 * rng.uniform() - 1.0;
      auto c = check_occupancy_identity(inst.mdp, pi, f, v.occupancy_episodes, derive_seed(root, 1100 + i));
      detail::record(r, c.holds,
                     "estimate " + format_number(c.estimate) + " +- " + format_number(c.std_error) + " vs " +
                         format_number(c.exact));
    }
  }));

  rep.suites.push_back(detail::timed_suite("regret-lemma", [&](SuiteResult& r) {
    for (int i = 0; i < v.regret_trials; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 1200 + i));
      const Policy star = value_iteration(inst.mdp, 1e-10).policy;
      Rng rng(derive_seed(root, 1300 + i));
      std::vector<QTable> critics;
      for (int t = 0; t < v.regret_iterations; ++t) {
        QTable c = QTable::zeros(inst.n_states, inst.n_actions);
        for (int s = 0; s < inst.n_states; ++s)
          for (int a = 0; a < inst.n_actions; ++a) c(s, a) = rng.uniform() * inst.mdp.value_bound();
        critics.push_back(std::move(c));
      }
      const double eta = (1.0 - v.gamma) * std::sqrt(1.0 / v.regret_iterations);
      auto c = check_regret_lemma(inst.mdp, critics, eta, star);
      detail::record(r, c.holds, "lhs " + format_number(c.lhs) + " vs rhs " + format_number(c.rhs));
    }
  }));

  // NPG driven by the exact critic: term_b must vanish.
  rep.suites.push_back(detail::timed_suite("exact-critic-bound", [&](SuiteResult& r) {
    const std::size_t first = rep.bounds.size();
    for (int i = 0; i < v.exact_critic_mdps; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 1400 + i));
      const Policy star = value_iteration(inst.mdp, 1e-10).policy;
      const double eta = (1.0 - v.gamma) * std::sqrt(1.0 / v.bound_iterations);
      Policy pi = Policy::uniform(inst.n_states, inst.n_actions);
      std::vector<IterateSnapshot> its;
      for (int t = 0; t < v.bound_iterations; ++t) {
        QTable q = exact_q(inst.mdp, pi);
        its.push_back({pi, q, {}, 0.0, {}, q});
        pi = npg_step(pi, q, eta);
      }
      BoundOptions opts;
      opts.oracle = oracle;
      auto b = prop_bound(BoundKind::npg, inst.mdp, its, star, opts);
      rep.bounds.push_back(b);
      detail::record(r, b.ok(), "term_b " + format_number(b.term_b) + " term_c " + format_number(b.term_c) + " lhs " +
                                    format_number(b.lhs_avg_suboptimality));
    }
    detail::note_stated_form(r, rep.bounds, first);
  }));

  rep.suites.push_back(detail::timed_suite("bound-sweep", [&](SuiteResult& r) {
    const std::size_t first = rep.bounds.size();
    for (int i = 0; i < v.bound_mdps; ++i) {
      auto inst = detail::random_instance(v, derive_seed(root, 1500 + i));
      const Policy star = value_iteration(inst.mdp, 1e-10).policy;
      // Source: an independent random MDP of the same shape.
      TabularMdp src = random_mdp(inst.n_states, inst.n_actions, v.gamma, derive_seed(root, 1600 + i));
      const QTable q_src = value_iteration(src, 1e-10).q;
      AlgoConfig cfg;
      cfg.iterations = v.bound_iterations;
      cfg.samples_per_iter = v.bound_samples;
      cfg.seed = derive_seed(root, 1700 + i);
      cfg.retain_iterates = true;
      cfg.exact_logging = false;
      cfg.map_class = MapClass{MapSearch::greedy_coordinate, 1'000'000, 1, 50, {}};
      BoundOptions opts;
      opts.oracle = oracle;
      const std::array<std::pair<BoundKind, RunResult>, 3> runs{{{BoundKind::npg, run_q_npg(inst.mdp, cfg)},
                                                                  {BoundKind::dqt, run_dqt(inst.mdp, q_src, cfg)},
                                                                  {BoundKind::qavatar, run_qavatar(inst.mdp, q_src, cfg)}}};
      for (const auto& [kind, res] : runs) {
        auto b = prop_bound(kind, inst.mdp, res.log.iterates, star, opts);
        rep.bounds.push_back(b);
        detail::record(r, b.ok(),
                       std::string(to_string(kind)) + " on mdp " + std::to_string(i) + ": lhs " +
                           format_number(b.lhs_avg_suboptimality) + " a " + format_number(b.term_a) + " b " +
                           format_number(b.term_b) + " c " + format_number(b.term_c));
      }
    }
    detail::note_stated_form(r, rep.bounds, first);
  }));
  return rep;
}

inline nlohmann::json to_json(const VerifyReport& rep) {
  nlohmann::json suites = nlohmann::json::array();
  for (const auto& s : rep.suites)
    suites.push_back({{"name", s.name}, {"trials", s.trials}, {"failures", s.failures}, {"detail", s.detail}, {"note", s.note}});
  nlohmann::json bounds = nlohmann::json::array();
  for (const auto& b : rep.bounds) bounds.push_back(to_json(b));
  return {{"ok", rep.ok()}, {"suites", std::move(suites)}, {"bounds", std::move(bounds)}};
}

// ---------------------------------------------------------------------------
// Toy table.

struct ToyRow {
  std::string map;
  double cd_loss = 0.0;     // sum of squared residuals along the optimal target trajectory
  double cycle_loss = 0.0;
};

struct ToyTable {
  std::vector<ToyRow> rows;
  std::string selected;  // map chosen by the cross-domain Bellman loss
  double reward_scale = 1.0;
};

inline ToyTable toy_table() {
  const ToyPair toy = build_toy_pair();
  const auto src_opt = value_iteration(toy.src.mdp, 1e-12);
  const auto tar_opt = value_iteration(toy.tar.mdp, 1e-12);
  const double g = toy.tar.mdp.gamma();
  ToyTable table;
  table.reward_scale = toy.src.reward_scale;
  const std::array<std::pair<const char*, const DomainMap*>, 2> maps{{{"A", &toy.traj_a_map}, {"B", &toy.traj_b_map}}};
  const std::array<const std::vector<PairedTransition>*, 2> pairings{&toy.traj_a_pairing, &toy.traj_b_pairing};
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const double n = static_cast<double>(toy.target_trajectory.size());
    const double loss = cd_loss(toy.target_trajectory, src_opt.q, *maps[i].second, tar_opt.policy, g) * n;
    const double cyc = cycle_consistency_loss(toy.tar.mdp, toy.src.mdp, *maps[i].second, *pairings[i]);
    table.rows.push_back({maps[i].first, loss, cyc});
  }
  MapClass cls{MapSearch::candidates, 2, 0, 50, {toy.traj_a_map, toy.traj_b_map}};
  auto pick = search_maps(toy.target_trajectory, src_opt.q, tar_opt.policy, g, cls, toy.traj_a_map, 0);
  table.selected = pick.map == toy.traj_a_map ? "A" : "B";
  return table;
}

}  // namespace qavatar
