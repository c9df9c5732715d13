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

// qavatar: command-line driver for experiments, verification and the toy grid.
//
// Exit codes: 0 success, 1 configuration or I/O error, 2 verification failure.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qavatar/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitVerify = 2;

int thread_count(const std::optional<int>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("QAVATAR_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid QAVATAR_THREADS='" << env << "'\n";
  }
  return 1;
}

void apply_overrides(qavatar::ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out, const std::optional<std::string>& format) {
  if (seed) cfg.seeds = {*seed};
  if (out) cfg.output = *out;
  if (format) cfg.format = *format == "json" ? qavatar::OutputFormat::json : qavatar::OutputFormat::csv;
}

int cmd_run(const std::string& path, const std::optional<std::uint64_t>& seed, const std::optional<std::string>& out,
            const std::optional<std::string>& format, int threads) {
  qavatar::ExperimentConfig cfg = qavatar::load_config(path);
  apply_overrides(cfg, seed, out, format);
  const qavatar::ExperimentSummary s = qavatar::run_experiment(cfg, threads);
  std::printf("V*(mu) = %s, threshold fraction %s\n", qavatar::format_number(s.optimal_value).c_str(),
              qavatar::format_number(s.threshold_fraction).c_str());
  std::printf("%-14s %5s %24s %24s %24s\n", "algorithm", "runs", "final return", "final suboptimality",
              "time to threshold");
  auto pm = [](double m, double sd) { return qavatar::format_number(m) + " +- " + qavatar::format_number(sd); };
  for (const auto& a : s.algorithms) {
    const std::string ttt =
        a.time_to_threshold_mean ? pm(*a.time_to_threshold_mean, *a.time_to_threshold_std) : std::string("n/a");
    std::printf("%-14s %5d %24s %24s %24s\n", a.algorithm.c_str(), a.runs,
                pm(a.final_return_mean, a.final_return_std).c_str(),
                pm(a.final_suboptimality_mean, a.final_suboptimality_std).c_str(), ttt.c_str());
  }
  std::printf("outputs written to %s\n", cfg.output.string().c_str());
  if (cfg.verify_bounds && !s.bounds_ok) {
    std::fprintf(stderr, "bound verification failed; see %s\n", (cfg.output / "bounds.json").string().c_str());
    return kExitVerify;
  }
  return kExitOk;
}

int cmd_verify(const std::string& path, const std::optional<std::string>& out, const std::optional<std::string>& format,
               double q_fault) {
  const qavatar::ExperimentConfig cfg = qavatar::load_config(path);
  const qavatar::VerifyReport rep = qavatar::run_verification(cfg.verify, qavatar::ExactOracle{q_fault});
  if (format && *format == "json") {
    std::cout << qavatar::to_json(rep).dump(1) << "\n";
  } else {
    for (const auto& s : rep.suites) {
      std::printf("%-8s %-22s %4d trials %4d failures %8.3fs\n", s.failures == 0 ? "PASS" : "FAIL", s.name.c_str(),
                  s.trials, s.failures, s.seconds);
      if (!s.detail.empty()) std::printf("         first failure: %s\n", s.detail.c_str());
      if (!s.note.empty()) std::printf("         note: %s\n", s.note.c_str());
    }
  }
  if (out) {
    std::filesystem::create_directories(*out);
    qavatar::detail::write_file(std::filesystem::path(*out) / "verify.json", qavatar::to_json(rep).dump(1) + "\n");
  }
  return rep.ok() ? kExitOk : kExitVerify;
}

int cmd_toy(const std::optional<std::string>& format) {
  const qavatar::ToyTable table = qavatar::toy_table();
  if (format && *format == "json") {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows) rows.push_back({{"map", r.map}, {"cd_loss", r.cd_loss}, {"cycle_loss", r.cycle_loss}});
    std::cout << nlohmann::json{{"rows", rows}, {"selected", table.selected}, {"reward_scale", table.reward_scale}}.dump(1)
              << "\n";
    return kExitOk;
  }
  std::printf("map,cd_loss,cycle_loss\n");
  for (const auto& r : table.rows)
    std::printf("%s,%s,%s\n", r.map.c_str(), qavatar::format_number(r.cd_loss).c_str(),
                qavatar::format_number(r.cycle_loss).c_str());
  std::printf("# reward scale %s; map selected by the cross-domain Bellman loss: %s\n",
              qavatar::format_number(table.reward_scale).c_str(), table.selected.c_str());
  return kExitOk;
}

int cmd_list_scenarios() {
  for (auto kind : qavatar::kAllScenarios) {
    const qavatar::Scenario sc = qavatar::build_scenario(kind, 0);
    std::printf("%-28s |S|=%d |A|=%d sources=%zu map=%s  %s\n", std::string(qavatar::to_string(kind)).c_str(),
                sc.tar.n_states(), sc.tar.n_actions(), sc.sources.size(),
                std::string(qavatar::to_string(sc.map_class.mode)).c_str(), sc.notes.c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tabular cross-domain transfer with hybrid source/target critics"};
  app.require_subcommand(1);
  // Subcommands inherit this, so global flags may follow the subcommand.
  app.fallthrough();

  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out;
  std::optional<std::string> format;
  std::optional<int> threads;
  app.add_option("--seed-override", seed_override, "Replace the config's seed list with this seed");
  app.add_option("--out", out, "Output directory");
  app.add_option("--threads", threads, "Worker threads for the seed fan-out (falls back to QAVATAR_THREADS)")
      ->check(CLI::PositiveNumber);
  app.add_option("--format", format, "Run-log / report format")->check(CLI::IsMember({"csv", "json"}));

  std::string config_path;
  double q_fault = 0.0;
  auto* run = app.add_subcommand("run", "Run the seeded algorithm suite described by a config");
  run->add_option("config", config_path, "Experiment config (YAML)")->required();
  auto* verify = app.add_subcommand("verify", "Run the lemma and bound verification suites");
  verify->add_option("config", config_path, "Config holding a verify section (YAML)")->required();
  verify->add_option("--inject-q-fault", q_fault, "Add this offset to every exact action value (verifier self-test)");
  auto* toy = app.add_subcommand("toy", "Print the toy-grid loss table");
  auto* list = app.add_subcommand("list-scenarios", "List the built-in transfer scenarios");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seed_override, out, format, thread_count(threads));
    if (*verify) return cmd_verify(config_path, out, format, q_fault);
    if (*toy) return cmd_toy(format);
    if (*list) return cmd_list_scenarios();
  } catch (const qavatar::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
