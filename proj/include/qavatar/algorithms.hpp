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

// Tabular learners sharing one sampling / fitting / NPG loop:
//   Q-NPG    critic = fitted target table
//   DQT      critic = source table seen through the searched map
//   QAvatar  critic = (1 - alpha) target + alpha source, alpha from the
//            batch Bellman errors; several sources weight by inverse error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qavatar/domain_map.hpp"
#include "qavatar/estimators.hpp"
#include "qavatar/mapping.hpp"
#include "qavatar/mdp.hpp"
#include "qavatar/random.hpp"

namespace qavatar {

enum class FinalPolicyRule { last_iterate, uniform_mixture };

// Which transitions feed the empirical errors that set alpha.
enum class ErrorWindow { current_batch, full_history };

struct AlgoConfig {
  int iterations = 100;        // T
  int samples_per_iter = 64;   // N_tar
  std::optional<double> learning_rate;  // defaults to (1 - gamma) / sqrt(T)
  FinalPolicyRule final_rule = FinalPolicyRule::last_iterate;
  std::optional<Policy> behavior;       // off-policy sampling when set
  MapClass map_class;
  std::optional<DomainMap> initial_map;  // identity when dimensions agree, else all zeros
  std::uint64_t seed = 0;
  ErrorWindow error_window = ErrorWindow::current_batch;
  std::optional<double> restart_prob;   // defaults to 1 - gamma
  bool exact_logging = true;
  bool record_wall_time = false;
  bool retain_iterates = false;

  double eta(double gamma) const {
    return learning_rate ? *learning_rate : (1.0 - gamma) * std::sqrt(1.0 / iterations);
  }

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("config: iterations must be at least 1");
    if (samples_per_iter < 1) throw std::invalid_argument("config: samples_per_iter must be at least 1");
    if (learning_rate && !(*learning_rate > 0.0 && std::isfinite(*learning_rate)))
      throw std::invalid_argument("config: learning_rate must be positive");
    if (restart_prob && !(*restart_prob >= 0.0 && *restart_prob <= 1.0))
      throw std::invalid_argument("config: restart_prob must lie in [0,1]");
  }
};

// f = (1 - alpha) q_tar + alpha q_src_mapped.
struct HybridCritic {
  double alpha = 0.0;
  QTable q_tar;
  QTable q_src_mapped;

  QTable values() const { return {(1.0 - alpha) * q_tar.values + alpha * q_src_mapped.values}; }
};

// Per-iteration quantities retained for bound evaluation.
struct IterateSnapshot {
  Policy policy;                      // pi^(t), the policy that was evaluated
  QTable q_tar;                       // fitted target critic
  std::vector<QTable> q_src_mapped;   // one per source, pulled back through the map
  double alpha = 0.0;                 // total source weight
  std::vector<double> source_alphas;  // per-source weights
  QTable critic;                      // table used in the NPG step
};

struct IterationRecord {
  int t = 0;
  double alpha = 0.0;
  std::vector<double> source_alphas;
  double eps_td_emp = 0.0;
  std::vector<double> eps_cd_emp;  // one per source; empty for Q-NPG
  std::optional<double> eps_td_exact;
  std::vector<double> eps_cd_exact;
  std::optional<double> suboptimality;
  std::vector<DomainMap> maps;
  std::optional<double> wall_ms;
  bool fit_rank_deficient = false;
};

struct RunLog {
  std::string algorithm;
  std::uint64_t seed = 0;
  double eta = 0.0;
  double optimal_value = std::numeric_limits<double>::quiet_NaN();  // V*(mu) when exact logging is on
  std::vector<IterationRecord> records;
  std::vector<IterateSnapshot> iterates;  // filled when retain_iterates is set
  int returned_index = 0;                 // 1-based index of the returned policy (T + 1 = last iterate)
};

struct RunResult {
  Policy policy;
  RunLog log;
};

// Softmax mirror step: logits += eta * critic, then a per-row max shift.
inline Policy npg_step(const Policy& policy, const QTable& critic, double eta) {
  if (!(eta >= 0.0)) throw std::invalid_argument("npg_step: eta must be nonnegative");
  if (critic.n_states() != policy.n_states() || critic.n_actions() != policy.n_actions())
    throw std::invalid_argument("npg_step: critic dimensions do not match the policy");
  if (!critic.values.allFinite()) throw std::invalid_argument("npg_step: critic has non-finite entries");
  Matrix logits = policy.logits() + eta * critic.values;
  for (Eigen::Index s = 0; s < logits.rows(); ++s) logits.row(s).array() -= logits.row(s).maxCoeff();
  return Policy(std::move(logits));
}

// eps_td / (eps_cd + eps_td); 0.5 when both vanish.
inline double alpha_weight(double eps_td, double eps_cd) {
  if (!(eps_td >= 0.0) || !(eps_cd >= 0.0)) throw std::invalid_argument("alpha_weight: errors must be nonnegative");
  if (eps_td < 1e-15 && eps_cd < 1e-15) return 0.5;
  return eps_td / (eps_cd + eps_td);
}

struct MultiSourceWeights {
  double target = 0.0;
  std::vector<double> sources;
};

// Inverse-error weights over the target critic and each source critic.
inline MultiSourceWeights multi_source_alpha(double eps_td, std::span<const double> eps_cd) {
  if (eps_cd.empty()) throw std::invalid_argument("multi_source_alpha: no sources");
  if (!(eps_td >= 0.0)) throw std::invalid_argument("multi_source_alpha: errors must be nonnegative");
  constexpr double kFloor = 1e-12;
  const double inv_td = 1.0 / std::max(eps_td, kFloor);
  double denom = inv_td;
  std::vector<double> inv(eps_cd.size());
  for (std::size_t i = 0; i < eps_cd.size(); ++i) {
    if (!(eps_cd[i] >= 0.0)) throw std::invalid_argument("multi_source_alpha: errors must be nonnegative");
    inv[i] = 1.0 / std::max(eps_cd[i], kFloor);
    denom += inv[i];
  }
  MultiSourceWeights w{inv_td / denom, {}};
  w.sources.reserve(inv.size());
  for (double x : inv) w.sources.push_back(x / denom);
  return w;
}

enum class Learner { q_npg, dqt, qavatar };

inline std::string_view to_string(Learner l) {
  switch (l) {
    case Learner::q_npg: return "q-npg";
    case Learner::dqt: return "dqt";
    case Learner::qavatar: return "qavatar";
  }
  return "?";
}

struct RunOptions {
  // Overrides the computed alpha (total source weight) every iteration.
  std::optional<double> forced_alpha;
  // Replaces every source's empirical cross-domain error in the weighting.
  std::optional<double> forced_eps_cd;
};

namespace detail {

inline constexpr std::uint64_t kMapStreamTag = 0x6d61702d73656172ULL;
inline constexpr std::uint64_t kMixtureStreamTag = 0x6d69787475726521ULL;

inline DomainMap default_map(const TabularMdp& tar, const QTable& q_src) {
  if (tar.n_states() == q_src.n_states() && tar.n_actions() == q_src.n_actions())
    return DomainMap::identity(tar.n_states(), tar.n_actions());
  return {std::vector<int>(static_cast<std::size_t>(tar.n_states()), 0),
          std::vector<int>(static_cast<std::size_t>(tar.n_actions()), 0)};
}

inline RunResult run_loop(Learner learner, const TabularMdp& tar, std::span<const QTable> sources,
                          const AlgoConfig& config, const RunOptions& options) {
  config.validate();
  if (learner != Learner::q_npg && sources.empty())
    throw std::invalid_argument("run: transfer learners need at least one source table");
  if (options.forced_alpha && !(*options.forced_alpha >= 0.0 && *options.forced_alpha <= 1.0))
    throw std::invalid_argument("run: forced alpha must lie in [0,1]");
  if (options.forced_eps_cd && !(*options.forced_eps_cd >= 0.0))
    throw std::invalid_argument("run: forced cross-domain error must be nonnegative");
  if (config.behavior) check_dims(tar, *config.behavior);

  const double gamma = tar.gamma();
  const double eta = config.eta(gamma);
  const double restart = config.restart_prob.value_or(1.0 - gamma);
  const int S = tar.n_states();
  const int A = tar.n_actions();
  const std::size_t n_src = learner == Learner::q_npg ? 0 : sources.size();

  std::vector<DomainMap> maps;
  for (std::size_t i = 0; i < n_src; ++i) {
    DomainMap init = config.initial_map ? *config.initial_map : default_map(tar, sources[i]);
    init.validate(S, A, sources[i].n_states(), sources[i].n_actions());
    maps.push_back(std::move(init));
  }

  RunLog log;
  log.algorithm = std::string(to_string(learner));
  if (learner == Learner::qavatar && n_src > 1) log.algorithm = "qavatar-multi";
  log.seed = config.seed;
  log.eta = eta;
  log.records.reserve(static_cast<std::size_t>(config.iterations));
  if (config.exact_logging) log.optimal_value = start_value(tar, value_iteration(tar, 1e-10).policy);

  std::vector<Transition> history;
  std::vector<Policy> visited;
  Policy policy = Policy::uniform(S, A);

  for (int t = 1; t <= config.iterations; ++t) {
    const auto started = std::chrono::steady_clock::now();
    const Policy& sampler = config.behavior ? *config.behavior : policy;
    TransitionBatch batch = sample_batch(tar, sampler, static_cast<std::size_t>(config.samples_per_iter),
                                         derive_seed(config.seed, static_cast<std::uint64_t>(t)), restart,
                                         config.behavior ? "behavior" : "pi");
    std::span<const Transition> current(batch.transitions);
    std::span<const Transition> window = current;
    if (config.error_window == ErrorWindow::full_history) {
      history.insert(history.end(), batch.transitions.begin(), batch.transitions.end());
      window = history;
    }

    IterationRecord rec;
    rec.t = t;
    TdFit fit = fit_q_td(current, policy, S, A, gamma);
    rec.fit_rank_deficient = fit.rank_deficient;
    rec.eps_td_emp = empirical_td_error(window, fit.q, policy, gamma);

    std::vector<QTable> mapped;
    for (std::size_t i = 0; i < n_src; ++i) {
      const std::uint64_t stream = derive_seed(derive_seed(config.seed, kMapStreamTag + i), static_cast<std::uint64_t>(t));
      maps[i] = search_maps(current, sources[i], policy, gamma, config.map_class, maps[i], stream).map;
      rec.eps_cd_emp.push_back(empirical_cd_error(window, sources[i], maps[i], policy, gamma));
      mapped.push_back(pull_back(sources[i], maps[i]));
    }
    rec.maps = maps;

    QTable critic;
    switch (learner) {
      case Learner::q_npg:
        rec.alpha = 0.0;
        critic = fit.q;
        break;
      case Learner::dqt:
        rec.alpha = 1.0;
        rec.source_alphas = {1.0};
        critic = mapped.front();
        break;
      case Learner::qavatar: {
        std::vector<double> weighting_cd = rec.eps_cd_emp;
        if (options.forced_eps_cd) std::fill(weighting_cd.begin(), weighting_cd.end(), *options.forced_eps_cd);
        if (n_src == 1) {
          rec.alpha = options.forced_alpha ? *options.forced_alpha : alpha_weight(rec.eps_td_emp, weighting_cd.front());
          rec.source_alphas = {rec.alpha};
          critic = HybridCritic{rec.alpha, fit.q, mapped.front()}.values();
        } else {
          MultiSourceWeights w = multi_source_alpha(rec.eps_td_emp, weighting_cd);
          if (options.forced_alpha) {
            // Rescale the source weights to the forced total.
            const double total = 1.0 - w.target;
            for (auto& x : w.sources) x = total > 0.0 ? x * *options.forced_alpha / total : 0.0;
            w.target = 1.0 - *options.forced_alpha;
          }
          rec.source_alphas = w.sources;
          rec.alpha = 1.0 - w.target;
          Matrix f = w.target * fit.q.values;
          for (std::size_t i = 0; i < n_src; ++i) f += w.sources[i] * mapped[i].values;
          critic = {std::move(f)};
        }
        break;
      }
    }

    if (config.exact_logging) {
      rec.eps_td_exact = td_error(tar, fit.q, policy).weighted_norm;
      for (std::size_t i = 0; i < n_src; ++i)
        rec.eps_cd_exact.push_back(cross_domain_error(tar, sources[i], maps[i], policy).weighted_norm);
      rec.suboptimality = log.optimal_value - start_value(tar, policy);
    }

    Policy next = npg_step(policy, critic, eta);
    if (config.retain_iterates)
      log.iterates.push_back({policy, fit.q, mapped, rec.alpha, rec.source_alphas, critic});
    if (config.final_rule == FinalPolicyRule::uniform_mixture) visited.push_back(policy);
    policy = std::move(next);

    if (config.record_wall_time)
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    log.records.push_back(std::move(rec));
  }

  if (config.final_rule == FinalPolicyRule::uniform_mixture) {
    Rng rng(derive_seed(config.seed, kMixtureStreamTag));
    const int pick = rng.index(static_cast<int>(visited.size()));
    log.returned_index = pick + 1;
    return {visited[static_cast<std::size_t>(pick)], std::move(log)};
  }
  log.returned_index = config.iterations + 1;
  return {std::move(policy), std::move(log)};
}

}  // namespace detail

inline RunResult run_q_npg(const TabularMdp& tar, const AlgoConfig& config) {
  return detail::run_loop(Learner::q_npg, tar, {}, config, {});
}

inline RunResult run_dqt(const TabularMdp& tar, const QTable& q_src, const AlgoConfig& config) {
  return detail::run_loop(Learner::dqt, tar, std::span<const QTable>(&q_src, 1), config, {});
}

inline RunResult run_qavatar(const TabularMdp& tar, const QTable& q_src, const AlgoConfig& config,
                             const RunOptions& options = {}) {
  return detail::run_loop(Learner::qavatar, tar, std::span<const QTable>(&q_src, 1), config, options);
}

inline RunResult run_qavatar(const TabularMdp& tar, std::span<const QTable> sources, const AlgoConfig& config,
                             const RunOptions& options = {}) {
  return detail::run_loop(Learner::qavatar, tar, sources, config, options);
}

}  // namespace qavatar
