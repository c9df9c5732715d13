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

// Bellman-residual estimators: least-squares TD fitting, exact and
// batch-based TD / cross-domain errors, the squared cross-domain loss used by
// the mapping search, and a dynamics-alignment (cycle consistency) loss.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qavatar/domain_map.hpp"
#include "qavatar/mdp.hpp"

namespace qavatar {

enum class Weighting { exact_occupancy, empirical_batch };

struct ErrorReport {
  Matrix per_pair;  // absolute residuals, [s][a]
  double weighted_norm = 0.0;
  Weighting weighting = Weighting::exact_occupancy;
};

namespace detail {

// E_{a' ~ pi(.|s')}[value(s', a')], computed exactly from the policy table.
template <typename ValueFn>
double policy_expectation(const Policy& policy, int s_next, ValueFn&& value) {
  double acc = 0.0;
  for (int a = 0; a < policy.n_actions(); ++a) acc += policy.prob(s_next, a) * value(s_next, a);
  return acc;
}

// Signed sample residual r + gamma E_pi[value(s',.)] - value(s,a).
template <typename ValueFn>
double sample_residual(const Transition& t, const Policy& policy, double gamma, ValueFn&& value) {
  return t.r + gamma * policy_expectation(policy, t.s_next, value) - value(t.s, t.a);
}

// Exact absolute Bellman residual of an arbitrary value table under the model.
inline ErrorReport exact_residual(const TabularMdp& mdp, const Matrix& values, const Policy& policy) {
  check_dims(mdp, policy);
  if (values.rows() != mdp.n_states() || values.cols() != mdp.n_actions())
    throw std::invalid_argument("residual: table dimensions do not match the mdp");
  Vector v = values.cwiseProduct(policy.probabilities()).rowwise().sum();
  Vector next = mdp.transitions() * v;
  ErrorReport out{Matrix(mdp.n_states(), mdp.n_actions()), 0.0, Weighting::exact_occupancy};
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < mdp.n_actions(); ++a)
      out.per_pair(s, a) = std::abs(values(s, a) - mdp.reward(s, a) - mdp.gamma() * next(mdp.pair(s, a)));
  const OccupancyMeasure d = occupancy(mdp, policy);
  out.weighted_norm = d.as_matrix().cwiseProduct(out.per_pair).sum();
  return out;
}

inline void require_nonempty(std::span<const Transition> batch) {
  if (batch.empty()) throw std::invalid_argument("estimator: empty transition batch");
}

}  // namespace detail

struct TdFit {
  QTable q;
  bool rank_deficient = false;
  int unknowns = 0;
  int rank = 0;
};

// Least-squares minimizer of the empirical TD loss over tabular Q. The
// unknowns are the (s, a) pairs that occur as the origin of a transition;
// every other entry is pinned at 0. The residual is affine in Q, so the
// minimizer is one linear least-squares solve (minimum norm when rank
// deficient). The result is clipped to [0, 1/(1-gamma)].
inline TdFit fit_q_td(std::span<const Transition> batch, const Policy& policy, int n_states, int n_actions,
                      double gamma) {
  detail::require_nonempty(batch);
  if (policy.n_states() != n_states || policy.n_actions() != n_actions)
    throw std::invalid_argument("fit_q_td: policy dimensions do not match");
  std::vector<int> column(static_cast<std::size_t>(n_states) * n_actions, -1);
  for (const auto& t : batch) column[static_cast<std::size_t>(t.s * n_actions + t.a)] = 0;
  int m = 0;
  for (auto& c : column)
    if (c == 0) c = m++;

  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.size()), m);
  Eigen::VectorXd target(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& t = batch[k];
    const auto row = static_cast<Eigen::Index>(k);
    design(row, column[static_cast<std::size_t>(t.s * n_actions + t.a)]) += 1.0;
    for (int a = 0; a < n_actions; ++a) {
      const int c = column[static_cast<std::size_t>(t.s_next * n_actions + a)];
      if (c >= 0) design(row, c) -= gamma * policy.prob(t.s_next, a);
    }
    target(row) = t.r;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
  Eigen::VectorXd solution = cod.solve(target);

  TdFit fit{QTable::zeros(n_states, n_actions), cod.rank() < m, m, static_cast<int>(cod.rank())};
  const double hi = 1.0 / (1.0 - gamma);
  for (int i = 0; i < n_states * n_actions; ++i) {
    const int c = column[static_cast<std::size_t>(i)];
    if (c >= 0) fit.q(i / n_actions, i % n_actions) = std::clamp(solution(c), 0.0, hi);
  }
  return fit;
}

inline TdFit fit_q_td(const TransitionBatch& batch, const Policy& policy, int n_states, int n_actions,
                      double gamma) {
  return fit_q_td(std::span<const Transition>(batch.transitions), policy, n_states, n_actions, gamma);
}

// Unsquared empirical TD loss: mean of |r + gamma E_pi q(s',.) - q(s,a)|.
inline double empirical_td_error(std::span<const Transition> batch, const QTable& q, const Policy& policy,
                                 double gamma) {
  detail::require_nonempty(batch);
  auto value = [&](int s, int a) { return q(s, a); };
  double acc = 0.0;
  for (const auto& t : batch) acc += std::abs(detail::sample_residual(t, policy, gamma, value));
  return acc / static_cast<double>(batch.size());
}

inline double empirical_td_error(const TransitionBatch& batch, const QTable& q, const Policy& policy,
                                 double gamma) {
  return empirical_td_error(std::span<const Transition>(batch.transitions), q, policy, gamma);
}

// Exact per-pair TD error of q under the model, weighted by d^pi.
inline ErrorReport td_error(const TabularMdp& mdp, const QTable& q, const Policy& policy) {
  return detail::exact_residual(mdp, q.values, policy);
}

// Cross-domain Bellman error: the TD error of the source table pulled back
// into the target domain through the map.
inline ErrorReport cross_domain_error(const TabularMdp& tar, const QTable& q_src, const DomainMap& map,
                                      const Policy& policy) {
  map.validate(tar.n_states(), tar.n_actions(), q_src.n_states(), q_src.n_actions());
  return detail::exact_residual(tar, pull_back(q_src, map).values, policy);
}

namespace detail {

template <typename Reduce>
double mapped_batch_mean(std::span<const Transition> batch, const QTable& q_src, const DomainMap& map,
                         const Policy& policy, double gamma, Reduce&& reduce) {
  require_nonempty(batch);
  auto value = [&](int s, int a) {
    return q_src(map.state_map[static_cast<std::size_t>(s)], map.action_map[static_cast<std::size_t>(a)]);
  };
  double acc = 0.0;
  for (const auto& t : batch) acc += reduce(sample_residual(t, policy, gamma, value));
  return acc / static_cast<double>(batch.size());
}

}  // namespace detail

inline double empirical_cd_error(std::span<const Transition> batch, const QTable& q_src, const DomainMap& map,
                                 const Policy& policy, double gamma) {
  return detail::mapped_batch_mean(batch, q_src, map, policy, gamma, [](double x) { return std::abs(x); });
}

inline double empirical_cd_error(const TransitionBatch& batch, const QTable& q_src, const DomainMap& map,
                                 const Policy& policy, double gamma) {
  return empirical_cd_error(std::span<const Transition>(batch.transitions), q_src, map, policy, gamma);
}

// Squared cross-domain Bellman loss minimized by the mapping search.
inline double cd_loss(std::span<const Transition> batch, const QTable& q_src, const DomainMap& map,
                      const Policy& policy, double gamma) {
  return detail::mapped_batch_mean(batch, q_src, map, policy, gamma, [](double x) { return x * x; });
}

inline double cd_loss(const TransitionBatch& batch, const QTable& q_src, const DomainMap& map,
                      const Policy& policy, double gamma) {
  return cd_loss(std::span<const Transition>(batch.transitions), q_src, map, policy, gamma);
}

struct PairedTransition {
  Transition target;
  Transition source;
};

enum class ActionAlignment {
  ignore,   // compare mapped state transitions only
  require,  // additionally require psi(a) = b
};

// Fraction of paired transitions whose mapped target transition does not
// coincide with the paired source transition.
inline double cycle_consistency_loss(const TabularMdp& tar, const TabularMdp& src, const DomainMap& map,
                                     std::span<const PairedTransition> pairing,
                                     ActionAlignment actions = ActionAlignment::ignore) {
  if (pairing.empty()) throw std::invalid_argument("cycle_consistency_loss: empty pairing");
  map.validate(tar.n_states(), tar.n_actions(), src.n_states(), src.n_actions());
  auto feasible = [](const TabularMdp& m, const Transition& t) {
    return t.s >= 0 && t.s < m.n_states() && t.a >= 0 && t.a < m.n_actions() && t.s_next >= 0 &&
           t.s_next < m.n_states() && m.p(t.s, t.a, t.s_next) > 0.0;
  };
  int misaligned = 0;
  for (const auto& [t, u] : pairing) {
    if (!feasible(tar, t) || !feasible(src, u))
      throw std::invalid_argument("cycle_consistency_loss: transition infeasible in its domain");
    const bool states_ok = map.state_map[static_cast<std::size_t>(t.s)] == u.s &&
                           map.state_map[static_cast<std::size_t>(t.s_next)] == u.s_next;
    const bool action_ok =
        actions == ActionAlignment::ignore || map.action_map[static_cast<std::size_t>(t.a)] == u.a;
    if (!(states_ok && action_ok)) ++misaligned;
  }
  return static_cast<double>(misaligned) / static_cast<double>(pairing.size());
}

}  // namespace qavatar
