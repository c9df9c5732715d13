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

// Finite discounted MDPs, tabular softmax policies, exact solvers and
// trajectory sampling.
//
// State-action pairs are flattened row-major: pair(s, a) = s * n_actions + a.
// All matrices indexed [s][a] are row-major so a row is a contiguous span.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include "qavatar/random.hpp"

namespace qavatar {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kStochasticTol = 1e-12;
// Logit gap used to encode a deterministic choice as a softmax policy.
inline constexpr double kGreedyLogitGap = 50.0;

class Policy;

class TabularMdp {
 public:
  // transition is row-major [s][a][s'].
  TabularMdp(int n_states, int n_actions, std::vector<double> transition, Matrix reward,
             double gamma, Matrix initial_dist)
      : n_states_(n_states),
        n_actions_(n_actions),
        gamma_(gamma),
        reward_(std::move(reward)),
        initial_(std::move(initial_dist)) {
    if (n_states < 1 || n_actions < 1) throw std::invalid_argument("mdp: empty state or action space");
    const auto pairs = static_cast<std::size_t>(n_states) * n_actions;
    if (transition.size() != pairs * n_states)
      throw std::invalid_argument("mdp: transition tensor has wrong size");
    if (reward_.rows() != n_states || reward_.cols() != n_actions)
      throw std::invalid_argument("mdp: reward matrix has wrong shape");
    if (initial_.rows() != n_states || initial_.cols() != n_actions)
      throw std::invalid_argument("mdp: initial distribution has wrong shape");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("mdp: gamma must lie in [0,1)");

    transition_ = Matrix(static_cast<Eigen::Index>(pairs), n_states);
    for (std::size_t i = 0; i < pairs; ++i) {
      double row_sum = 0.0;
      for (int s2 = 0; s2 < n_states; ++s2) {
        double p = transition[i * n_states + s2];
        if (!(p >= 0.0)) throw std::invalid_argument("mdp: negative transition probability");
        transition_(static_cast<Eigen::Index>(i), s2) = p;
        row_sum += p;
      }
      if (std::abs(row_sum - 1.0) > kStochasticTol)
        throw std::invalid_argument("mdp: transition row " + std::to_string(i) + " does not sum to 1");
    }
    if ((reward_.array() < 0.0).any() || (reward_.array() > 1.0).any() || !reward_.allFinite())
      throw std::invalid_argument("mdp: rewards must lie in [0,1]");
    if ((initial_.array() < 0.0).any())
      throw std::invalid_argument("mdp: negative initial probability");
    if (std::abs(initial_.sum() - 1.0) > kStochasticTol)
      throw std::invalid_argument("mdp: initial distribution does not sum to 1");
  }

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  int n_pairs() const { return n_states_ * n_actions_; }
  int pair(int s, int a) const { return s * n_actions_ + a; }
  double gamma() const { return gamma_; }
  double value_bound() const { return 1.0 / (1.0 - gamma_); }

  double p(int s, int a, int s2) const { return transition_(pair(s, a), s2); }
  std::span<const double> next_dist(int s, int a) const {
    return {transition_.data() + static_cast<std::ptrdiff_t>(pair(s, a)) * n_states_,
            static_cast<std::size_t>(n_states_)};
  }
  // (S*A) x S matrix; row pair(s,a) is P(.|s,a).
  const Matrix& transitions() const { return transition_; }

  double reward(int s, int a) const { return reward_(s, a); }
  const Matrix& rewards() const { return reward_; }

  double initial(int s, int a) const { return initial_(s, a); }
  const Matrix& initial() const { return initial_; }
  Vector initial_states() const { return initial_.rowwise().sum(); }
  double mu_min() const { return initial_.minCoeff(); }
  // Every initial (s,a) has positive mass.
  bool exploratory() const { return mu_min() > 0.0; }

  std::vector<double> flat_transition() const {
    return {transition_.data(), transition_.data() + transition_.size()};
  }

 private:
  int n_states_;
  int n_actions_;
  double gamma_;
  Matrix transition_;
  Matrix reward_;
  Matrix initial_;
};

// Tabular softmax policy. Probabilities are derived from the logits with a
// per-row max shift and cached at construction.
class Policy {
 public:
  Policy() = default;

  explicit Policy(Matrix logits) : logits_(std::move(logits)) {
    if (logits_.rows() < 1 || logits_.cols() < 1) throw std::invalid_argument("policy: empty logits");
    if (!logits_.allFinite()) throw std::invalid_argument("policy: non-finite logits");
    probs_ = Matrix(logits_.rows(), logits_.cols());
    for (Eigen::Index s = 0; s < logits_.rows(); ++s) {
      const double shift = logits_.row(s).maxCoeff();
      double z = 0.0;
      for (Eigen::Index a = 0; a < logits_.cols(); ++a) {
        probs_(s, a) = std::exp(logits_(s, a) - shift);
        z += probs_(s, a);
      }
      probs_.row(s) /= z;
    }
  }

  static Policy uniform(int n_states, int n_actions) {
    return Policy(Matrix::Zero(n_states, n_actions));
  }

  // Deterministic choice per state, encoded with a kGreedyLogitGap margin.
  static Policy deterministic(std::span<const int> actions, int n_actions) {
    Matrix logits = Matrix::Zero(static_cast<Eigen::Index>(actions.size()), n_actions);
    for (std::size_t s = 0; s < actions.size(); ++s)
      logits(static_cast<Eigen::Index>(s), actions[s]) = kGreedyLogitGap;
    return Policy(std::move(logits));
  }

  // Strictly positive row-stochastic matrix.
  static Policy from_probabilities(const Matrix& probs) {
    if ((probs.array() <= 0.0).any()) throw std::invalid_argument("policy: probabilities must be positive");
    return Policy(Matrix(probs.array().log()));
  }

  int n_states() const { return static_cast<int>(logits_.rows()); }
  int n_actions() const { return static_cast<int>(logits_.cols()); }
  const Matrix& logits() const { return logits_; }
  const Matrix& probabilities() const { return probs_; }
  double prob(int s, int a) const { return probs_(s, a); }
  std::span<const double> row(int s) const {
    return {probs_.data() + static_cast<std::ptrdiff_t>(s) * probs_.cols(),
            static_cast<std::size_t>(probs_.cols())};
  }

  friend bool operator==(const Policy& x, const Policy& y) { return x.logits_ == y.logits_; }

 private:
  Matrix logits_;
  Matrix probs_;
};

struct QTable {
  Matrix values;

  static QTable zeros(int n_states, int n_actions) { return {Matrix::Zero(n_states, n_actions)}; }
  double operator()(int s, int a) const { return values(s, a); }
  double& operator()(int s, int a) { return values(s, a); }
  int n_states() const { return static_cast<int>(values.rows()); }
  int n_actions() const { return static_cast<int>(values.cols()); }
};

// Discounted state-action visitation distribution, indexed by pair(s, a).
struct OccupancyMeasure {
  Vector dist;
  int n_actions = 1;

  double operator()(int s, int a) const { return dist(s * n_actions + a); }
  // [s][a] view of the distribution.
  Matrix as_matrix() const {
    Matrix m(dist.size() / n_actions, n_actions);
    for (Eigen::Index i = 0; i < dist.size(); ++i) m(i / n_actions, i % n_actions) = dist(i);
    return m;
  }
};

// How the first action of an episode is drawn. from_mu draws (s0, a0) jointly
// from the initial distribution; from_policy draws s0 from its state marginal
// and a0 from the policy.
enum class InitialAction { from_mu, from_policy };

struct Transition {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
};

struct TransitionBatch {
  std::vector<Transition> transitions;
  std::string policy_id;
  std::uint64_t seed = 0;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
};

inline void check_dims(const TabularMdp& mdp, const Policy& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions())
    throw std::invalid_argument("policy dimensions do not match the mdp");
}

// State-to-state kernel under the policy: sum_a pi(a|s) P(s'|s,a).
inline Matrix state_kernel(const TabularMdp& mdp, const Policy& policy) {
  check_dims(mdp, policy);
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  Matrix k = Matrix::Zero(S, S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) k.row(s) += policy.prob(s, a) * mdp.transitions().row(mdp.pair(s, a));
  return k;
}

// Solves V = r_pi + gamma P_pi V by dense LU on the state space and lifts to Q.
inline QTable exact_q(const TabularMdp& mdp, const Policy& policy) {
  const int S = mdp.n_states();
  const Matrix kernel = state_kernel(mdp, policy);
  Vector r_pi = mdp.rewards().cwiseProduct(policy.probabilities()).rowwise().sum();
  Matrix system = Matrix::Identity(S, S) - mdp.gamma() * kernel;
  Vector v = system.partialPivLu().solve(r_pi);
  Vector q = mdp.transitions() * v;
  QTable out = QTable::zeros(S, mdp.n_actions());
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) out(s, a) = mdp.reward(s, a) + mdp.gamma() * q(mdp.pair(s, a));
  return out;
}

inline Vector state_values(const QTable& q, const Policy& policy) {
  return q.values.cwiseProduct(policy.probabilities()).rowwise().sum();
}

inline Vector exact_v(const TabularMdp& mdp, const Policy& policy) {
  return state_values(exact_q(mdp, policy), policy);
}

// Expected discounted return from the initial state marginal.
inline double start_value(const TabularMdp& mdp, const Policy& policy) {
  return mdp.initial_states().dot(exact_v(mdp, policy));
}

// Solves the discounted flow equations for d^pi. With from_mu the first pair
// is drawn from the initial distribution itself, so d >= (1 - gamma) mu.
inline OccupancyMeasure occupancy(const TabularMdp& mdp, const Policy& policy,
                                  InitialAction start = InitialAction::from_mu) {
  const int S = mdp.n_states();
  const int A = mdp.n_actions();
  const double g = mdp.gamma();
  const Matrix kernel = state_kernel(mdp, policy);
  Matrix system_t = (Matrix::Identity(S, S) - g * kernel).transpose();
  OccupancyMeasure out{Vector::Zero(mdp.n_pairs()), A};
  if (start == InitialAction::from_mu) {
    Vector mu(mdp.n_pairs());
    for (int i = 0; i < mdp.n_pairs(); ++i) mu(i) = mdp.initial()(i / A, i % A);
    // rho(s') is the discounted mass flowing into s' after the first step.
    Vector inflow = (1.0 - g) * (mdp.transitions().transpose() * mu);
    Vector rho = system_t.partialPivLu().solve(inflow);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a)
        out.dist(mdp.pair(s, a)) = (1.0 - g) * mu(mdp.pair(s, a)) + g * rho(s) * policy.prob(s, a);
  } else {
    Vector states = system_t.partialPivLu().solve((1.0 - g) * mdp.initial_states());
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) out.dist(mdp.pair(s, a)) = states(s) * policy.prob(s, a);
  }
  return out;
}

// One step of the pair chain: (dist P_pi)(s',a') = sum dist(s,a) P(s'|s,a) pi(a'|s').
inline Vector push_forward(const TabularMdp& mdp, const Policy& policy, const Vector& dist) {
  const int A = mdp.n_actions();
  Vector states = mdp.transitions().transpose() * dist;
  Vector out(mdp.n_pairs());
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < A; ++a) out(mdp.pair(s, a)) = states(s) * policy.prob(s, a);
  return out;
}

// Argmax per row; values within a relative 1e-12 of the row max count as
// ties and resolve to the lowest action index.
inline std::vector<int> greedy_actions(const Matrix& q) {
  std::vector<int> out(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const double best = q.row(s).maxCoeff();
    const double tol = 1e-12 * (1.0 + std::abs(best));
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      if (q(s, a) >= best - tol) {
        out[static_cast<std::size_t>(s)] = static_cast<int>(a);
        break;
      }
    }
  }
  return out;
}

inline Policy greedy_policy(const QTable& q) {
  auto actions = greedy_actions(q.values);
  return Policy::deterministic(actions, q.n_actions());
}

namespace detail {

inline QTable evaluate_deterministic(const TabularMdp& mdp, const std::vector<int>& actions) {
  const int S = mdp.n_states();
  Matrix kernel(S, S);
  Vector r(S);
  for (int s = 0; s < S; ++s) {
    kernel.row(s) = mdp.transitions().row(mdp.pair(s, actions[static_cast<std::size_t>(s)]));
    r(s) = mdp.reward(s, actions[static_cast<std::size_t>(s)]);
  }
  Vector v = (Matrix::Identity(S, S) - mdp.gamma() * kernel).partialPivLu().solve(r);
  Vector next = mdp.transitions() * v;
  QTable q = QTable::zeros(S, mdp.n_actions());
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) q(s, a) = mdp.reward(s, a) + mdp.gamma() * next(mdp.pair(s, a));
  return q;
}

inline Matrix bellman_optimality(const TabularMdp& mdp, const Matrix& q) {
  Vector v = q.rowwise().maxCoeff();
  Vector next = mdp.transitions() * v;
  Matrix out = mdp.rewards();
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) out(s, a) += mdp.gamma() * next(mdp.pair(s, a));
  return out;
}

}  // namespace detail

struct OptimalSolution {
  QTable q;
  Policy policy;
};

// Value iteration to tolerance, then policy-iteration polishing so the
// returned table is the exact Q* of the final greedy policy.
inline OptimalSolution value_iteration(const TabularMdp& mdp, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("value_iteration: tol must be positive");
  const double g = mdp.gamma();
  Matrix q = Matrix::Zero(mdp.n_states(), mdp.n_actions());
  // ||Q_{k+1} - Q_k|| <= tol (1-g)/g implies ||Q_{k+1} - Q*|| <= tol.
  const double stop = g > 0.0 ? tol * (1.0 - g) / g : std::numeric_limits<double>::infinity();
  for (int it = 0; it < 1'000'000; ++it) {
    Matrix next = detail::bellman_optimality(mdp, q);
    const double diff = (next - q).cwiseAbs().maxCoeff();
    q = std::move(next);
    if (diff <= stop) break;
  }
  std::vector<int> actions = greedy_actions(q);
  QTable exact = detail::evaluate_deterministic(mdp, actions);
  for (int it = 0; it < 1000; ++it) {
    std::vector<int> improved = greedy_actions(exact.values);
    // Keep the incumbent on ties so the loop terminates.
    for (std::size_t s = 0; s < improved.size(); ++s) {
      const int s_i = static_cast<int>(s);
      if (exact(s_i, improved[s]) <= exact(s_i, actions[s]) + 1e-12 * (1.0 + std::abs(exact(s_i, actions[s]))))
        improved[s] = actions[s];
    }
    if (improved == actions) break;
    actions = std::move(improved);
    exact = detail::evaluate_deterministic(mdp, actions);
  }
  return {exact, greedy_policy(exact)};
}

// k sweeps of the Bellman optimality operator starting from zero.
inline QTable truncated_value_iteration(const TabularMdp& mdp, int sweeps) {
  Matrix q = Matrix::Zero(mdp.n_states(), mdp.n_actions());
  for (int k = 0; k < sweeps; ++k) q = detail::bellman_optimality(mdp, q);
  return {q};
}

// Draws n transitions along a single chain. After each step the chain
// restarts from (s, a) ~ mu with probability restart_prob; otherwise the next
// action is drawn from the policy at s'. With restart_prob = 1 - gamma the
// pair frequencies converge to the occupancy measure d^pi.
inline TransitionBatch sample_batch(const TabularMdp& mdp, const Policy& policy, std::size_t n,
                                    std::uint64_t seed, double restart_prob,
                                    std::string policy_id = "pi") {
  check_dims(mdp, policy);
  if (n < 1) throw std::invalid_argument("sample_batch: n must be at least 1");
  if (!(restart_prob >= 0.0 && restart_prob <= 1.0))
    throw std::invalid_argument("sample_batch: restart_prob must lie in [0,1]");
  Rng rng(seed);
  const int A = mdp.n_actions();
  std::span<const double> mu{mdp.initial().data(), static_cast<std::size_t>(mdp.n_pairs())};
  TransitionBatch batch;
  batch.policy_id = std::move(policy_id);
  batch.seed = seed;
  batch.transitions.reserve(n);
  int start = rng.categorical(mu);
  int s = start / A;
  int a = start % A;
  while (batch.transitions.size() < n) {
    const int s2 = rng.categorical(mdp.next_dist(s, a));
    batch.transitions.push_back({s, a, mdp.reward(s, a), s2});
    if (restart_prob > 0.0 && rng.uniform() < restart_prob) {
      start = rng.categorical(mu);
      s = start / A;
      a = start % A;
    } else {
      s = s2;
      a = rng.categorical(policy.row(s));
    }
  }
  return batch;
}

// Upper bound max d^ref(s,a) / ((1 - gamma) mu(s,a)) on the coverage constant
// of the reference policy. Valid because d^pi >= (1 - gamma) mu for every pi.
inline double coverage_bound(const TabularMdp& mdp, const Policy& ref,
                             InitialAction start = InitialAction::from_mu) {
  if (!mdp.exploratory()) throw std::invalid_argument("coverage_bound: initial distribution has zero entries");
  const OccupancyMeasure d = occupancy(mdp, ref, start);
  double best = 0.0;
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < mdp.n_actions(); ++a)
      best = std::max(best, d(s, a) / ((1.0 - mdp.gamma()) * mdp.initial(s, a)));
  return best;
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json to_json(const TabularMdp& mdp) {
  const auto& r = mdp.rewards();
  const auto& mu = mdp.initial();
  return {{"n_states", mdp.n_states()},
          {"n_actions", mdp.n_actions()},
          {"gamma", mdp.gamma()},
          {"transition", mdp.flat_transition()},
          {"reward", std::vector<double>(r.data(), r.data() + r.size())},
          {"initial_dist", std::vector<double>(mu.data(), mu.data() + mu.size())}};
}

inline TabularMdp mdp_from_json(const nlohmann::json& j) {
  const int S = j.at("n_states").get<int>();
  const int A = j.at("n_actions").get<int>();
  auto to_matrix = [&](const char* key) {
    auto flat = j.at(key).get<std::vector<double>>();
    if (flat.size() != static_cast<std::size_t>(S) * A)
      throw std::invalid_argument(std::string("mdp: field '") + key + "' has wrong length");
    return Matrix(Eigen::Map<Matrix>(flat.data(), S, A));
  };
  return TabularMdp(S, A, j.at("transition").get<std::vector<double>>(), to_matrix("reward"),
                    j.at("gamma").get<double>(), to_matrix("initial_dist"));
}

}  // namespace qavatar
