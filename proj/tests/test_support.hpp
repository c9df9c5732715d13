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

// Small fixtures and independent oracles shared by the unit tests. The
// oracles deliberately avoid the library's own Rng and solvers.

#include <cmath>
#include <random>
#include <vector>

#include "qavatar/mdp.hpp"

namespace qavatar::testing {

// One state, n_actions self-loops, constant reward.
inline TabularMdp single_state(int n_actions, double reward, double gamma) {
  std::vector<double> p(static_cast<std::size_t>(n_actions), 1.0);
  Matrix r = Matrix::Constant(1, n_actions, reward);
  Matrix mu = Matrix::Constant(1, n_actions, 1.0 / n_actions);
  return TabularMdp(1, n_actions, std::move(p), std::move(r), gamma, std::move(mu));
}

// Dense random model built with std::mt19937_64, independent of random_mdp.
inline TabularMdp dense_random(int S, int A, double gamma, unsigned seed, bool zero_reward = false) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> p(static_cast<std::size_t>(S) * A * S);
  for (int i = 0; i < S * A; ++i) {
    double z = 0.0;
    for (int j = 0; j < S; ++j) z += p[static_cast<std::size_t>(i) * S + j] = u(gen);
    for (int j = 0; j < S; ++j) p[static_cast<std::size_t>(i) * S + j] /= z;
  }
  Matrix r(S, A), mu(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      r(s, a) = zero_reward ? 0.0 : u(gen);
      mu(s, a) = u(gen);
    }
  mu /= mu.sum();
  return TabularMdp(S, A, std::move(p), std::move(r), gamma, std::move(mu));
}

inline Policy dense_policy(int S, int A, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix logits(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) logits(s, a) = n(gen);
  return Policy(logits);
}

// Monte-Carlo estimate of Q(s,a) from truncated rollouts.
struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline McEstimate monte_carlo_q(const TabularMdp& mdp, const Policy& pi, int s0, int a0, int episodes, int horizon,
                                unsigned seed) {
  std::mt19937_64 gen(seed);
  std::vector<std::discrete_distribution<int>> next, act;
  for (int i = 0; i < mdp.n_pairs(); ++i) {
    auto row = mdp.next_dist(i / mdp.n_actions(), i % mdp.n_actions());
    next.emplace_back(row.begin(), row.end());
  }
  for (int s = 0; s < mdp.n_states(); ++s) {
    auto row = pi.row(s);
    act.emplace_back(row.begin(), row.end());
  }
  double sum = 0.0, sum_sq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    int s = s0, a = a0;
    double ret = 0.0, disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      ret += disc * mdp.reward(s, a);
      disc *= mdp.gamma();
      s = next[static_cast<std::size_t>(mdp.pair(s, a))](gen);
      a = act[static_cast<std::size_t>(s)](gen);
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double n = episodes;
  const double mean = sum / n;
  return {mean, std::sqrt(std::max(0.0, sum_sq / n - mean * mean) / (n - 1.0))};
}

// Truncated series (1 - gamma) sum_t gamma^t P(s_t, a_t) with (s_0, a_0) ~ mu.
inline Matrix occupancy_series(const TabularMdp& mdp, const Policy& pi, int terms) {
  const int S = mdp.n_states(), A = mdp.n_actions();
  Matrix p = mdp.initial();
  Matrix acc = Matrix::Zero(S, A);
  double disc = 1.0;
  for (int t = 0; t <= terms; ++t) {
    acc += disc * p;
    disc *= mdp.gamma();
    Matrix q = Matrix::Zero(S, A);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        if (p(s, a) == 0.0) continue;
        for (int s2 = 0; s2 < S; ++s2)
          for (int a2 = 0; a2 < A; ++a2) q(s2, a2) += p(s, a) * mdp.p(s, a, s2) * pi.prob(s2, a2);
      }
    p = std::move(q);
  }
  return (1.0 - mdp.gamma()) * acc;
}

// Direct Bellman residual |q(s,a) - r(s,a) - gamma sum_s' P sum_a' pi q|, entrywise.
inline Matrix brute_residual(const TabularMdp& mdp, const Matrix& q, const Policy& pi) {
  Matrix out(mdp.n_states(), mdp.n_actions());
  for (int s = 0; s < mdp.n_states(); ++s)
    for (int a = 0; a < mdp.n_actions(); ++a) {
      double next = 0.0;
      for (int s2 = 0; s2 < mdp.n_states(); ++s2)
        for (int a2 = 0; a2 < mdp.n_actions(); ++a2) next += mdp.p(s, a, s2) * pi.prob(s2, a2) * q(s2, a2);
      out(s, a) = std::abs(q(s, a) - mdp.reward(s, a) - mdp.gamma() * next);
    }
  return out;
}

}  // namespace qavatar::testing
