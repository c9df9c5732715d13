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

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "qavatar/environments.hpp"
#include "qavatar/mdp.hpp"
#include "qavatar/random.hpp"
#include "test_support.hpp"

namespace qavatar {
namespace {

using testing::dense_policy;
using testing::dense_random;
using testing::single_state;

TEST(TabularMdp, RejectsInvalidModels) {
  Matrix r = Matrix::Zero(1, 1), mu = Matrix::Ones(1, 1);
  EXPECT_THROW(TabularMdp(1, 1, {0.5}, r, 0.9, mu), std::invalid_argument);
  EXPECT_THROW(TabularMdp(1, 1, {1.0}, Matrix::Constant(1, 1, 1.5), 0.9, mu), std::invalid_argument);
  EXPECT_THROW(TabularMdp(1, 1, {1.0}, r, 1.0, mu), std::invalid_argument);
  EXPECT_THROW(TabularMdp(1, 1, {1.0}, r, 0.9, Matrix::Constant(1, 1, 0.5)), std::invalid_argument);
  EXPECT_THROW(TabularMdp(0, 1, {}, Matrix(0, 1), 0.9, Matrix(0, 1)), std::invalid_argument);
}

TEST(TabularMdp, JsonRoundTripIsExact) {
  const TabularMdp m = dense_random(4, 3, 0.9, 11);
  const TabularMdp back = mdp_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.transitions(), m.transitions());
  EXPECT_EQ(back.rewards(), m.rewards());
  EXPECT_EQ(back.initial(), m.initial());
  EXPECT_EQ(back.gamma(), m.gamma());
}

TEST(Policy, UniformAndOverflowSafe) {
  const Policy u = Policy::uniform(3, 4);
  EXPECT_TRUE((u.logits().array() == 0.0).all());
  EXPECT_NEAR(u.prob(2, 1), 0.25, 1e-15);
  Matrix big(1, 2);
  big << 1e6, 1e6 - 1.0;
  const Policy p(big);
  EXPECT_NEAR(p.prob(0, 0) + p.prob(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(p.prob(0, 0) / p.prob(0, 1), std::exp(1.0), 1e-9);
  const std::vector<int> acts{1, 0};
  const Policy d = Policy::deterministic(acts, 3);
  EXPECT_LT(d.prob(0, 0), 1e-20);
  EXPECT_EQ(d.prob(0, 1), 1.0);  // exp(-50) is below half an ulp of 1
}

TEST(ExactQ, SingleStateGeometricSeries) {
  const TabularMdp m = single_state(2, 1.0, 0.5);
  const QTable q = exact_q(m, dense_policy(1, 2, 3));
  EXPECT_NEAR(q(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(q(0, 1), 2.0, 1e-12);
}

TEST(ExactQ, ZeroRewardGivesZero) {
  const TabularMdp m = dense_random(5, 2, 0.9, 4, /*zero_reward=*/true);
  EXPECT_LT(exact_q(m, dense_policy(5, 2, 1)).values.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExactQ, BellmanResidualBelowTolerance) {
  for (unsigned seed = 1; seed <= 10; ++seed) {
    const TabularMdp m = dense_random(6, 3, 0.95, seed);
    const Policy pi = dense_policy(6, 3, seed + 100);
    const QTable q = exact_q(m, pi);
    EXPECT_LE(testing::brute_residual(m, q.values, pi).maxCoeff(), 1e-10);
    EXPECT_GE(q.values.minCoeff(), 0.0);
    EXPECT_LE(q.values.maxCoeff(), m.value_bound() + 1e-12);
  }
}

TEST(ExactQ, MatchesMonteCarloRollouts) {
  const TabularMdp m = dense_random(6, 3, 0.9, 21);
  const Policy pi = dense_policy(6, 3, 22);
  const QTable q = exact_q(m, pi);
  // Horizon 200 leaves a bias below 0.9^200 / 0.1 < 1e-8.
  for (const auto& [s, a] : std::vector<std::pair<int, int>>{{0, 0}, {2, 1}, {5, 2}}) {
    const auto mc = testing::monte_carlo_q(m, pi, s, a, 100000, 200, 1000u + static_cast<unsigned>(s * 3 + a));
    EXPECT_LE(std::abs(mc.mean - q(s, a)), 3.0 * mc.std_error) << "pair " << s << "," << a;
  }
}

TEST(ExactV, DeterministicPolicyAndSingleState) {
  const TabularMdp m = dense_random(4, 3, 0.9, 5);
  const std::vector<int> acts{2, 0, 1, 1};
  const Policy pi = Policy::deterministic(acts, 3);
  const QTable q = exact_q(m, pi);
  const Vector v = exact_v(m, pi);
  for (int s = 0; s < 4; ++s) EXPECT_NEAR(v(s), q(s, acts[static_cast<std::size_t>(s)]), 1e-10);
  EXPECT_NEAR(exact_v(single_state(1, 1.0, 0.99), Policy::uniform(1, 1))(0), 100.0, 1e-9);
}

TEST(Occupancy, SingleStateSingleAction) {
  const OccupancyMeasure d = occupancy(single_state(1, 0.3, 0.7), Policy::uniform(1, 1));
  EXPECT_NEAR(d(0, 0), 1.0, 1e-14);
}

TEST(Occupancy, AbsorbingStateReachedAtFirstStep) {
  // State 0 moves to absorbing state 1 under both actions; mu sits on state 0.
  const double g = 0.8;
  std::vector<double> p{0, 1, 0, 1, 0, 1, 0, 1};
  Matrix r = Matrix::Zero(2, 2);
  Matrix mu(2, 2);
  mu << 0.5, 0.5, 0.0, 0.0;
  const TabularMdp m(2, 2, p, r, g, mu);
  Matrix probs(2, 2);
  probs << 0.5, 0.5, 0.3, 0.7;
  const Policy pi = Policy::from_probabilities(probs);
  const OccupancyMeasure d = occupancy(m, pi);
  EXPECT_NEAR(d(1, 0) + d(1, 1), g, 1e-12);
  EXPECT_NEAR(d(1, 0), g * 0.3, 1e-12);
  EXPECT_NEAR(d(1, 1), g * 0.7, 1e-12);
}

TEST(Occupancy, MatchesTruncatedSeries) {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const TabularMdp m = dense_random(6, 3, 0.9, seed * 7);
    const Policy pi = dense_policy(6, 3, seed * 7 + 1);
    const Matrix series = testing::occupancy_series(m, pi, 2000);
    EXPECT_LE((occupancy(m, pi).as_matrix() - series).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Occupancy, PolicyStartUsesStateMarginal) {
  const TabularMdp m = dense_random(5, 2, 0.9, 8);
  const Policy pi = dense_policy(5, 2, 9);
  // Equivalent model whose initial pairs already follow pi.
  Matrix mu(5, 2);
  const Vector states = m.initial_states();
  for (int s = 0; s < 5; ++s)
    for (int a = 0; a < 2; ++a) mu(s, a) = states(s) * pi.prob(s, a);
  std::vector<double> p = m.flat_transition();
  const TabularMdp m2(5, 2, p, m.rewards(), m.gamma(), mu);
  EXPECT_LE((occupancy(m, pi, InitialAction::from_policy).as_matrix() - testing::occupancy_series(m2, pi, 2000))
                .cwiseAbs()
                .maxCoeff(),
            1e-8);
}

TEST(Occupancy, InvariantsAndLowerBound) {
  // Pair (1, *) is unreachable after t = 0: every transition lands in state 0 or 2.
  std::vector<double> p;
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) p.insert(p.end(), {0.5, 0.0, 0.5});
  Matrix r = Matrix::Constant(3, 2, 0.1);
  Matrix mu = Matrix::Constant(3, 2, 1.0 / 6.0);
  const TabularMdp m(3, 2, p, r, 0.9, mu);
  const OccupancyMeasure d = occupancy(m, dense_policy(3, 2, 4));
  EXPECT_NEAR(d.dist.sum(), 1.0, 1e-10);
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) {
      const double lower = (1.0 - m.gamma()) * m.initial(s, a);
      EXPECT_GE(d(s, a), lower - 1e-15);
      if (s == 1)
        EXPECT_NEAR(d(s, a), lower, 1e-14);
      else
        EXPECT_GT(d(s, a), lower + 1e-6);
    }
}

TEST(ValueIteration, ZeroRewards) {
  const TabularMdp m = dense_random(4, 2, 0.9, 3, true);
  EXPECT_LT(value_iteration(m, 1e-10).q.values.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ValueIteration, TwoStateChainPrefersRewardingMove) {
  // Action 0 stays at 0 (reward 0); action 1 moves to absorbing state 1 that pays 1.
  std::vector<double> p{1, 0, 0, 1, 0, 1, 0, 1};
  Matrix r(2, 2);
  r << 0, 0, 1, 1;
  const TabularMdp m(2, 2, p, r, 0.5, Matrix::Constant(2, 2, 0.25));
  const auto opt = value_iteration(m, 1e-12);
  EXPECT_GT(opt.policy.prob(0, 1), 1.0 - 1e-15);
  EXPECT_NEAR(opt.q(0, 1), 0.5 * 2.0, 1e-10);
}

TEST(ValueIteration, TiesResolveToLowestIndex) {
  const auto opt = value_iteration(single_state(3, 0.5, 0.9), 1e-10);
  EXPECT_GT(opt.policy.prob(0, 0), 1.0 - 1e-15);
}

TEST(ValueIteration, DominatesRandomPolicies) {
  const double tol = 1e-8;
  const TabularMdp m = dense_random(5, 3, 0.9, 31);
  const auto opt = value_iteration(m, tol);
  const Vector v_star = exact_v(m, opt.policy);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.001, 1.0);
  for (int k = 0; k < 1000; ++k) {
    Matrix probs(5, 3);
    for (int s = 0; s < 5; ++s) {
      for (int a = 0; a < 3; ++a) probs(s, a) = u(gen);
      probs.row(s) /= probs.row(s).sum();
    }
    const Vector v = exact_v(m, Policy::from_probabilities(probs));
    ASSERT_TRUE(((v_star - v).array() >= -tol / (1.0 - m.gamma())).all());
  }
}

TEST(ValueIteration, ToySourceOptimalTrajectory) {
  const ToyPair toy = build_toy_pair();
  const auto opt = value_iteration(toy.src.mdp, 1e-12);
  // Greedy rollout: (0,0) -> (0,1) -> (0,2) treasure -> (1,2) -> (2,2) end.
  int s = toy.src.state({0, 0});
  std::vector<Cell> cells{toy.src.cell_of(s)};
  for (int step = 0; step < 4; ++step) {
    const int a = greedy_actions(opt.q.values)[static_cast<std::size_t>(s)];
    const auto row = toy.src.mdp.next_dist(s, a);
    s = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    cells.push_back(toy.src.cell_of(s));
  }
  const std::vector<Cell> expected{{0, 0}, {0, 1}, {0, 2}, {1, 2}, {2, 2}};
  EXPECT_EQ(cells, expected);
}

TEST(SampleBatch, SingleTransitionAndValidation) {
  const TabularMdp m = single_state(1, 0.25, 0.9);
  const auto b = sample_batch(m, Policy::uniform(1, 1), 1, 3, 0.1);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.transitions[0].s, 0);
  EXPECT_EQ(b.transitions[0].s_next, 0);
  EXPECT_EQ(b.transitions[0].r, 0.25);
  EXPECT_THROW(sample_batch(m, Policy::uniform(1, 1), 0, 3, 0.1), std::invalid_argument);
  EXPECT_THROW(sample_batch(m, Policy::uniform(1, 1), 1, 3, 1.5), std::invalid_argument);
}

TEST(SampleBatch, DeterministicReplayWithoutRestarts) {
  // Ring of 4 states; action 0 advances, action 1 stays. mu sits on (0, 0).
  std::vector<double> p;
  for (int s = 0; s < 4; ++s) {
    for (int s2 = 0; s2 < 4; ++s2) p.push_back(s2 == (s + 1) % 4 ? 1.0 : 0.0);
    for (int s2 = 0; s2 < 4; ++s2) p.push_back(s2 == s ? 1.0 : 0.0);
  }
  Matrix mu = Matrix::Zero(4, 2);
  mu(0, 0) = 1.0;
  const TabularMdp m(4, 2, p, Matrix::Zero(4, 2), 0.9, mu);
  const std::vector<int> acts{0, 0, 0, 0};
  const auto b = sample_batch(m, Policy::deterministic(acts, 2), 9, 17, 0.0);
  for (std::size_t k = 0; k < b.size(); ++k) {
    EXPECT_EQ(b.transitions[k].s, static_cast<int>(k % 4));
    EXPECT_EQ(b.transitions[k].a, 0);
    EXPECT_EQ(b.transitions[k].s_next, static_cast<int>((k + 1) % 4));
  }
}

TEST(SampleBatch, RestartFrequenciesMatchOccupancy) {
  const TabularMdp m = dense_random(5, 2, 0.9, 41);
  const Policy pi = dense_policy(5, 2, 42);
  const auto b = sample_batch(m, pi, 100000, 43, 1.0 - m.gamma());
  Matrix freq = Matrix::Zero(5, 2);
  for (const auto& t : b.transitions) freq(t.s, t.a) += 1.0;
  freq /= static_cast<double>(b.size());
  const double tv = 0.5 * (freq - occupancy(m, pi).as_matrix()).cwiseAbs().sum();
  EXPECT_LT(tv, 0.02);
}

TEST(SampleBatch, DeterministicGivenSeed) {
  const TabularMdp m = dense_random(4, 2, 0.9, 2);
  const Policy pi = dense_policy(4, 2, 3);
  const auto x = sample_batch(m, pi, 50, 99, 0.1);
  const auto y = sample_batch(m, pi, 50, 99, 0.1);
  const auto z = sample_batch(m, pi, 50, 100, 0.1);
  bool differs = false;
  for (std::size_t k = 0; k < 50; ++k) {
    EXPECT_EQ(x.transitions[k].s, y.transitions[k].s);
    EXPECT_EQ(x.transitions[k].a, y.transitions[k].a);
    EXPECT_EQ(x.transitions[k].s_next, y.transitions[k].s_next);
    differs = differs || x.transitions[k].s != z.transitions[k].s || x.transitions[k].a != z.transitions[k].a;
  }
  EXPECT_TRUE(differs);
}

TEST(CoverageBound, SingleState) {
  EXPECT_NEAR(coverage_bound(single_state(1, 0.0, 0.9), Policy::uniform(1, 1)), 10.0, 1e-10);
}

TEST(CoverageBound, StationaryStartGivesOneOverOneMinusGamma) {
  const TabularMdp base = dense_random(4, 2, 0.9, 12);
  const Policy pi = dense_policy(4, 2, 13);
  // Stationary pair distribution by power iteration on the pair chain.
  Vector d = Vector::Constant(8, 1.0 / 8.0);
  for (int it = 0; it < 5000; ++it) d = push_forward(base, pi, d);
  Matrix mu(4, 2);
  for (int i = 0; i < 8; ++i) mu(i / 2, i % 2) = d(i);
  mu /= mu.sum();
  const TabularMdp m(4, 2, base.flat_transition(), base.rewards(), base.gamma(), mu);
  EXPECT_NEAR(coverage_bound(m, pi), 1.0 / (1.0 - m.gamma()), 1e-9);
}

TEST(CoverageBound, DominatesRandomPolicyRatios) {
  const TabularMdp m = dense_random(5, 2, 0.9, 14);
  const Policy ref = dense_policy(5, 2, 15);
  const double bound = coverage_bound(m, ref);
  const Matrix d_ref = occupancy(m, ref).as_matrix();
  for (unsigned k = 0; k < 100; ++k) {
    const Matrix d = occupancy(m, dense_policy(5, 2, 1000 + k)).as_matrix();
    EXPECT_LE(d_ref.cwiseQuotient(d).maxCoeff(), bound + 1e-12);
  }
}

TEST(CoverageBound, RejectsZeroInitialMass) {
  Matrix mu(1, 2);
  mu << 1.0, 0.0;
  const TabularMdp m(1, 2, {1.0, 1.0}, Matrix::Zero(1, 2), 0.9, mu);
  EXPECT_THROW(coverage_bound(m, Policy::uniform(1, 2)), std::invalid_argument);
}

TEST(Rng, SeededStreamsAreReproducible) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
  EXPECT_EQ(derive_seed(5, 1), derive_seed(5, 1));
  EXPECT_NE(derive_seed(5, 1), derive_seed(5, 2));
  EXPECT_NE(derive_seed(5, 1), derive_seed(6, 1));
  Rng c(3);
  const std::vector<double> w{0.0, 2.0, 0.0, 1.0};
  for (int i = 0; i < 200; ++i) {
    const int k = c.categorical(w);
    EXPECT_TRUE(k == 1 || k == 3);
  }
}

}  // namespace
}  // namespace qavatar
