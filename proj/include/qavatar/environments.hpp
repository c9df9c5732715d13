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

// Gridworld constructors, the two-encoding toy grid pair, random MDPs and the
// named transfer scenarios.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qavatar/domain_map.hpp"
#include "qavatar/estimators.hpp"
#include "qavatar/mapping.hpp"
#include "qavatar/mdp.hpp"
#include "qavatar/random.hpp"

namespace qavatar {

struct Cell {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

enum class Move { up, right, down, left };

inline std::string_view to_string(Move m) {
  switch (m) {
    case Move::up: return "up";
    case Move::right: return "right";
    case Move::down: return "down";
    case Move::left: return "left";
  }
  return "?";
}

inline Move move_from_string(std::string_view s) {
  if (s == "up") return Move::up;
  if (s == "right") return Move::right;
  if (s == "down") return Move::down;
  if (s == "left") return Move::left;
  throw std::invalid_argument("unknown move '" + std::string(s) + "'");
}

enum class EncodingKind { decimal_index, binary_expanded, permuted };

struct Encoding {
  EncodingKind kind = EncodingKind::decimal_index;
  std::uint64_t seed = 0;  // permuted only
};

inline std::string_view to_string(EncodingKind k) {
  switch (k) {
    case EncodingKind::decimal_index: return "decimal-index";
    case EncodingKind::binary_expanded: return "binary-expanded";
    case EncodingKind::permuted: return "permuted";
  }
  return "?";
}

inline EncodingKind encoding_from_string(std::string_view s) {
  if (s == "decimal-index") return EncodingKind::decimal_index;
  if (s == "binary-expanded") return EncodingKind::binary_expanded;
  if (s == "permuted") return EncodingKind::permuted;
  throw std::invalid_argument("unknown encoding '" + std::string(s) + "'");
}

// Coordinates are (x, y); "up" increases y and "right" increases x. Rewards
// are paid on entry. The terminal cell is absorbing; a treasure pays once,
// tracked by a visited flag that doubles the state space.
struct GridSpec {
  int width = 3;
  int height = 3;
  std::vector<Cell> obstacles;
  Cell start{0, 0};
  Cell terminal{2, 2};
  std::optional<Cell> treasure;
  double treasure_reward = 0.5;
  double terminal_reward = 1.0;
  // Pay terminal_reward on every step spent in the terminal cell as well.
  bool terminal_reward_persists = false;
  // Paid for any move that shortens the shortest-path distance to the terminal.
  double progress_reward = 0.0;
  std::vector<Move> actions{Move::up, Move::right, Move::down, Move::left};
  Encoding encoding;
  double slip_prob = 0.0;  // chance of a uniformly random move instead
  double gamma = 0.9;
  double start_concentration = 0.9;  // initial mass on the start state
};

struct GridMdp {
  TabularMdp mdp;
  std::vector<std::string> labels;  // per state index, in the grid's encoding
  std::vector<int> canonical;       // state index -> canonical (flag, y, x) index
  std::vector<int> index_of;        // canonical index -> state index
  std::vector<Cell> cells;          // free cells in canonical order
  bool has_flag = false;
  double reward_scale = 1.0;        // raw rewards were divided by this
  std::vector<std::string> warnings;

  int n_cells() const { return static_cast<int>(cells.size()); }

  // State index of (cell, flag); throws for obstacles or out-of-range cells.
  int state(Cell c, bool flag = false) const {
    auto it = std::find(cells.begin(), cells.end(), c);
    if (it == cells.end()) throw std::invalid_argument("grid: cell is not a free cell");
    if (flag && !has_flag) throw std::invalid_argument("grid: no treasure flag in this grid");
    const int rank = static_cast<int>(it - cells.begin());
    return index_of[static_cast<std::size_t>((flag ? n_cells() : 0) + rank)];
  }

  Cell cell_of(int state) const { return cells[static_cast<std::size_t>(canonical[static_cast<std::size_t>(state)] % n_cells())]; }
  bool flag_of(int state) const { return canonical[static_cast<std::size_t>(state)] >= n_cells(); }
};

namespace detail {

inline bool in_bounds(const GridSpec& g, Cell c) { return c.x >= 0 && c.x < g.width && c.y >= 0 && c.y < g.height; }

inline bool blocked(const GridSpec& g, Cell c) {
  return !in_bounds(g, c) || std::find(g.obstacles.begin(), g.obstacles.end(), c) != g.obstacles.end();
}

inline Cell apply_move(const GridSpec& g, Cell c, Move m) {
  Cell n = c;
  switch (m) {
    case Move::up: ++n.y; break;
    case Move::right: ++n.x; break;
    case Move::down: --n.y; break;
    case Move::left: --n.x; break;
  }
  return blocked(g, n) ? c : n;
}

inline void validate_spec(const GridSpec& g) {
  if (g.width < 1 || g.height < 1) throw std::invalid_argument("grid: width and height must be positive");
  auto check_cell = [&](Cell c, const char* what) {
    if (blocked(g, c)) throw std::invalid_argument(std::string("grid: ") + what + " is out of bounds or an obstacle");
  };
  check_cell(g.start, "start");
  check_cell(g.terminal, "terminal");
  if (g.treasure) {
    check_cell(*g.treasure, "treasure");
    if (*g.treasure == g.terminal) throw std::invalid_argument("grid: treasure and terminal must differ");
  }
  if (g.actions.empty()) throw std::invalid_argument("grid: empty action set");
  for (std::size_t i = 0; i < g.actions.size(); ++i)
    for (std::size_t j = i + 1; j < g.actions.size(); ++j)
      if (g.actions[i] == g.actions[j]) throw std::invalid_argument("grid: duplicate action");
  if (!(g.slip_prob >= 0.0 && g.slip_prob < 1.0)) throw std::invalid_argument("grid: slip_prob must lie in [0,1)");
  if (!(g.treasure_reward >= 0.0) || !(g.terminal_reward >= 0.0) || !(g.progress_reward >= 0.0))
    throw std::invalid_argument("grid: rewards must be nonnegative");
  if (!(g.start_concentration >= 0.0 && g.start_concentration < 1.0))
    throw std::invalid_argument("grid: start_concentration must lie in [0,1)");
}

inline std::string thermometer_label(const GridSpec& g, Cell c, std::optional<bool> flag) {
  std::string out = "(";
  bool first = true;
  auto bit = [&](int b) {
    if (!first) out += ",";
    out += std::to_string(b);
    first = false;
  };
  for (int i = 0; i + 1 < g.width; ++i) bit(c.x > i ? 1 : 0);
  for (int i = 0; i + 1 < g.height; ++i) bit(c.y > i ? 1 : 0);
  out += ")";
  if (flag) out += *flag ? "+" : "";
  return out;
}

inline std::string decimal_label(Cell c, std::optional<bool> flag) {
  std::string out = "(" + std::to_string(c.x) + "," + std::to_string(c.y) + ")";
  if (flag && *flag) out += "+";
  return out;
}

}  // namespace detail

inline GridMdp build_grid(const GridSpec& spec) {
  detail::validate_spec(spec);
  std::vector<Cell> cells;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      if (!detail::blocked(spec, {x, y})) cells.push_back({x, y});
  const int n_cells = static_cast<int>(cells.size());
  const bool has_flag = spec.treasure.has_value();
  const int S = has_flag ? 2 * n_cells : n_cells;
  const int A = static_cast<int>(spec.actions.size());
  auto rank = [&](Cell c) { return static_cast<int>(std::find(cells.begin(), cells.end(), c) - cells.begin()); };

  // Encoding: canonical index -> state index.
  std::vector<int> index_of(static_cast<std::size_t>(S));
  std::iota(index_of.begin(), index_of.end(), 0);
  auto flag_opt = [&](int canon) -> std::optional<bool> {
    if (!has_flag) return std::nullopt;
    return canon >= n_cells;
  };
  std::vector<std::string> canon_labels(static_cast<std::size_t>(S));
  for (int i = 0; i < S; ++i) {
    const Cell c = cells[static_cast<std::size_t>(i % n_cells)];
    canon_labels[static_cast<std::size_t>(i)] = spec.encoding.kind == EncodingKind::binary_expanded
                                                    ? detail::thermometer_label(spec, c, flag_opt(i))
                                                    : detail::decimal_label(c, flag_opt(i));
  }
  if (spec.encoding.kind == EncodingKind::binary_expanded) {
    // States are numbered in lexicographic order of their bit codes.
    std::vector<int> order(static_cast<std::size_t>(S));
    std::iota(order.begin(), order.end(), 0);
    auto code = [&](int i) {
      const Cell c = cells[static_cast<std::size_t>(i % n_cells)];
      std::vector<int> bits;
      for (int k = 0; k + 1 < spec.width; ++k) bits.push_back(c.x > k);
      for (int k = 0; k + 1 < spec.height; ++k) bits.push_back(c.y > k);
      bits.push_back(i >= n_cells);
      return bits;
    };
    std::sort(order.begin(), order.end(), [&](int a, int b) { return code(a) < code(b); });
    for (int pos = 0; pos < S; ++pos) index_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos;
  } else if (spec.encoding.kind == EncodingKind::permuted) {
    Rng rng(spec.encoding.seed);
    for (int i = S - 1; i > 0; --i) std::swap(index_of[static_cast<std::size_t>(i)], index_of[static_cast<std::size_t>(rng.index(i + 1))]);
  }
  std::vector<int> canonical(static_cast<std::size_t>(S));
  for (int i = 0; i < S; ++i) canonical[static_cast<std::size_t>(index_of[static_cast<std::size_t>(i)])] = i;

  auto state_of = [&](Cell c, bool flag) {
    return index_of[static_cast<std::size_t>((flag ? n_cells : 0) + rank(c))];
  };

  // Shortest-path distance of every free cell to the terminal.
  std::vector<int> dist(cells.size(), std::numeric_limits<int>::max());
  {
    std::queue<Cell> frontier;
    dist[static_cast<std::size_t>(rank(spec.terminal))] = 0;
    frontier.push(spec.terminal);
    while (!frontier.empty()) {
      const Cell c = frontier.front();
      frontier.pop();
      for (Move m : {Move::up, Move::right, Move::down, Move::left}) {
        const Cell n = detail::apply_move(spec, c, m);
        auto& d = dist[static_cast<std::size_t>(rank(n))];
        if (d == std::numeric_limits<int>::max()) {
          d = dist[static_cast<std::size_t>(rank(c))] + 1;
          frontier.push(n);
        }
      }
    }
  }

  std::vector<double> transition(static_cast<std::size_t>(S) * A * S, 0.0);
  Matrix reward = Matrix::Zero(S, A);
  double raw_max = 0.0;  // largest reward of any single transition
  for (int canon = 0; canon < S; ++canon) {
    const Cell c = cells[static_cast<std::size_t>(canon % n_cells)];
    const bool flag = canon >= n_cells;
    const int s = state_of(c, flag);
    for (int a = 0; a < A; ++a) {
      auto add = [&](int s2, double p, double r) {
        transition[(static_cast<std::size_t>(s) * A + a) * S + s2] += p;
        reward(s, a) += p * r;
      };
      if (c == spec.terminal) {
        const double r = spec.terminal_reward_persists ? spec.terminal_reward : 0.0;
        raw_max = std::max(raw_max, r);
        add(s, 1.0, r);
        continue;
      }
      for (int m = 0; m < A; ++m) {
        const double p = (m == a ? 1.0 - spec.slip_prob : 0.0) + spec.slip_prob / A;
        if (p == 0.0) continue;
        const Cell n = detail::apply_move(spec, c, spec.actions[static_cast<std::size_t>(m)]);
        const bool found = has_flag && n == *spec.treasure && !flag;
        double r = n == spec.terminal ? spec.terminal_reward : 0.0;
        if (found) r += spec.treasure_reward;
        if (dist[static_cast<std::size_t>(rank(n))] < dist[static_cast<std::size_t>(rank(c))]) r += spec.progress_reward;
        raw_max = std::max(raw_max, r);
        add(state_of(n, flag || found), p, r);
      }
    }
  }
  const double scale = raw_max > 0.0 ? raw_max : 1.0;
  reward /= scale;
  // Guard against rounding pushing an entry a hair above 1.
  reward = reward.cwiseMin(1.0);

  const bool start_flag = has_flag && spec.start == *spec.treasure;
  const int start_state = state_of(spec.start, start_flag);
  Matrix mu = Matrix::Constant(S, A, (1.0 - spec.start_concentration) / (static_cast<double>(S) * A));
  for (int a = 0; a < A; ++a) mu(start_state, a) += spec.start_concentration / A;
  if (spec.start_concentration < 1.0 && mu.minCoeff() < 1e-4)
    throw std::invalid_argument("grid: too many states to keep every initial probability above 1e-4");

  TabularMdp mdp(S, A, std::move(transition), std::move(reward), spec.gamma, std::move(mu));

  GridMdp out{std::move(mdp), {}, std::move(canonical), std::move(index_of), std::move(cells), has_flag, scale, {}};
  out.labels.resize(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s)
    out.labels[static_cast<std::size_t>(s)] = canon_labels[static_cast<std::size_t>(out.canonical[static_cast<std::size_t>(s)])];

  // Reachability of the terminal from the start state.
  std::vector<char> seen(static_cast<std::size_t>(S), 0);
  std::queue<int> frontier;
  frontier.push(start_state);
  seen[static_cast<std::size_t>(start_state)] = 1;
  bool reached = false;
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop();
    if (out.cell_of(s) == spec.terminal) reached = true;
    for (int a = 0; a < A; ++a)
      for (int s2 = 0; s2 < S; ++s2)
        if (out.mdp.p(s, a, s2) > 0.0 && !seen[static_cast<std::size_t>(s2)]) {
          seen[static_cast<std::size_t>(s2)] = 1;
          frontier.push(s2);
        }
  }
  if (!reached) out.warnings.push_back("terminal unreachable from start");
  return out;
}

// ---------------------------------------------------------------------------
// Toy grid pair.

struct ToyPair {
  GridMdp src;
  GridMdp tar;
  DomainMap traj_a_map;  // isomorphism; aligns the target optimum with the source optimum
  DomainMap traj_b_map;  // aligns the target optimum with the detour through the centre
  std::vector<Transition> target_trajectory;        // optimal target rollout
  std::vector<PairedTransition> traj_a_pairing;
  std::vector<PairedTransition> traj_b_pairing;
};

// 3x3 grid with moves {up, right}, obstacles at (1,0) and (2,0), start
// (0,0), a first-visit treasure at (0,2) worth 1 and an absorbing end at
// (2,2) worth 0.5. The target is the same grid with thermometer-coded states.
inline GridSpec toy_grid_spec(EncodingKind encoding) {
  GridSpec g;
  g.width = 3;
  g.height = 3;
  g.obstacles = {{1, 0}, {2, 0}};
  g.start = {0, 0};
  g.terminal = {2, 2};
  g.treasure = Cell{0, 2};
  g.treasure_reward = 1.0;
  g.terminal_reward = 0.5;
  g.actions = {Move::up, Move::right};
  g.encoding = {encoding, 0};
  g.gamma = 0.99;
  return g;
}

inline ToyPair build_toy_pair() {
  GridMdp src = build_grid(toy_grid_spec(EncodingKind::decimal_index));
  GridMdp tar = build_grid(toy_grid_spec(EncodingKind::binary_expanded));
  const int S = tar.mdp.n_states();
  constexpr int up = 0, right = 1;

  DomainMap a_map{std::vector<int>(static_cast<std::size_t>(S)), {up, right}};
  for (int s = 0; s < S; ++s) a_map.state_map[static_cast<std::size_t>(s)] = src.state(tar.cell_of(s), tar.flag_of(s));

  // Optimal target rollout: (0,0) -> (0,1) -> (0,2)+ -> (1,2)+ -> (2,2)+.
  const std::array<std::pair<Cell, bool>, 5> path{{{{0, 0}, false}, {{0, 1}, false}, {{0, 2}, true}, {{1, 2}, true}, {{2, 2}, true}}};
  const std::array<int, 4> path_actions{up, up, right, right};
  std::vector<Transition> traj;
  for (std::size_t k = 0; k < path_actions.size(); ++k) {
    const int s = tar.state(path[k].first, path[k].second);
    const int s2 = tar.state(path[k + 1].first, path[k + 1].second);
    traj.push_back({s, path_actions[k], tar.mdp.reward(s, path_actions[k]), s2});
  }

  // Detour (0,0) -> (0,1) -> (1,1) -> (1,2) -> (2,2) in the treasure-collected layer.
  const std::array<Cell, 5> detour{{{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 2}}};
  const std::array<int, 4> detour_actions{up, right, up, right};
  DomainMap b_map = a_map;
  for (std::size_t k = 0; k < path.size(); ++k)
    b_map.state_map[static_cast<std::size_t>(tar.state(path[k].first, path[k].second))] = src.state(detour[k], true);

  std::vector<PairedTransition> a_pairing, b_pairing;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const int u = src.state(path[k].first, path[k].second);
    const int u2 = src.state(path[k + 1].first, path[k + 1].second);
    a_pairing.push_back({traj[k], {u, path_actions[k], src.mdp.reward(u, path_actions[k]), u2}});
    const int w = src.state(detour[k], true);
    const int w2 = src.state(detour[k + 1], true);
    b_pairing.push_back({traj[k], {w, detour_actions[k], src.mdp.reward(w, detour_actions[k]), w2}});
  }
  return {std::move(src), std::move(tar), std::move(a_map), std::move(b_map), std::move(traj), std::move(a_pairing),
          std::move(b_pairing)};
}

// ---------------------------------------------------------------------------
// Random MDPs.

struct RandomMdpOptions {
  int branching = 0;          // successors per (s, a); 0 means all states
  double mu_floor = 0.05;     // relative floor keeping every initial probability positive
};

inline TabularMdp random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed,
                             const RandomMdpOptions& options = {}) {
  if (n_states < 1 || n_actions < 1) throw std::invalid_argument("random_mdp: empty spaces");
  Rng rng(seed);
  const int k = options.branching > 0 ? std::min(options.branching, n_states) : n_states;
  std::vector<double> transition(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  std::vector<int> order(static_cast<std::size_t>(n_states));
  for (int i = 0; i < n_states * n_actions; ++i) {
    std::iota(order.begin(), order.end(), 0);
    for (int j = n_states - 1; j > 0; --j) std::swap(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(rng.index(j + 1))]);
    double total = 0.0;
    std::vector<double> w(static_cast<std::size_t>(k));
    for (auto& x : w) total += (x = rng.uniform() + 1e-3);
    for (int j = 0; j < k; ++j)
      transition[static_cast<std::size_t>(i) * n_states + order[static_cast<std::size_t>(j)]] = w[static_cast<std::size_t>(j)] / total;
    // Exact renormalization so the row sums to one within the validator's tolerance.
    double row = 0.0;
    for (int j = 0; j < n_states; ++j) row += transition[static_cast<std::size_t>(i) * n_states + j];
    transition[static_cast<std::size_t>(i) * n_states + order[0]] += 1.0 - row;
  }
  Matrix reward(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) reward(s, a) = rng.uniform();
  Matrix mu(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) mu(s, a) = options.mu_floor + rng.uniform();
  mu /= mu.sum();
  return TabularMdp(n_states, n_actions, std::move(transition), std::move(reward), gamma, std::move(mu));
}

// Uniformly random strictly positive policy.
inline Policy random_policy(int n_states, int n_actions, std::uint64_t seed, double logit_scale = 2.0) {
  Rng rng(seed);
  Matrix logits(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) logits(s, a) = logit_scale * (2.0 * rng.uniform() - 1.0);
  return Policy(std::move(logits));
}

// ---------------------------------------------------------------------------
// Transfer scenarios.

enum class ScenarioKind {
  perfect_transfer,
  permuted_encoding,
  reversed_goal,
  unrelated,
  low_quality_source,
  two_source_complementary,
};

inline constexpr std::array<ScenarioKind, 6> kAllScenarios{
    ScenarioKind::perfect_transfer, ScenarioKind::permuted_encoding,  ScenarioKind::reversed_goal,
    ScenarioKind::unrelated,        ScenarioKind::low_quality_source, ScenarioKind::two_source_complementary};

inline std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::perfect_transfer: return "perfect-transfer";
    case ScenarioKind::permuted_encoding: return "permuted-encoding";
    case ScenarioKind::reversed_goal: return "reversed-goal";
    case ScenarioKind::unrelated: return "unrelated";
    case ScenarioKind::low_quality_source: return "low-quality-source";
    case ScenarioKind::two_source_complementary: return "two-source-complementary";
  }
  return "?";
}

inline ScenarioKind scenario_from_string(std::string_view s) {
  for (auto k : kAllScenarios)
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown scenario '" + std::string(s) + "'");
}

struct Scenario {
  ScenarioKind kind;
  TabularMdp tar;
  std::vector<TabularMdp> sources;
  std::vector<QTable> q_src;
  MapClass map_class;                    // suggested search class
  std::optional<DomainMap> initial_map;  // suggested starting map
  std::string notes;
};

struct ScenarioOptions {
  // Truncated value-iteration sweeps for low-quality-source; 0 picks the
  // sweep count whose greedy policy is closest to 30% of the optimal return.
  int low_quality_sweeps = 0;
  double target_fraction = 0.3;
};

// Base layout shared by the grid scenarios: 4x4, four moves, two obstacles.
inline GridSpec scenario_grid() {
  GridSpec g;
  g.width = 4;
  g.height = 4;
  g.obstacles = {{1, 1}, {2, 2}};
  g.start = {0, 0};
  g.terminal = {3, 3};
  g.terminal_reward = 1.0;
  g.gamma = 0.9;
  return g;
}

// Deterministic corridor with moves {left, right}; pay_left[c] / pay_right[c]
// is the reward for stepping left / right from cell c (walls keep the agent
// in place). Initial mass concentrates 0.9 on the start cell.
inline TabularMdp corridor_mdp(const std::vector<double>& pay_left, const std::vector<double>& pay_right,
                               double gamma, int start, double concentration = 0.9) {
  const int n = static_cast<int>(pay_left.size());
  if (n < 1 || pay_right.size() != pay_left.size()) throw std::invalid_argument("corridor: reward vectors must match");
  if (start < 0 || start >= n) throw std::invalid_argument("corridor: start out of range");
  std::vector<double> transition(static_cast<std::size_t>(n) * 2 * n, 0.0);
  Matrix reward(n, 2);
  for (int c = 0; c < n; ++c) {
    transition[(static_cast<std::size_t>(c) * 2 + 0) * n + std::max(c - 1, 0)] = 1.0;
    transition[(static_cast<std::size_t>(c) * 2 + 1) * n + std::min(c + 1, n - 1)] = 1.0;
    reward(c, 0) = pay_left[static_cast<std::size_t>(c)];
    reward(c, 1) = pay_right[static_cast<std::size_t>(c)];
  }
  Matrix mu = Matrix::Constant(n, 2, (1.0 - concentration) / (2.0 * n));
  mu.row(start).array() += concentration / 2.0;
  return TabularMdp(n, 2, std::move(transition), std::move(reward), gamma, std::move(mu));
}

namespace detail {

inline Scenario single_source(ScenarioKind kind, TabularMdp tar, TabularMdp src, QTable q, MapClass cls,
                              std::optional<DomainMap> init, std::string notes) {
  Scenario out{kind, std::move(tar), {}, {}, std::move(cls), std::move(init), std::move(notes)};
  out.sources.push_back(std::move(src));
  out.q_src.push_back(std::move(q));
  return out;
}

// Smallest sweep count whose greedy return is closest to the target fraction.
inline int pick_low_quality_sweeps(const TabularMdp& mdp, double fraction) {
  const double v_star = start_value(mdp, value_iteration(mdp, 1e-10).policy);
  int best_k = 1;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 200; ++k) {
    const double v = start_value(mdp, greedy_policy(truncated_value_iteration(mdp, k)));
    const double gap = std::abs(v / v_star - fraction);
    if (gap < best_gap - 1e-12) {
      best_gap = gap;
      best_k = k;
    }
  }
  return best_k;
}

}  // namespace detail

inline Scenario build_scenario(ScenarioKind kind, std::uint64_t seed, const ScenarioOptions& options = {}) {
  const GridSpec base = scenario_grid();
  MapClass greedy{MapSearch::greedy_coordinate, 1'000'000, 2, 50, {}};
  MapClass identity{MapSearch::fixed_identity, 1'000'000, 0, 50, {}};
  switch (kind) {
    case ScenarioKind::perfect_transfer: {
      TabularMdp tar = build_grid(base).mdp;
      QTable q = value_iteration(tar, 1e-10).q;
      return detail::single_source(kind, tar, tar, std::move(q), identity, std::nullopt,
                                   "source equals target; source critic is the optimal table");
    }
    case ScenarioKind::permuted_encoding: {
      GridMdp src = build_grid(base);
      GridSpec t = base;
      t.encoding = {EncodingKind::permuted, seed};
      GridMdp tar = build_grid(t);
      QTable q = value_iteration(src.mdp, 1e-10).q;
      return detail::single_source(kind, tar.mdp, src.mdp, std::move(q), greedy, std::nullopt,
                                   "target states are a seeded relabeling of the source states");
    }
    case ScenarioKind::reversed_goal: {
      GridSpec t = base;
      t.terminal_reward_persists = true;
      GridSpec s = t;
      std::swap(s.start, s.terminal);
      TabularMdp tar = build_grid(t).mdp;
      TabularMdp src = build_grid(s).mdp;
      QTable q = value_iteration(src, 1e-10).q;
      return detail::single_source(kind, tar, src, std::move(q), identity, std::nullopt,
                                   "source rewards the target's start cell; identity map fixed");
    }
    case ScenarioKind::unrelated: {
      Rng rng(seed);
      auto random_layout = [&](GridSpec g) {
        g.obstacles.clear();
        for (int i = 0; i < 2; ++i) {
          Cell c{rng.index(g.width), rng.index(g.height)};
          if (c != g.start && c != g.terminal) g.obstacles.push_back(c);
        }
        g.terminal = {rng.index(g.width), g.height - 1};
        g.obstacles.erase(std::remove(g.obstacles.begin(), g.obstacles.end(), g.terminal), g.obstacles.end());
        if (g.terminal == g.start) g.terminal = {g.width - 1, g.height - 1};
        return g;
      };
      TabularMdp tar = build_grid(base).mdp;
      GridSpec s = random_layout(base);
      s.slip_prob = 0.2;
      s.encoding = {EncodingKind::permuted, derive_seed(seed, 1)};
      TabularMdp src = build_grid(s).mdp;
      QTable q = value_iteration(src, 1e-10).q;
      return detail::single_source(kind, tar, src, std::move(q), greedy, std::nullopt,
                                   "source is an independent random grid with slip");
    }
    case ScenarioKind::low_quality_source: {
      TabularMdp tar = build_grid(base).mdp;
      const int k = options.low_quality_sweeps > 0 ? options.low_quality_sweeps
                                                   : detail::pick_low_quality_sweeps(tar, options.target_fraction);
      QTable q = truncated_value_iteration(tar, k);
      q.values = q.values.cwiseMin(tar.value_bound());
      return detail::single_source(kind, tar, tar, std::move(q), identity, std::nullopt,
                                   "source critic after " + std::to_string(k) + " value-iteration sweeps");
    }
    case ScenarioKind::two_source_complementary: {
      // Six-cell target corridor: stepping left pays 0.5 in the left half and
      // stepping right pays 1 in the right half. Each three-cell source
      // carries one of the two reward patterns.
      constexpr double kLeftPay = 0.5, kRightPay = 1.0;
      std::vector<double> tl(6, 0.0), tr(6, 0.0);
      for (int c = 0; c < 3; ++c) tl[static_cast<std::size_t>(c)] = kLeftPay;
      for (int c = 3; c < 6; ++c) tr[static_cast<std::size_t>(c)] = kRightPay;
      Scenario out{kind, corridor_mdp(tl, tr, 0.9, 2), {}, {}, MapClass{MapSearch::exhaustive, 1'000'000, 0, 50, {}},
                   std::nullopt, "two corridor sources, one per half of the target corridor"};
      out.sources.push_back(corridor_mdp({kLeftPay, kLeftPay, kLeftPay}, {0.0, 0.0, 0.0}, 0.9, 1));
      out.sources.push_back(corridor_mdp({0.0, 0.0, 0.0}, {kRightPay, kRightPay, kRightPay}, 0.9, 1));
      for (const auto& src : out.sources) out.q_src.push_back(value_iteration(src, 1e-10).q);
      return out;
    }
  }
  throw std::logic_error("build_scenario: unhandled kind");
}

}  // namespace qavatar
