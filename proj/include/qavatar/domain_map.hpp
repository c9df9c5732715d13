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

#include <compare>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>
#include "qavatar/mdp.hpp"

namespace qavatar {

// Tabular inter-domain correspondence: target state s -> source state
// state_map[s], target action a -> source action action_map[a]. Total
// functions with no injectivity requirement.
struct DomainMap {
  std::vector<int> state_map;
  std::vector<int> action_map;

  static DomainMap identity(int n_states, int n_actions) {
    DomainMap m;
    m.state_map.resize(static_cast<std::size_t>(n_states));
    m.action_map.resize(static_cast<std::size_t>(n_actions));
    std::iota(m.state_map.begin(), m.state_map.end(), 0);
    std::iota(m.action_map.begin(), m.action_map.end(), 0);
    return m;
  }

  int n_target_states() const { return static_cast<int>(state_map.size()); }
  int n_target_actions() const { return static_cast<int>(action_map.size()); }

  void validate(int n_target_states, int n_target_actions, int n_source_states, int n_source_actions) const {
    if (static_cast<int>(state_map.size()) != n_target_states ||
        static_cast<int>(action_map.size()) != n_target_actions)
      throw std::invalid_argument("domain map: domain does not match the target spaces");
    for (int x : state_map)
      if (x < 0 || x >= n_source_states) throw std::invalid_argument("domain map: state image out of range");
    for (int x : action_map)
      if (x < 0 || x >= n_source_actions) throw std::invalid_argument("domain map: action image out of range");
  }

  // Lexicographic on (state_map, action_map); used for deterministic ties.
  friend auto operator<=>(const DomainMap&, const DomainMap&) = default;
  friend bool operator==(const DomainMap&, const DomainMap&) = default;
};

// Source values seen through the map: out(s, a) = q_src(phi(s), psi(a)).
inline QTable pull_back(const QTable& q_src, const DomainMap& map) {
  map.validate(map.n_target_states(), map.n_target_actions(), q_src.n_states(), q_src.n_actions());
  QTable out = QTable::zeros(map.n_target_states(), map.n_target_actions());
  for (int s = 0; s < map.n_target_states(); ++s)
    for (int a = 0; a < map.n_target_actions(); ++a)
      out(s, a) = q_src(map.state_map[static_cast<std::size_t>(s)], map.action_map[static_cast<std::size_t>(a)]);
  return out;
}

inline nlohmann::json to_json(const DomainMap& map) {
  return {{"state_map", map.state_map}, {"action_map", map.action_map}};
}

inline DomainMap domain_map_from_json(const nlohmann::json& j) {
  return {j.at("state_map").get<std::vector<int>>(), j.at("action_map").get<std::vector<int>>()};
}

}  // namespace qavatar
