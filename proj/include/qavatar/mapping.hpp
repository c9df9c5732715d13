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

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "qavatar/domain_map.hpp"
#include "qavatar/estimators.hpp"
#include "qavatar/random.hpp"

namespace qavatar {

enum class MapSearch {
  exhaustive,         // every total map, lexicographic tie-breaking
  greedy_coordinate,  // coordinate sweeps from the initial map (plus seeded restarts)
  fixed_identity,     // identity; target and source spaces must agree
  fixed,              // keep the initial map
  candidates,         // exhaustive over an explicit candidate list
};

inline std::string_view to_string(MapSearch mode) {
  switch (mode) {
    case MapSearch::exhaustive: return "exhaustive";
    case MapSearch::greedy_coordinate: return "greedy-coordinate";
    case MapSearch::fixed_identity: return "fixed-identity";
    case MapSearch::fixed: return "fixed";
    case MapSearch::candidates: return "candidates";
  }
  return "?";
}

inline MapSearch map_search_from_string(std::string_view s) {
  if (s == "exhaustive") return MapSearch::exhaustive;
  if (s == "greedy-coordinate") return MapSearch::greedy_coordinate;
  if (s == "fixed-identity") return MapSearch::fixed_identity;
  if (s == "fixed") return MapSearch::fixed;
  if (s == "candidates") return MapSearch::candidates;
  throw std::invalid_argument("unknown map search mode '" + std::string(s) + "'");
}

struct MapClass {
  MapSearch mode = MapSearch::greedy_coordinate;
  // Largest number of maps exhaustive mode may enumerate.
  std::uint64_t candidate_bound = 1'000'000;
  int restarts = 0;
  int max_sweeps = 50;
  std::vector<DomainMap> candidates;
};

struct MapSearchResult {
  DomainMap map;
  double loss = 0.0;
};

namespace detail {

// |S_src|^|S_tar| * |A_src|^|A_tar|, saturating at UINT64_MAX.
inline std::uint64_t map_class_size(int tar_states, int tar_actions, int src_states, int src_actions) {
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t n = 1;
  auto mul = [&](std::uint64_t base, int times) {
    for (int i = 0; i < times; ++i) {
      if (n > kMax / base) {
        n = kMax;
        return;
      }
      n *= base;
    }
  };
  mul(static_cast<std::uint64_t>(src_states), tar_states);
  mul(static_cast<std::uint64_t>(src_actions), tar_actions);
  return n;
}

inline bool better(double loss, const DomainMap& map, double best_loss, const DomainMap& best) {
  return loss < best_loss || (loss == best_loss && map < best);
}

inline MapSearchResult greedy_descent(std::span<const Transition> batch, const QTable& q_src,
                                      const Policy& policy, double gamma, DomainMap map, int max_sweeps) {
  double loss = cd_loss(batch, q_src, map, policy, gamma);
  auto sweep_coordinates = [&](std::vector<int>& coords, int n_values) {
    bool changed = false;
    for (auto& coord : coords) {
      const int current = coord;
      int best_value = current;
      double best_loss = loss;
      for (int v = 0; v < n_values; ++v) {
        if (v == current) continue;
        coord = v;
        const double trial = cd_loss(batch, q_src, map, policy, gamma);
        if (trial < best_loss) {
          best_loss = trial;
          best_value = v;
        }
      }
      coord = best_value;
      if (best_value != current) {
        loss = best_loss;
        changed = true;
      }
    }
    return changed;
  };
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const bool states_changed = sweep_coordinates(map.state_map, q_src.n_states());
    const bool actions_changed = sweep_coordinates(map.action_map, q_src.n_actions());
    if (!states_changed && !actions_changed) break;
  }
  return {std::move(map), loss};
}

}  // namespace detail

inline std::uint64_t map_class_size(const DomainMap& shape, const QTable& q_src) {
  return detail::map_class_size(shape.n_target_states(), shape.n_target_actions(), q_src.n_states(),
                                q_src.n_actions());
}

// Minimizes the squared cross-domain Bellman loss over the map class.
inline MapSearchResult search_maps(std::span<const Transition> batch, const QTable& q_src, const Policy& policy,
                                   double gamma, const MapClass& cls, const DomainMap& init, std::uint64_t seed) {
  detail::require_nonempty(batch);
  const int S_src = q_src.n_states();
  const int A_src = q_src.n_actions();
  init.validate(policy.n_states(), policy.n_actions(), S_src, A_src);

  switch (cls.mode) {
    case MapSearch::fixed:
      return {init, cd_loss(batch, q_src, init, policy, gamma)};

    case MapSearch::fixed_identity: {
      if (S_src != init.n_target_states() || A_src != init.n_target_actions())
        throw std::invalid_argument("search_maps: fixed-identity requires matching dimensions");
      auto id = DomainMap::identity(S_src, A_src);
      return {id, cd_loss(batch, q_src, id, policy, gamma)};
    }

    case MapSearch::candidates: {
      if (cls.candidates.empty()) throw std::invalid_argument("search_maps: empty candidate list");
      MapSearchResult best{{}, std::numeric_limits<double>::infinity()};
      for (const auto& c : cls.candidates) {
        c.validate(policy.n_states(), policy.n_actions(), S_src, A_src);
        const double loss = cd_loss(batch, q_src, c, policy, gamma);
        if (best.map.state_map.empty() || detail::better(loss, c, best.loss, best.map)) best = {c, loss};
      }
      return best;
    }

    case MapSearch::exhaustive: {
      if (map_class_size(init, q_src) > cls.candidate_bound)
        throw std::invalid_argument("search_maps: map class exceeds the exhaustive candidate bound");
      // Odometer over the concatenated digits (state_map, action_map); the
      // enumeration order is lexicographic, so strict improvement keeps the
      // lexicographically smallest minimizer.
      DomainMap map;
      map.state_map.assign(init.state_map.size(), 0);
      map.action_map.assign(init.action_map.size(), 0);
      MapSearchResult best{map, cd_loss(batch, q_src, map, policy, gamma)};
      const int n_digits = static_cast<int>(map.state_map.size() + map.action_map.size());
      auto digit = [&](int i) -> int& {
        return i < map.n_target_states() ? map.state_map[static_cast<std::size_t>(i)]
                                         : map.action_map[static_cast<std::size_t>(i - map.n_target_states())];
      };
      auto radix = [&](int i) { return i < map.n_target_states() ? S_src : A_src; };
      while (true) {
        int i = n_digits - 1;
        while (i >= 0 && digit(i) + 1 == radix(i)) digit(i--) = 0;
        if (i < 0) break;
        ++digit(i);
        const double loss = cd_loss(batch, q_src, map, policy, gamma);
        if (loss < best.loss) best = {map, loss};
      }
      return best;
    }

    case MapSearch::greedy_coordinate: {
      MapSearchResult best = detail::greedy_descent(batch, q_src, policy, gamma, init, cls.max_sweeps);
      Rng rng(seed);
      for (int r = 0; r < cls.restarts; ++r) {
        DomainMap start = init;
        for (auto& x : start.state_map) x = rng.index(S_src);
        for (auto& x : start.action_map) x = rng.index(A_src);
        auto candidate = detail::greedy_descent(batch, q_src, policy, gamma, std::move(start), cls.max_sweeps);
        if (detail::better(candidate.loss, candidate.map, best.loss, best.map)) best = std::move(candidate);
      }
      return best;
    }
  }
  throw std::logic_error("search_maps: unhandled mode");
}

inline MapSearchResult search_maps(const TransitionBatch& batch, const QTable& q_src, const Policy& policy,
                                   double gamma, const MapClass& cls, const DomainMap& init, std::uint64_t seed) {
  return search_maps(std::span<const Transition>(batch.transitions), q_src, policy, gamma, cls, init, seed);
}

}  // namespace qavatar
