#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "onemap/belief_map.hpp"
#include "onemap/grid.hpp"
#include "onemap/observation.hpp"
#include "onemap/planning.hpp"

namespace onemap {

// ---------------------------------------------------------------------------
// Occupancy knowledge gathered from depth
// ---------------------------------------------------------------------------

enum class Occupancy : std::uint8_t { kUnknown = 0, kFree = 1, kOccupied = 2 };

using OccupancyGrid = Grid<Occupancy>;

/// Carves free space along every image column up to its first return and
/// marks the return cell occupied when the return lies above the floor.
/// Censored columns carve free space up to max_range. Occupied is sticky.
inline void update_occupancy(OccupancyGrid& occ, const PosedObservation& obs, const GridGeometry& geom,
                             double floor_tolerance = 0.05) {
  const double c = std::cos(obs.pose.heading);
  const double s = std::sin(obs.pose.heading);
  const auto& k = obs.intrinsics;
  for (int j = 0; j < obs.width(); ++j) {
    // topmost valid pixel of the column sees farthest along the floor plane
    int row = -1;
    for (int i = 0; i < obs.height(); ++i) {
      if (obs.valid(j, i) && usable_depth(obs.depth(j, i))) {
        row = i;
        break;
      }
    }
    const double slope = (j - k.cx) / k.fx;
    const double dir_fwd = 1.0 / std::sqrt(1.0 + slope * slope);
    const double dx = dir_fwd * c + slope * dir_fwd * s;  // left = -right
    const double dy = dir_fwd * s - slope * dir_fwd * c;
    double t_end = obs.max_range / dir_fwd;
    bool blocked = false;
    if (row >= 0) {
      const double depth = obs.depth(j, row);
      t_end = depth / dir_fwd;
      const double height = obs.camera_height - (row - k.cy) / k.fy * depth;
      blocked = height > floor_tolerance;
    }
    const auto [ex, ey] = pixel_to_world(obs, std::max(row, 0), j, row >= 0 ? obs.depth(j, row) : obs.max_range);
    const Cell end = geom.cell_of(ex, ey);
    traverse_ray(geom, obs.pose.x, obs.pose.y, dx, dy, t_end, [&](const Cell& cell, double) {
      if (blocked && cell == end) return false;
      if (occ[cell] != Occupancy::kOccupied) occ[cell] = Occupancy::kFree;
      return true;
    });
    if (blocked && occ.in_bounds(end)) occ[end] = Occupancy::kOccupied;
  }
}

// ---------------------------------------------------------------------------
// Sub-maps
// ---------------------------------------------------------------------------

struct SubMaps {
  Mask observed;    // O
  Mask explored;    // E: observed and fusion variance below threshold
  Mask searched;    // C: observed and search variance below threshold
  Mask navigable;   // N: observed or carved free, clear of known obstacles by the agent radius
};

inline SubMaps derive_submaps(const BeliefMap& map, double tau_e, double tau_c, const OccupancyGrid& occupancy,
                              double agent_radius) {
  if (occupancy.nx() != map.nx() || occupancy.ny() != map.ny())
    throw InvalidArgument("occupancy raster does not match map");
  SubMaps sub;
  sub.observed = map.observed();
  sub.explored = Mask(map.nx(), map.ny(), 0);
  sub.searched = Mask(map.nx(), map.ny(), 0);
  Mask free(map.nx(), map.ny(), 0);
  Mask obstacle(map.nx(), map.ny(), 0);
  for (std::size_t i = 0; i < sub.observed.size(); ++i) {
    if (sub.observed[i]) {
      sub.explored[i] = map.sigma2()[i] <= tau_e;
      sub.searched[i] = map.sigma2_search()[i] <= tau_c;
    }
    free[i] = sub.observed[i] || occupancy[i] == Occupancy::kFree;
    obstacle[i] = occupancy[i] == Occupancy::kOccupied;
  }
  sub.navigable = inflate_free_space(free, obstacle, agent_radius, map.cell_size());
  return sub;
}

// ---------------------------------------------------------------------------
// Goals
// ---------------------------------------------------------------------------

enum class GoalKind { kFrontier, kCluster };

inline const char* to_string(GoalKind k) { return k == GoalKind::kFrontier ? "frontier" : "cluster"; }

struct NavGoal {
  GoalKind kind = GoalKind::kFrontier;
  Cell target_cell;
  double score = -1.0;
  std::vector<Cell> support;
  Cell look_at;  // highest-similarity cell backing the score
};

struct Frontier {
  std::vector<Cell> cells;  // row-major order
};

/// Cells of E with at least one 8-neighbour in O minus E.
inline Mask frontier_cells(const SubMaps& sub) {
  const Mask& e = sub.explored;
  Mask out(e.nx(), e.ny(), 0);
  for (int y = 0; y < e.ny(); ++y)
    for (int x = 0; x < e.nx(); ++x) {
      if (!e(x, y)) continue;
      for (const Cell& d : kNeighbors8) {
        const int nx = x + d.x;
        const int ny = y + d.y;
        if (e.in_bounds(nx, ny) && sub.observed(nx, ny) && !e(nx, ny)) {
          out(x, y) = 1;
          break;
        }
      }
    }
  return out;
}

/// Maximal 8-connected chains of frontier cells. A chain is kept when it has
/// at least `min_length` cells and touches N (a chain cell is navigable or
/// 8-adjacent to a navigable cell).
inline std::vector<Frontier> extract_frontiers(const SubMaps& sub, int min_length = 3) {
  const Mask cells = frontier_cells(sub);
  const Components comps = label_components(cells);
  std::vector<Frontier> chains(comps.count);
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (comps.label[i] >= 0) chains[comps.label[i]].cells.push_back(cells.cell(i));
  const Mask& nav = sub.navigable;
  auto touches_nav = [&](const Frontier& f) {
    for (const Cell& c : f.cells) {
      if (nav[c]) return true;
      for (const Cell& d : kNeighbors8)
        if (nav.in_bounds(c.x + d.x, c.y + d.y) && nav(c.x + d.x, c.y + d.y)) return true;
    }
    return false;
  };
  std::vector<Frontier> out;
  for (auto& f : chains)
    if (static_cast<int>(f.cells.size()) >= min_length && touches_nav(f)) out.push_back(std::move(f));
  return out;
}

/// O minus E region grown from a frontier: its 8-connected components that
/// touch the frontier.
inline std::vector<Cell> frontier_region(const Frontier& frontier, const SubMaps& sub) {
  const Mask& o = sub.observed;
  const Mask& e = sub.explored;
  Mask in_region(o.nx(), o.ny(), 0);
  std::vector<Cell> region;
  std::deque<Cell> queue;
  for (const Cell& c : frontier.cells)
    for (const Cell& d : kNeighbors8) {
      const Cell nb{c.x + d.x, c.y + d.y};
      if (!o.in_bounds(nb) || !o[nb] || e[nb] || in_region[nb]) continue;
      in_region[nb] = 1;
      queue.push_back(nb);
    }
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    region.push_back(c);
    for (const Cell& d : kNeighbors8) {
      const Cell nb{c.x + d.x, c.y + d.y};
      if (!o.in_bounds(nb) || !o[nb] || e[nb] || in_region[nb]) continue;
      in_region[nb] = 1;
      queue.push_back(nb);
    }
  }
  std::sort(region.begin(), region.end(), row_major_less);
  return region;
}

/// Highest similarity over the frontier's O minus E region, -1 if the region
/// is empty.
inline double score_frontier(const Frontier& frontier, const Grid<float>& similarity, const SubMaps& sub) {
  double best = -1.0;
  for (const Cell& c : frontier_region(frontier, sub)) best = std::max(best, double(similarity[c]));
  return best;
}

namespace detail {

inline std::optional<Cell> argmax(std::span<const Cell> cells, const Grid<float>& values) {
  std::optional<Cell> best;
  for (const Cell& c : cells)
    if (!best || values[c] > values[*best] || (values[c] == values[*best] && row_major_less(c, *best))) best = c;
  return best;
}

}  // namespace detail

/// Builds a frontier goal: the target is the frontier cell geodesically
/// nearest to the region's best cell, travelling through the region, the
/// frontier and N.
inline NavGoal make_frontier_goal(const Frontier& frontier, const Grid<float>& similarity, const SubMaps& sub) {
  NavGoal goal;
  goal.kind = GoalKind::kFrontier;
  goal.support = frontier.cells;
  const std::vector<Cell> region = frontier_region(frontier, sub);
  const auto best = detail::argmax(region, similarity);
  if (!best) {
    goal.score = -1.0;
    goal.target_cell = frontier.cells.front();
    goal.look_at = goal.target_cell;
    return goal;
  }
  goal.score = similarity[*best];
  goal.look_at = *best;

  Mask domain = sub.navigable;
  for (const Cell& c : region) domain[c] = 1;
  for (const Cell& c : frontier.cells) domain[c] = 1;
  const Cell src[] = {*best};
  const auto costs = geodesic_costs(domain, src);
  std::optional<Cell> target;
  std::optional<OctileCost> target_cost;
  for (const Cell& c : frontier.cells) {
    const auto& cost = costs[c];
    if (!cost) continue;
    if (!target_cost || *cost < *target_cost) {
      target = c;
      target_cost = cost;
    }
  }
  if (!target) {
    double best_d2 = std::numeric_limits<double>::infinity();
    for (const Cell& c : frontier.cells) {
      const double d2 = std::pow(c.x - best->x, 2) + std::pow(c.y - best->y, 2);
      if (d2 < best_d2) {
        best_d2 = d2;
        target = c;
      }
    }
  }
  goal.target_cell = *target;
  return goal;
}

/// Components of E minus C where similarity reaches `tau_sim`. Score is the
/// component maximum; the target is its argmax (lowest row-major on ties).
inline std::vector<NavGoal> cluster_high_similarity(const Grid<float>& similarity, const SubMaps& sub,
                                                    double tau_sim) {
  Mask candidates(similarity.nx(), similarity.ny(), 0);
  for (std::size_t i = 0; i < candidates.size(); ++i)
    candidates[i] = sub.explored[i] && !sub.searched[i] && similarity[i] >= tau_sim;
  const Components comps = label_components(candidates);
  std::vector<NavGoal> goals(comps.count);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int id = comps.label[i];
    if (id < 0) continue;
    NavGoal& g = goals[id];
    const Cell c = candidates.cell(i);
    g.kind = GoalKind::kCluster;
    if (g.support.empty() || similarity[i] > g.score) {  // row-major scan keeps the first maximum
      g.score = similarity[i];
      g.target_cell = c;
      g.look_at = c;
    }
    g.support.push_back(c);
  }
  return goals;
}

/// True when `a` ranks ahead of `b`: higher score, then frontier before
/// cluster, then lower row-major target.
inline bool goal_precedes(const NavGoal& a, const NavGoal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.kind != b.kind) return a.kind == GoalKind::kFrontier;
  return row_major_less(a.target_cell, b.target_cell);
}

inline std::vector<NavGoal> rank_goals(std::vector<NavGoal> frontier_goals, const std::vector<NavGoal>& cluster_goals) {
  frontier_goals.insert(frontier_goals.end(), cluster_goals.begin(), cluster_goals.end());
  std::stable_sort(frontier_goals.begin(), frontier_goals.end(), goal_precedes);
  return frontier_goals;
}

inline std::optional<NavGoal> select_goal(const std::vector<NavGoal>& frontier_goals,
                                          const std::vector<NavGoal>& cluster_goals) {
  std::optional<NavGoal> best;
  for (const auto* list : {&frontier_goals, &cluster_goals})
    for (const NavGoal& g : *list)
      if (!best || goal_precedes(g, *best)) best = g;
  return best;
}

// ---------------------------------------------------------------------------
// Consensus filtering
// ---------------------------------------------------------------------------

struct Detection {
  std::string label;
  Cell cell;
  double confidence = 1.0;
  bool true_positive = false;  // ground truth, for bookkeeping only
};

enum class ConsensusVerdict { kAccepted, kBelowPercentile, kOutsideObserved };

inline const char* to_string(ConsensusVerdict v) {
  switch (v) {
    case ConsensusVerdict::kAccepted: return "accepted";
    case ConsensusVerdict::kBelowPercentile: return "below-percentile";
    case ConsensusVerdict::kOutsideObserved: return "outside-observed";
  }
  return "?";
}

struct ConsensusResult {
  bool accepted = false;
  ConsensusVerdict verdict = ConsensusVerdict::kBelowPercentile;
  double threshold = 0.0;
};

/// q-th percentile (0..100) with linear interpolation between order
/// statistics. `values` is reordered.
inline double percentile(std::vector<double>& values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Accepts a detection when the similarity at its cell is within the top
/// `top_percent` of similarities over observed cells.
inline ConsensusResult consensus_filter(const Detection& det, const Grid<float>& similarity, const SubMaps& sub,
                                        double top_percent = 5.0) {
  if (!(top_percent > 0.0 && top_percent < 100.0)) throw InvalidArgument("percentile must lie in (0, 100)");
  ConsensusResult r;
  if (!sub.observed.in_bounds(det.cell) || !sub.observed[det.cell]) {
    r.verdict = ConsensusVerdict::kOutsideObserved;
    return r;
  }
  std::vector<double> values;
  values.reserve(count(sub.observed));
  for (std::size_t i = 0; i < similarity.size(); ++i)
    if (sub.observed[i]) values.push_back(similarity[i]);
  r.threshold = percentile(values, 100.0 - top_percent);
  r.accepted = double(similarity[det.cell]) >= r.threshold;
  r.verdict = r.accepted ? ConsensusVerdict::kAccepted : ConsensusVerdict::kBelowPercentile;
  return r;
}

// ---------------------------------------------------------------------------
// Goal trace
// ---------------------------------------------------------------------------

/// One line of the goal-trace log: every candidate goal and the selection.
inline nlohmann::json goal_trace_record(long episode, int object_index, long step, const std::vector<NavGoal>& ranked,
                                        std::optional<std::size_t> selected) {
  nlohmann::json goals = nlohmann::json::array();
  for (const NavGoal& g : ranked)
    goals.push_back({{"kind", to_string(g.kind)},
                     {"target", {g.target_cell.x, g.target_cell.y}},
                     {"score", g.score},
                     {"support", g.support.size()}});
  nlohmann::json j{{"episode", episode}, {"object", object_index}, {"step", step}, {"goals", goals}};
  j["selected"] = selected ? nlohmann::json(*selected) : nlohmann::json(nullptr);
  return j;
}

}  // namespace onemap
