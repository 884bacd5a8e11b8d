#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <limits>
#include <numbers>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "onemap/error.hpp"
#include "onemap/grid.hpp"

namespace onemap {

/// Cost of an 8-connected grid path kept as (straight steps, diagonal steps)
/// so that comparisons between path costs are exact.
struct OctileCost {
  std::int64_t straight = 0;
  std::int64_t diagonal = 0;

  double value() const { return double(straight) + double(diagonal) * std::numbers::sqrt2; }

  friend OctileCost operator+(OctileCost a, OctileCost b) {
    return {a.straight + b.straight, a.diagonal + b.diagonal};
  }
  friend bool operator==(const OctileCost&, const OctileCost&) = default;

  // a + b*sqrt(2) compared without rounding.
  friend std::strong_ordering operator<=>(const OctileCost& l, const OctileCost& r) {
    const std::int64_t a = l.straight - r.straight;
    const std::int64_t b = r.diagonal - l.diagonal;  // compare a against b*sqrt(2)
    if (a == 0 && b == 0) return std::strong_ordering::equal;
    if (b <= 0 && a >= 0) return std::strong_ordering::greater;
    if (b >= 0 && a <= 0) return std::strong_ordering::less;
    const std::int64_t a2 = a * a;
    const std::int64_t b2 = 2 * b * b;
    if (a > 0) return a2 < b2 ? std::strong_ordering::less : std::strong_ordering::greater;
    return a2 > b2 ? std::strong_ordering::less : std::strong_ordering::greater;
  }

  static OctileCost step(const Cell& d) {
    return (d.x != 0 && d.y != 0) ? OctileCost{0, 1} : OctileCost{1, 0};
  }
  /// Octile distance between two cells; admissible and consistent for
  /// 8-connected motion with unit and sqrt(2) step costs.
  static OctileCost between(const Cell& a, const Cell& b) {
    const std::int64_t dx = std::abs(a.x - b.x);
    const std::int64_t dy = std::abs(a.y - b.y);
    const std::int64_t lo = std::min(dx, dy);
    const std::int64_t hi = std::max(dx, dy);
    return {hi - lo, lo};
  }
};

struct Path {
  std::vector<Cell> cells;
  OctileCost cost;
  double length = 0.0;  // meters

  bool empty() const { return cells.empty(); }
};

/// Free cells whose center lies farther than `radius` (m) from every
/// obstacle cell center.
inline Mask inflate_free_space(const Mask& free, const Mask& obstacle, double radius, double cell_size) {
  Mask out = free;
  const double rc = radius / cell_size;
  const int r = static_cast<int>(std::floor(rc));
  for (int y = 0; y < obstacle.ny(); ++y) {
    for (int x = 0; x < obstacle.nx(); ++x) {
      if (!obstacle(x, y)) continue;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (double(dx) * dx + double(dy) * dy > rc * rc) continue;
          if (out.in_bounds(x + dx, y + dy)) out(x + dx, y + dy) = 0;
        }
    }
  }
  return out;
}

/// Nearest cell of `navigable` to `goal` within `radius_cells` (Euclidean
/// between cell centers), ties broken by row-major order.
inline std::optional<Cell> snap_to_navigable(const Mask& navigable, const Cell& goal, double radius_cells) {
  if (navigable.in_bounds(goal) && navigable[goal]) return goal;
  const int r = static_cast<int>(std::floor(radius_cells));
  std::optional<Cell> best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const Cell c{goal.x + dx, goal.y + dy};
      if (!navigable.in_bounds(c) || !navigable[c]) continue;
      const double d2 = double(dx) * dx + double(dy) * dy;
      if (d2 > radius_cells * radius_cells) continue;
      if (d2 < best_d2 || (d2 == best_d2 && row_major_less(c, *best))) {
        best_d2 = d2;
        best = c;
      }
    }
  }
  return best;
}

/// A* over the 8-connected navigable raster with octile heuristic. A goal
/// outside `navigable` is first snapped to the nearest navigable cell within
/// `snap_radius` meters. Among open nodes of equal priority the lowest
/// row-major index expands first.
inline Path astar(const Mask& navigable, const Cell& start, const Cell& goal, double cell_size,
                  double snap_radius = 1.5) {
  if (!navigable.in_bounds(start) || !navigable[start]) throw InvalidStart("start cell is not navigable");
  const auto snapped = snap_to_navigable(navigable, goal, snap_radius / cell_size);
  if (!snapped) throw Unreachable("goal has no navigable cell within the snapping radius");
  const Cell target = *snapped;

  const std::size_t n = navigable.size();
  std::vector<OctileCost> g(n);
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<std::int64_t> parent(n, -1);
  std::vector<std::uint8_t> closed(n, 0);

  struct Entry {
    OctileCost f;
    std::size_t index;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.f != b.f) return a.f > b.f;
    return a.index > b.index;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);

  const std::size_t s = navigable.index(start);
  const std::size_t t = navigable.index(target);
  g[s] = OctileCost{};
  seen[s] = 1;
  open.push({OctileCost::between(start, target), s});
  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    if (closed[e.index]) continue;
    closed[e.index] = 1;
    if (e.index == t) break;
    const Cell c = navigable.cell(e.index);
    for (const Cell& d : kNeighbors8) {
      const Cell nb{c.x + d.x, c.y + d.y};
      if (!navigable.in_bounds(nb) || !navigable[nb]) continue;
      const std::size_t ni = navigable.index(nb);
      if (closed[ni]) continue;
      const OctileCost cand = g[e.index] + OctileCost::step(d);
      if (!seen[ni] || cand < g[ni]) {
        seen[ni] = 1;
        g[ni] = cand;
        parent[ni] = static_cast<std::int64_t>(e.index);
        open.push({cand + OctileCost::between(nb, target), ni});
      }
    }
  }
  if (!closed[t]) throw Unreachable("no navigable path to goal");

  Path path;
  for (std::int64_t i = static_cast<std::int64_t>(t); i != -1; i = parent[i])
    path.cells.push_back(navigable.cell(static_cast<std::size_t>(i)));
  std::reverse(path.cells.begin(), path.cells.end());
  path.cost = g[t];
  path.length = path.cost.value() * cell_size;
  return path;
}

/// 8-connected flood fill of `navigable` from `from`.
inline Mask reachable_set(const Mask& navigable, const Cell& from) {
  if (!navigable.in_bounds(from) || !navigable[from]) throw InvalidStart("flood-fill start is not navigable");
  Mask out(navigable.nx(), navigable.ny(), 0);
  std::deque<Cell> queue{from};
  out[from] = 1;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (const Cell& d : kNeighbors8) {
      const Cell nb{c.x + d.x, c.y + d.y};
      if (!navigable.in_bounds(nb) || !navigable[nb] || out[nb]) continue;
      out[nb] = 1;
      queue.push_back(nb);
    }
  }
  return out;
}

/// Multi-source Dijkstra over `navigable`. Unreached cells keep
/// `std::nullopt`. Sources outside `navigable` are ignored.
inline Grid<std::optional<OctileCost>> geodesic_costs(const Mask& navigable, std::span<const Cell> sources) {
  Grid<std::optional<OctileCost>> dist(navigable.nx(), navigable.ny());
  struct Entry {
    OctileCost cost;
    std::size_t index;
  };
  auto worse = [](const Entry& a, const Entry& b) {
    if (a.cost != b.cost) return a.cost > b.cost;
    return a.index > b.index;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
  for (const Cell& s : sources) {
    if (!navigable.in_bounds(s) || !navigable[s]) continue;
    dist[s] = OctileCost{};
    open.push({OctileCost{}, navigable.index(s)});
  }
  std::vector<std::uint8_t> done(navigable.size(), 0);
  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    if (done[e.index]) continue;
    done[e.index] = 1;
    const Cell c = navigable.cell(e.index);
    for (const Cell& d : kNeighbors8) {
      const Cell nb{c.x + d.x, c.y + d.y};
      if (!navigable.in_bounds(nb) || !navigable[nb]) continue;
      const OctileCost cand = e.cost + OctileCost::step(d);
      auto& cur = dist[nb];
      if (!cur || cand < *cur) {
        cur = cand;
        open.push({cand, navigable.index(nb)});
      }
    }
  }
  return dist;
}

}  // namespace onemap
