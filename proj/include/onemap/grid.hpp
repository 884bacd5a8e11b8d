#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "onemap/error.hpp"

namespace onemap {

struct Cell {
  int x = 0;
  int y = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Row-major order: rows are y, columns are x.
inline bool row_major_less(const Cell& a, const Cell& b) {
  return a.y != b.y ? a.y < b.y : a.x < b.x;
}

inline constexpr std::array<Cell, 8> kNeighbors8 = {
    Cell{-1, -1}, Cell{0, -1}, Cell{1, -1}, Cell{-1, 0},
    Cell{1, 0},   Cell{-1, 1}, Cell{0, 1},  Cell{1, 1}};

/// Dense 2D raster stored row-major. Used for every per-cell layer in the
/// library (variances, similarity maps, sub-maps, occupancy).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int nx, int ny, T fill = T{}) : nx_(nx), ny_(ny) {
    if (nx < 0 || ny < 0) throw InvalidArgument("grid dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), fill);
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool in_bounds(int x, int y) const { return x >= 0 && y >= 0 && x < nx_ && y < ny_; }
  bool in_bounds(const Cell& c) const { return in_bounds(c.x, c.y); }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(x);
  }
  std::size_t index(const Cell& c) const { return index(c.x, c.y); }
  Cell cell(std::size_t i) const {
    return Cell{static_cast<int>(i % static_cast<std::size_t>(nx_)),
                static_cast<int>(i / static_cast<std::size_t>(nx_))};
  }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](const Cell& c) { return data_[index(c)]; }
  const T& operator[](const Cell& c) const { return data_[index(c)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int nx_ = 0;
  int ny_ = 0;
  std::vector<T> data_;
};

/// Boolean rasters are byte-backed so they can be viewed as spans and hashed.
using Mask = Grid<std::uint8_t>;

inline std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data()) n += v ? 1 : 0;
  return n;
}

/// 8-connected components of a mask. Labels are assigned in row-major order of
/// each component's first cell; background cells are -1.
struct Components {
  Grid<int> label;
  int count = 0;
};

inline Components label_components(const Mask& m) {
  Components out{Grid<int>(m.nx(), m.ny(), -1), 0};
  std::deque<Cell> queue;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i] || out.label[i] >= 0) continue;
    const int id = out.count++;
    out.label[i] = id;
    queue.push_back(m.cell(i));
    while (!queue.empty()) {
      const Cell c = queue.front();
      queue.pop_front();
      for (const Cell& d : kNeighbors8) {
        const Cell nb{c.x + d.x, c.y + d.y};
        if (!m.in_bounds(nb) || !m[nb] || out.label[nb] >= 0) continue;
        out.label[nb] = id;
        queue.push_back(nb);
      }
    }
  }
  return out;
}

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, counter-clockwise from +x

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

/// Metric placement of a raster: cell (0,0) spans [0, cell_size)^2.
struct GridGeometry {
  int nx = 0;
  int ny = 0;
  double cell_size = 1.0;

  Cell cell_of(double x, double y) const {
    return Cell{static_cast<int>(std::floor(x / cell_size)),
                static_cast<int>(std::floor(y / cell_size))};
  }
  bool contains(double x, double y) const {
    const Cell c = cell_of(x, y);
    return c.x >= 0 && c.y >= 0 && c.x < nx && c.y < ny;
  }
  double center_x(int cx) const { return (cx + 0.5) * cell_size; }
  double center_y(int cy) const { return (cy + 0.5) * cell_size; }
};

/// Exact voxel traversal (Amanatides & Woo) of the ray origin + t*dir,
/// t in [0, max_t]. `visit(cell, t_enter)` returns false to stop. Cells outside
/// the raster terminate the walk. `dir` must be unit length.
template <typename Visitor>
void traverse_ray(const GridGeometry& g, double ox, double oy, double dx, double dy,
                  double max_t, Visitor&& visit) {
  Cell c = g.cell_of(ox, oy);
  if (c.x < 0 || c.y < 0 || c.x >= g.nx || c.y >= g.ny) return;
  const double inf = std::numeric_limits<double>::infinity();
  const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  const double t_delta_x = step_x != 0 ? g.cell_size / std::abs(dx) : inf;
  const double t_delta_y = step_y != 0 ? g.cell_size / std::abs(dy) : inf;
  double t_max_x = inf;
  double t_max_y = inf;
  if (step_x > 0) t_max_x = ((c.x + 1) * g.cell_size - ox) / dx;
  if (step_x < 0) t_max_x = (c.x * g.cell_size - ox) / dx;
  if (step_y > 0) t_max_y = ((c.y + 1) * g.cell_size - oy) / dy;
  if (step_y < 0) t_max_y = (c.y * g.cell_size - oy) / dy;
  double t = 0.0;
  while (t <= max_t) {
    if (!visit(c, t)) return;
    if (t_max_x < t_max_y) {
      t = t_max_x;
      t_max_x += t_delta_x;
      c.x += step_x;
    } else {
      t = t_max_y;
      t_max_y += t_delta_y;
      c.y += step_y;
    }
    if (c.x < 0 || c.y < 0 || c.x >= g.nx || c.y >= g.ny) return;
  }
}

}  // namespace onemap
