#pragma once

// Procedural gridworlds, a 2.5D depth/label renderer, a point agent and a
// simulated object detector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "onemap/embedding.hpp"
#include "onemap/error.hpp"
#include "onemap/exploration.hpp"
#include "onemap/grid.hpp"
#include "onemap/observation.hpp"
#include "onemap/planning.hpp"
#include "onemap/rng.hpp"

namespace onemap {

inline constexpr const char* kWallLabel = "wall";

struct WorldObject {
  std::string label;
  std::vector<Cell> cells;  // row-major
  double cx = 0.0;          // centroid, meters
  double cy = 0.0;
  int room = -1;

  friend bool operator==(const WorldObject&, const WorldObject&) = default;
};

/// Interior cell rectangle [x0, x1] x [y0, y1] of a room.
struct Room {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::string type;

  bool contains(const Cell& c) const { return c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1; }
  friend bool operator==(const Room&, const Room&) = default;
};

struct World {
  std::string kind;
  std::uint64_t seed = 0;
  double cell_size = 0.2;
  Mask walls;
  Grid<std::string> semantic;  // "" free floor, "wall", or an object label
  std::vector<WorldObject> objects;
  std::vector<Room> rooms;

  int nx() const { return walls.nx(); }
  int ny() const { return walls.ny(); }
  GridGeometry geometry() const { return GridGeometry{nx(), ny(), cell_size}; }
  double extent_x() const { return nx() * cell_size; }
  double extent_y() const { return ny() * cell_size; }

  bool blocked(const Cell& c) const { return !walls.in_bounds(c) || !semantic[c].empty(); }

  Mask obstacles() const {
    Mask m(nx(), ny(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = !semantic[i].empty();
    return m;
  }

  /// True navigable raster: free cells farther than `agent_radius` from any
  /// wall or object cell.
  Mask navigable(double agent_radius) const {
    const Mask obs = obstacles();
    Mask free(nx(), ny(), 0);
    for (std::size_t i = 0; i < free.size(); ++i) free[i] = !obs[i];
    return inflate_free_space(free, obs, agent_radius, cell_size);
  }

  std::vector<std::string> categories() const {
    std::vector<std::string> out;
    for (const auto& o : objects)
      if (std::find(out.begin(), out.end(), o.label) == out.end()) out.push_back(o.label);
    std::sort(out.begin(), out.end());
    return out;
  }

  friend bool operator==(const World&, const World&) = default;
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct RoomType {
  std::string name;
  std::vector<std::pair<std::string, double>> weights;  // category -> relative frequency
};

inline std::vector<RoomType> default_room_types() {
  return {
      {"bedroom", {{"bed", 4}, {"chair", 1}, {"plant", 1}, {"tv_monitor", 1}, {"cabinet", 2}}},
      {"bathroom", {{"toilet", 4}, {"sink", 3}, {"bathtub", 2}, {"plant", 0.5}}},
      {"living_room", {{"sofa", 4}, {"tv_monitor", 3}, {"chair", 1}, {"plant", 1}, {"table", 1}}},
      {"kitchen", {{"table", 3}, {"chair", 2}, {"sink", 2}, {"cabinet", 2}, {"plant", 0.5}}},
      {"office", {{"chair", 3}, {"tv_monitor", 2}, {"table", 2}, {"plant", 1}}},
  };
}

/// Categories used as navigation goals; the remaining object labels act as
/// distractors.
inline std::vector<std::string> default_goal_categories() {
  return {"bed", "chair", "plant", "sofa", "toilet", "tv_monitor"};
}

inline std::vector<std::string> object_vocabulary(const std::vector<RoomType>& types) {
  std::vector<std::string> out;
  for (const auto& t : types)
    for (const auto& [label, w] : t.weights)
      if (std::find(out.begin(), out.end(), label) == out.end()) out.push_back(label);
  std::sort(out.begin(), out.end());
  return out;
}

struct WorldParams {
  std::string kind = "rooms";  // rooms | single_room | corridor
  int rooms_x = 4;
  int rooms_y = 3;
  double room_size = 4.0;  // interior edge, meters
  double corridor_length = 12.0;
  double corridor_width = 2.0;
  double cell_size = 0.2;
  double door_width = 1.0;
  double extra_door_prob = 0.3;
  int objects_per_room = 2;
  double co_location_bias = 0.8;  // probability of drawing from the room type's weights
  double agent_radius = 0.2;
  std::vector<RoomType> room_types = default_room_types();
};

namespace detail {

struct DisjointSet {
  std::vector<int> parent;
  explicit DisjointSet(int n) : parent(n) {
    for (int i = 0; i < n; ++i) parent[i] = i;
  }
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

inline std::string draw_category(std::mt19937_64& rng, const RoomType& type, const std::vector<std::string>& vocab,
                                 double bias) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < bias && !type.weights.empty()) {
    std::vector<double> w;
    for (const auto& [label, weight] : type.weights) w.push_back(weight);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    return type.weights[pick(rng)].first;
  }
  std::uniform_int_distribution<int> pick(0, static_cast<int>(vocab.size()) - 1);
  return vocab[pick(rng)];
}

inline bool single_component(const Mask& m) {
  const Components comps = label_components(m);
  return comps.count == 1;
}

}  // namespace detail

/// Seeded floor plan: a grid of rooms joined by doors (a random spanning tree
/// plus optional extra doors), a single room, or a corridor. Objects are
/// axis-aligned 2-3 cell rectangles placed so the navigable space stays one
/// connected component.
inline World generate_world(const WorldParams& p, std::uint64_t seed) {
  if (!(p.cell_size > 0.0)) throw GenerationError("cell_size must be positive");
  if (p.objects_per_room < 0) throw GenerationError("objects_per_room must be non-negative");
  if (p.room_types.empty()) throw GenerationError("no room types configured");
  int rx = 1, ry = 1;
  double sx_m = p.room_size, sy_m = p.room_size;
  if (p.kind == "rooms") {
    if (p.rooms_x <= 0 || p.rooms_y <= 0) throw GenerationError("room counts must be positive");
    rx = p.rooms_x;
    ry = p.rooms_y;
  } else if (p.kind == "corridor") {
    sx_m = p.corridor_length;
    sy_m = p.corridor_width;
  } else if (p.kind != "single_room") {
    throw GenerationError("unknown world kind: " + p.kind);
  }
  const int sx = static_cast<int>(std::lround(sx_m / p.cell_size));
  const int sy = static_cast<int>(std::lround(sy_m / p.cell_size));
  const int door = std::max(1, static_cast<int>(std::lround(p.door_width / p.cell_size)));
  if (sx < 6 || sy < 6) throw GenerationError("rooms are too small for the cell size");
  if (rx * ry > 1 && (sx < door + 4 || sy < door + 4)) throw GenerationError("doors do not fit in the rooms");

  std::mt19937_64 rng(seed);
  World w;
  w.kind = p.kind;
  w.seed = seed;
  w.cell_size = p.cell_size;
  const int nx = rx * (sx + 1) + 1;
  const int ny = ry * (sy + 1) + 1;
  w.walls = Mask(nx, ny, 0);
  w.semantic = Grid<std::string>(nx, ny);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      if (x % (sx + 1) == 0 || y % (sy + 1) == 0) w.walls(x, y) = 1;

  std::uniform_int_distribution<int> pick_type(0, static_cast<int>(p.room_types.size()) - 1);
  for (int j = 0; j < ry; ++j)
    for (int i = 0; i < rx; ++i) {
      Room r;
      r.x0 = i * (sx + 1) + 1;
      r.y0 = j * (sy + 1) + 1;
      r.x1 = r.x0 + sx - 1;
      r.y1 = r.y0 + sy - 1;
      r.type = p.room_types[pick_type(rng)].name;
      w.rooms.push_back(r);
    }

  // doors
  struct Edge {
    int a, b;
    bool vertical_wall;  // wall between horizontally adjacent rooms
  };
  std::vector<Edge> edges;
  for (int j = 0; j < ry; ++j)
    for (int i = 0; i < rx; ++i) {
      if (i + 1 < rx) edges.push_back({j * rx + i, j * rx + i + 1, true});
      if (j + 1 < ry) edges.push_back({j * rx + i, (j + 1) * rx + i, false});
    }
  std::shuffle(edges.begin(), edges.end(), rng);
  detail::DisjointSet ds(rx * ry);
  Mask door_cells(nx, ny, 0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (const Edge& e : edges) {
    const bool tree = ds.unite(e.a, e.b);
    const bool extra = !tree && u01(rng) < p.extra_door_prob;
    if (!tree && !extra) continue;
    const Room& ra = w.rooms[e.a];
    if (e.vertical_wall) {
      std::uniform_int_distribution<int> off(1, sy - door - 1);
      const int y0 = ra.y0 + off(rng);
      for (int y = y0; y < y0 + door; ++y) {
        w.walls(ra.x1 + 1, y) = 0;
        door_cells(ra.x1 + 1, y) = 1;
      }
    } else {
      std::uniform_int_distribution<int> off(1, sx - door - 1);
      const int x0 = ra.x0 + off(rng);
      for (int x = x0; x < x0 + door; ++x) {
        w.walls(x, ra.y1 + 1) = 0;
        door_cells(x, ra.y1 + 1) = 1;
      }
    }
  }
  for (std::size_t i = 0; i < w.walls.size(); ++i)
    if (w.walls[i]) w.semantic[i] = kWallLabel;
  if (!detail::single_component(w.navigable(p.agent_radius)))
    throw GenerationError("floor plan is not connected at this agent radius");

  // objects
  const std::vector<std::string> vocab = object_vocabulary(p.room_types);
  Mask keepout(nx, ny, 0);
  auto mark_keepout = [&](int x0, int y0, int x1, int y1, int margin) {
    for (int y = y0 - margin; y <= y1 + margin; ++y)
      for (int x = x0 - margin; x <= x1 + margin; ++x)
        if (keepout.in_bounds(x, y)) keepout(x, y) = 1;
  };
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      if (door_cells(x, y)) mark_keepout(x, y, x, y, 3);

  std::uniform_int_distribution<int> pick_size(2, 3);
  for (std::size_t ri = 0; ri < w.rooms.size(); ++ri) {
    const Room& room = w.rooms[ri];
    const RoomType& type = *std::find_if(p.room_types.begin(), p.room_types.end(),
                                         [&](const RoomType& t) { return t.name == room.type; });
    for (int n = 0; n < p.objects_per_room; ++n) {
      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        const std::string label = detail::draw_category(rng, type, vocab, p.co_location_bias);
        const int ow = pick_size(rng);
        const int oh = pick_size(rng);
        if (ow > sx || oh > sy) continue;
        std::uniform_int_distribution<int> px(room.x0, room.x1 - ow + 1);
        std::uniform_int_distribution<int> py(room.y0, room.y1 - oh + 1);
        const int x0 = px(rng);
        const int y0 = py(rng);
        bool ok = true;
        for (int y = y0; y < y0 + oh && ok; ++y)
          for (int x = x0; x < x0 + ow && ok; ++x) ok = !keepout(x, y) && w.semantic(x, y).empty();
        if (!ok) continue;
        for (int y = y0; y < y0 + oh; ++y)
          for (int x = x0; x < x0 + ow; ++x) w.semantic(x, y) = label;
        if (!detail::single_component(w.navigable(p.agent_radius))) {
          for (int y = y0; y < y0 + oh; ++y)
            for (int x = x0; x < x0 + ow; ++x) w.semantic(x, y).clear();
          continue;
        }
        WorldObject obj;
        obj.label = label;
        obj.room = static_cast<int>(ri);
        for (int y = y0; y < y0 + oh; ++y)
          for (int x = x0; x < x0 + ow; ++x) obj.cells.push_back({x, y});
        obj.cx = (x0 + ow / 2.0) * p.cell_size;
        obj.cy = (y0 + oh / 2.0) * p.cell_size;
        w.objects.push_back(std::move(obj));
        mark_keepout(x0, y0, x0 + ow - 1, y0 + oh - 1, 2);
        placed = true;
      }
      if (!placed)
        throw GenerationError("could not place object " + std::to_string(n) + " in room " + std::to_string(ri));
    }
  }
  return w;
}

/// Checks the structural invariants of a world; returns an empty string when
/// they hold, otherwise a description of the first violation.
inline std::string check_world(const World& w, double agent_radius) {
  if (w.walls.nx() != w.semantic.nx() || w.walls.ny() != w.semantic.ny()) return "raster sizes differ";
  for (std::size_t i = 0; i < w.walls.size(); ++i) {
    const bool is_wall = w.semantic[i] == kWallLabel;
    if (bool(w.walls[i]) != is_wall) return "wall raster and semantic labels disagree";
  }
  std::size_t object_cells = 0;
  for (const auto& o : w.objects) {
    if (o.cells.empty()) return "object without cells";
    for (const Cell& c : o.cells) {
      if (!w.walls.in_bounds(c)) return "object cell out of bounds";
      if (w.semantic[c] != o.label) return "object cell label mismatch";
    }
    object_cells += o.cells.size();
  }
  std::size_t labelled = 0;
  for (std::size_t i = 0; i < w.semantic.size(); ++i)
    labelled += !w.semantic[i].empty() && w.semantic[i] != kWallLabel;
  if (labelled != object_cells) return "stray object labels";
  const Components comps = label_components(w.navigable(agent_radius));
  if (comps.count < 1) return "no navigable space";
  return {};
}

inline nlohmann::json world_to_json(const World& w) {
  nlohmann::json j;
  j["kind"] = w.kind;
  j["seed"] = w.seed;
  j["cell_size"] = w.cell_size;
  j["nx"] = w.nx();
  j["ny"] = w.ny();
  nlohmann::json rows = nlohmann::json::array();
  for (int y = 0; y < w.ny(); ++y) {
    std::string row(static_cast<std::size_t>(w.nx()), '.');
    for (int x = 0; x < w.nx(); ++x)
      if (w.walls(x, y)) row[x] = '#';
    rows.push_back(row);
  }
  j["rows"] = rows;
  j["rooms"] = nlohmann::json::array();
  for (const Room& r : w.rooms) j["rooms"].push_back({{"x0", r.x0}, {"y0", r.y0}, {"x1", r.x1}, {"y1", r.y1}, {"type", r.type}});
  j["objects"] = nlohmann::json::array();
  for (const WorldObject& o : w.objects) {
    nlohmann::json cells = nlohmann::json::array();
    for (const Cell& c : o.cells) cells.push_back({c.x, c.y});
    j["objects"].push_back({{"label", o.label}, {"room", o.room}, {"centroid", {o.cx, o.cy}}, {"cells", cells}});
  }
  return j;
}

inline World world_from_json(const nlohmann::json& j) {
  World w;
  try {
    w.kind = j.at("kind").get<std::string>();
    w.seed = j.at("seed").get<std::uint64_t>();
    w.cell_size = j.at("cell_size").get<double>();
    const int nx = j.at("nx").get<int>();
    const int ny = j.at("ny").get<int>();
    if (nx <= 0 || ny <= 0 || !(w.cell_size > 0.0)) throw SchemaError("world has invalid dimensions");
    const auto& rows = j.at("rows");
    if (static_cast<int>(rows.size()) != ny) throw SchemaError("world row count does not match ny");
    w.walls = Mask(nx, ny, 0);
    w.semantic = Grid<std::string>(nx, ny);
    for (int y = 0; y < ny; ++y) {
      const auto row = rows[y].get<std::string>();
      if (static_cast<int>(row.size()) != nx) throw SchemaError("world row width does not match nx");
      for (int x = 0; x < nx; ++x) {
        if (row[x] == '#') {
          w.walls(x, y) = 1;
          w.semantic(x, y) = kWallLabel;
        } else if (row[x] != '.') {
          throw SchemaError(std::string("unexpected world cell character '") + row[x] + "'");
        }
      }
    }
    for (const auto& r : j.at("rooms"))
      w.rooms.push_back({r.at("x0").get<int>(), r.at("y0").get<int>(), r.at("x1").get<int>(), r.at("y1").get<int>(),
                         r.at("type").get<std::string>()});
    for (const auto& o : j.at("objects")) {
      WorldObject obj;
      obj.label = o.at("label").get<std::string>();
      obj.room = o.at("room").get<int>();
      obj.cx = o.at("centroid").at(0).get<double>();
      obj.cy = o.at("centroid").at(1).get<double>();
      for (const auto& c : o.at("cells")) {
        const Cell cell{c.at(0).get<int>(), c.at(1).get<int>()};
        if (!w.walls.in_bounds(cell) || w.walls[cell]) throw SchemaError("object cell outside free space");
        w.semantic[cell] = obj.label;
        obj.cells.push_back(cell);
      }
      w.objects.push_back(std::move(obj));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("world: ") + e.what());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct SensorParams {
  int width = 48;
  int height = 36;
  double hfov_deg = 79.0;
  double max_range = 5.0;
  double camera_height = 0.88;
  double depth_noise = 0.0;  // sigma = depth_noise * d^2, off when 0
};

/// Renders a posed depth + label frame. Walls and objects are full-height
/// opaque cells; the floor is the z = 0 plane. Each image column is one exact
/// grid traversal; rows below the horizon see the floor when it is nearer
/// than the first opaque cell. Depth is planar z-depth; returns beyond
/// max_range are censored (depth = max_range, valid = 0). Walls and floor
/// carry the background label.
inline PosedObservation render_observation(const World& world, const Pose2D& pose, const SensorParams& sp,
                                           std::uint64_t noise_seed = 0) {
  if (sp.width < 8 || sp.height < 1) throw InvalidArgument("sensor needs at least 8 columns and 1 row");
  if (!(sp.max_range > 0.0) || !(sp.hfov_deg > 0.0 && sp.hfov_deg < 180.0))
    throw InvalidArgument("invalid sensor range or field of view");
  const GridGeometry geom = world.geometry();
  if (!geom.contains(pose.x, pose.y) || world.blocked(geom.cell_of(pose.x, pose.y)))
    throw InvalidPose("pose is not in free space");

  PosedObservation obs;
  obs.pose = pose;
  obs.intrinsics = Intrinsics::from_fov(sp.width, sp.height, sp.hfov_deg * std::numbers::pi / 180.0);
  obs.camera_height = sp.camera_height;
  obs.max_range = sp.max_range;
  obs.depth = Grid<float>(sp.width, sp.height, static_cast<float>(sp.max_range));
  obs.valid = Mask(sp.width, sp.height, 0);
  obs.hit_labels = Grid<std::string>(sp.width, sp.height, kVoidLabel);

  const auto& k = obs.intrinsics;
  const double c = std::cos(pose.heading);
  const double s = std::sin(pose.heading);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  constexpr double kInside = 1e-3;  // nudge returns into the struck cell

  for (int j = 0; j < sp.width; ++j) {
    const double slope = (j - k.cx) / k.fx;
    const double cos_a = 1.0 / std::sqrt(1.0 + slope * slope);
    const double dx = cos_a * c + slope * cos_a * s;
    const double dy = cos_a * s - slope * cos_a * c;
    double z_surface = std::numeric_limits<double>::infinity();
    std::string label;
    traverse_ray(geom, pose.x, pose.y, dx, dy, sp.max_range / cos_a + kInside, [&](const Cell& cell, double t) {
      if (!world.blocked(cell)) return true;
      z_surface = t * cos_a;
      const std::string& sem = world.semantic[cell];
      label = sem == kWallLabel ? kVoidLabel : sem;
      return false;
    });
    for (int i = 0; i < sp.height; ++i) {
      const double z_floor = i > k.cy ? sp.camera_height * k.fy / (i - k.cy) : std::numeric_limits<double>::infinity();
      double z;
      std::string hit;
      if (z_floor < z_surface) {
        z = z_floor;
        hit = kVoidLabel;
      } else {
        z = z_surface + kInside * cos_a;
        hit = label;
      }
      if (sp.depth_noise > 0.0 && std::isfinite(z)) z += sp.depth_noise * z * z * gauss(rng);
      if (!(z <= sp.max_range) || !(z > 0.0)) continue;
      obs.depth(j, i) = static_cast<float>(z);
      obs.valid(j, i) = 1;
      obs.hit_labels(j, i) = hit;
    }
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

struct AgentState {
  Pose2D pose;
  long steps_taken = 0;
  double path_length = 0.0;
};

inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

/// Advances the agent up to `step_size` meters along the cell-center
/// polyline of `path`, consuming waypoints as they are reached. The first
/// waypoint is approached from the current pose.
inline AgentState step_agent(const World& world, AgentState state, Path& path, double step_size) {
  const GridGeometry g = world.geometry();
  double budget = step_size;
  std::size_t consumed = 0;
  while (budget > 0.0 && consumed < path.cells.size()) {
    const Cell& c = path.cells[consumed];
    const double tx = g.center_x(c.x);
    const double ty = g.center_y(c.y);
    const double ddx = tx - state.pose.x;
    const double ddy = ty - state.pose.y;
    const double dist = std::hypot(ddx, ddy);
    if (dist > 0.0) state.pose.heading = std::atan2(ddy, ddx);
    if (dist <= budget) {
      state.pose.x = tx;
      state.pose.y = ty;
      state.path_length += dist;
      budget -= dist;
      ++consumed;
    } else {
      state.pose.x += ddx / dist * budget;
      state.pose.y += ddy / dist * budget;
      state.path_length += budget;
      budget = 0.0;
    }
  }
  path.cells.erase(path.cells.begin(), path.cells.begin() + static_cast<std::ptrdiff_t>(consumed));
  ++state.steps_taken;
  return state;
}

inline AgentState turn_agent(AgentState state, double angle) {
  state.pose.heading = wrap_angle(state.pose.heading + angle);
  ++state.steps_taken;
  return state;
}

// ---------------------------------------------------------------------------
// Detector
// ---------------------------------------------------------------------------

struct DetectorParams {
  double tp_range = 5.0;  // meters, planar depth
  double tp_rate = 1.0;
  double fp_rate = 0.0;
  std::uint64_t seed = 0;
};

/// Simulated detector. A true detection fires with probability tp_rate when
/// a pixel within tp_range sees the target label (at the nearest such
/// pixel's cell); otherwise a false detection fires with probability fp_rate
/// at a uniformly drawn visible non-target pixel. Both draws are made on
/// every call, so each frame consumes the same random stream.
inline std::optional<Detection> simulate_detection(const World& world, const PosedObservation& obs,
                                                   const std::string& target, const DetectorParams& dp,
                                                   std::uint64_t frame_index) {
  std::mt19937_64 rng(derive_seed(dp.seed, {frame_index}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u_tp = u01(rng);
  const double u_fp = u01(rng);
  const std::uint64_t u_pick = rng();

  const GridGeometry g = world.geometry();
  std::optional<std::pair<int, int>> nearest;
  float nearest_depth = 0.0f;
  std::vector<std::pair<int, int>> others;
  for (int i = 0; i < obs.height(); ++i)
    for (int j = 0; j < obs.width(); ++j) {
      if (!obs.valid(j, i)) continue;
      const float d = obs.depth(j, i);
      if (obs.hit_labels(j, i) == target) {
        if (d <= dp.tp_range && (!nearest || d < nearest_depth)) {
          nearest = {i, j};
          nearest_depth = d;
        }
      } else {
        others.emplace_back(i, j);
      }
    }
  auto cell_at = [&](int i, int j) {
    const auto [x, y] = pixel_to_world(obs, i, j, obs.depth(j, i));
    return g.cell_of(x, y);
  };
  if (nearest && u_tp < dp.tp_rate) {
    Detection d;
    d.label = target;
    d.cell = cell_at(nearest->first, nearest->second);
    d.true_positive = true;
    return d;
  }
  if (!others.empty() && u_fp < dp.fp_rate) {
    const auto [i, j] = others[u_pick % others.size()];
    Detection d;
    d.label = target;
    d.cell = cell_at(i, j);
    d.true_positive = false;
    return d;
  }
  return std::nullopt;
}

}  // namespace onemap
