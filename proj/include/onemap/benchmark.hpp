#pragma once

// Multi-object episodes, the closed-loop search policy and the metric suite.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "onemap/belief_map.hpp"
#include "onemap/embedding.hpp"
#include "onemap/error.hpp"
#include "onemap/exploration.hpp"
#include "onemap/map_io.hpp"
#include "onemap/planning.hpp"
#include "onemap/rng.hpp"
#include "onemap/simulator.hpp"

namespace onemap {

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct Episode {
  long episode_id = 0;
  int world_index = 0;
  std::uint64_t world_seed = 0;
  Pose2D start;
  std::vector<std::string> goals;
  std::uint64_t seed = 0;

  friend bool operator==(const Episode& a, const Episode& b) {
    return a.episode_id == b.episode_id && a.world_index == b.world_index && a.world_seed == b.world_seed &&
           a.start.x == b.start.x && a.start.y == b.start.y && a.start.heading == b.start.heading &&
           a.goals == b.goals && a.seed == b.seed;
  }
};

/// Cells whose centers lie within `radius` meters of the center of some cell
/// of an object with the given label.
inline Mask goal_region(const World& world, const std::string& label, double radius) {
  Mask out(world.nx(), world.ny(), 0);
  const double rc = radius / world.cell_size;
  const int r = static_cast<int>(std::floor(rc));
  for (const WorldObject& o : world.objects) {
    if (o.label != label) continue;
    for (const Cell& c : o.cells)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          if (double(dx) * dx + double(dy) * dy <= rc * rc && out.in_bounds(c.x + dx, c.y + dy))
            out(c.x + dx, c.y + dy) = 1;
  }
  return out;
}

/// Geodesic length (meters) over `navigable` from `from` to the nearest cell
/// within `success_radius` of any instance of `label`. The start cell is
/// treated as navigable.
inline double oracle_shortest_path(const World& world, const Mask& navigable, const Cell& from,
                                   const std::string& label, double success_radius = 1.5) {
  if (!navigable.in_bounds(from)) throw InvalidStart("oracle start outside the world");
  Mask nav = navigable;
  nav[from] = 1;
  const Mask region = goal_region(world, label, success_radius);
  const Cell src[] = {from};
  const auto costs = geodesic_costs(nav, src);
  std::optional<OctileCost> best;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i] && costs[i] && (!best || *costs[i] < *best)) best = costs[i];
  if (!best) throw Unreachable("no instance of '" + label + "' is reachable");
  return best->value() * world.cell_size;
}

inline bool instance_reachable(const World& world, const Mask& reachable, const WorldObject& obj,
                               double success_radius) {
  const double rc = success_radius / world.cell_size;
  const int r = static_cast<int>(std::floor(rc));
  for (const Cell& c : obj.cells)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (double(dx) * dx + double(dy) * dy <= rc * rc && reachable.in_bounds(c.x + dx, c.y + dy) &&
            reachable(c.x + dx, c.y + dy))
          return true;
  return false;
}

/// Seeded episodes spread round-robin over `worlds`. Starts are drawn from
/// navigable space; goals are distinct categories from `goal_categories`
/// whose every instance is reachable from the start.
inline std::vector<Episode> generate_episodes(const std::vector<World>& worlds, int n_episodes, int seq_len,
                                              std::uint64_t seed,
                                              const std::vector<std::string>& goal_categories,
                                              double agent_radius = 0.2, double success_radius = 1.5) {
  if (n_episodes < 0 || seq_len <= 0) throw InvalidArgument("episode count and sequence length must be positive");
  if (n_episodes > 0 && worlds.empty()) throw GenerationError("no worlds to draw episodes from");
  std::vector<Mask> navigable;
  for (const World& w : worlds) navigable.push_back(w.navigable(agent_radius));
  std::vector<Episode> out;
  for (int e = 0; e < n_episodes; ++e) {
    const int wi = e % static_cast<int>(worlds.size());
    const World& world = worlds[wi];
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(e)}));
    std::vector<Cell> starts;
    for (std::size_t i = 0; i < navigable[wi].size(); ++i)
      if (navigable[wi][i]) starts.push_back(navigable[wi].cell(i));
    if (starts.empty()) throw GenerationError("world " + std::to_string(wi) + " has no navigable cell");
    const Cell start = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
    const Mask reach = reachable_set(navigable[wi], start);
    std::vector<std::string> eligible;
    for (const std::string& cat : goal_categories) {
      bool any = false;
      bool all = true;
      for (const WorldObject& o : world.objects) {
        if (o.label != cat) continue;
        any = true;
        all = all && instance_reachable(world, reach, o, success_radius);
      }
      if (any && all) eligible.push_back(cat);
    }
    if (static_cast<int>(eligible.size()) < seq_len)
      throw GenerationError("world " + std::to_string(wi) + " has only " + std::to_string(eligible.size()) +
                            " reachable goal categories, need " + std::to_string(seq_len));
    std::shuffle(eligible.begin(), eligible.end(), rng);
    Episode ep;
    ep.episode_id = e;
    ep.world_index = wi;
    ep.world_seed = world.seed;
    const GridGeometry g = world.geometry();
    ep.start = Pose2D{g.center_x(start.x), g.center_y(start.y),
                      std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng)};
    ep.goals.assign(eligible.begin(), eligible.begin() + seq_len);
    ep.seed = rng();
    out.push_back(std::move(ep));
  }
  return out;
}

inline nlohmann::json episode_to_json(const Episode& e) {
  return {{"episode_id", e.episode_id}, {"world_index", e.world_index}, {"world_seed", e.world_seed},
          {"start", {e.start.x, e.start.y, e.start.heading}}, {"goals", e.goals}, {"seed", e.seed}};
}

inline Episode episode_from_json(const nlohmann::json& j) {
  try {
    Episode e;
    e.episode_id = j.at("episode_id").get<long>();
    e.world_index = j.at("world_index").get<int>();
    e.world_seed = j.at("world_seed").get<std::uint64_t>();
    e.start = Pose2D{j.at("start").at(0).get<double>(), j.at("start").at(1).get<double>(),
                     j.at("start").at(2).get<double>()};
    e.goals = j.at("goals").get<std::vector<std::string>>();
    e.seed = j.at("seed").get<std::uint64_t>();
    if (e.goals.empty()) throw SchemaError("episode " + std::to_string(e.episode_id) + " has no goals");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("episode: ") + ex.what());
  }
}

struct Dataset {
  std::uint64_t seed = 0;
  Codebook codebook;
  std::vector<World> worlds;
  std::vector<Episode> episodes;
};

inline nlohmann::json dataset_to_json(const Dataset& d) {
  nlohmann::json j;
  j["format"] = "onemap-dataset-1";
  j["seed"] = d.seed;
  j["codebook"] = d.codebook.to_json();
  j["worlds"] = nlohmann::json::array();
  for (const World& w : d.worlds) j["worlds"].push_back(world_to_json(w));
  j["episodes"] = nlohmann::json::array();
  for (const Episode& e : d.episodes) j["episodes"].push_back(episode_to_json(e));
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset d;
  try {
    if (j.at("format").get<std::string>() != "onemap-dataset-1") throw SchemaError("unknown dataset format");
    d.seed = j.at("seed").get<std::uint64_t>();
    d.codebook = Codebook::from_json(j.at("codebook"));
    for (const auto& w : j.at("worlds")) d.worlds.push_back(world_from_json(w));
    for (const auto& e : j.at("episodes")) d.episodes.push_back(episode_from_json(e));
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("dataset: ") + ex.what());
  }
  for (const Episode& e : d.episodes) {
    if (e.world_index < 0 || e.world_index >= static_cast<int>(d.worlds.size()))
      throw SchemaError("episode " + std::to_string(e.episode_id) + " refers to a missing world");
    for (const auto& g : e.goals)
      if (!d.codebook.contains(g))
        throw SchemaError("episode " + std::to_string(e.episode_id) + " has goal '" + g + "' outside the codebook");
  }
  return d;
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

struct ExplorationParams {
  double tau_e = 0.3;  // fraction of the prior variance
  double tau_c = 0.3;
  double tau_sim = 0.35;
  double percentile = 5.0;
  int min_frontier = 3;
  bool consensus = true;
};

struct AgentParams {
  double radius = 0.2;
  double step_size = 0.25;
  double turn_deg = 30.0;
  double success_radius = 1.5;
  double approach_distance = 1.4;
  double snap_radius = 1.5;
  int step_budget = 500;
  bool initial_spin = true;
  bool replan_every_step = false;
};

struct EmbeddingParams {
  int dim = 32;
  double noise_sigma = 0.1;
  double distractor_overlap = 0.2;
  int patch_stride = 2;
};

struct PolicyParams {
  MappingParams mapping;
  ExplorationParams exploration;
  AgentParams agent;
  SensorParams sensor;
  DetectorParams detector;
  EmbeddingParams embedding;
  bool map_reuse = true;
};

struct ObjectResult {
  int index = 0;
  std::string label;
  bool found = false;
  double agent_path_length = 0.0;
  double oracle_path_length = 0.0;
  long steps = 0;
  std::string reason;  // success | misdetection | budget | exhausted
  int detections = 0;
  int rejected_detections = 0;
};

struct EpisodeResult {
  long episode_id = 0;
  int num_goals = 0;
  std::vector<ObjectResult> objects;
  std::string terminated_reason;
};

/// Optional per-episode logs: the goal trace, the replay log (one record per
/// action with the resulting pose) and, on request, the map as the episode
/// ended.
struct EpisodeTrace {
  std::vector<nlohmann::json> goals;
  std::vector<nlohmann::json> actions;
  bool keep_final_map = false;
  std::optional<MapState> final_map;
};

/// Patch-level label image sampled at patch centers.
inline Grid<std::string> patch_labels(const PosedObservation& obs, int stride) {
  const int hf = (obs.height() + stride - 1) / stride;
  const int wf = (obs.width() + stride - 1) / stride;
  Grid<std::string> out(wf, hf);
  for (int p = 0; p < hf; ++p)
    for (int q = 0; q < wf; ++q) {
      const int i = std::min(obs.height() - 1, static_cast<int>((p + 0.5) * stride));
      const int j = std::min(obs.width() - 1, static_cast<int>((q + 0.5) * stride));
      out(q, p) = obs.hit_labels(j, i);
    }
  return out;
}

namespace detail {

class EpisodeRunner {
 public:
  EpisodeRunner(const World& world, const Codebook& codebook, const Episode& episode, const PolicyParams& params,
                EpisodeTrace* trace)
      : world_(world),
        codebook_(codebook),
        ep_(episode),
        pp_(params),
        trace_(trace),
        geom_(world.geometry()),
        true_nav_(world.navigable(params.agent.radius)) {
    state_.pose = episode.start;
    detector_ = params.detector;
    detector_.seed = derive_seed(episode.seed, {3});
  }

  EpisodeResult run() {
    EpisodeResult result;
    result.episode_id = ep_.episode_id;
    result.num_goals = static_cast<int>(ep_.goals.size());
    for (std::size_t k = 0; k < ep_.goals.size(); ++k) {
      const bool fresh = k == 0 || !pp_.map_reuse;
      if (fresh) {
        map_ = create_map(world_.extent_x(), world_.extent_y(), 1.0 / world_.cell_size, codebook_.dim(),
                          pp_.mapping.prior_variance);
        occ_ = OccupancyGrid(map_.nx(), map_.ny(), Occupancy::kUnknown);
      } else {
        reset_search_layer(map_);
      }
      ObjectResult r = search(static_cast<int>(k), ep_.goals[k]);
      result.objects.push_back(r);
      if (!r.found) {
        result.terminated_reason = r.reason;
        break;
      }
    }
    if (result.terminated_reason.empty()) result.terminated_reason = "success";
    if (trace_ && trace_->keep_final_map)
      trace_->final_map = MapState{ep_.episode_id, static_cast<int>(result.objects.size()) - 1, map_, occ_, codebook_};
    return result;
  }

 private:
  enum class Mode { kExplore, kApproach };

  void observe() {
    obs_ = render_observation(world_, state_.pose, pp_.sensor, derive_seed(ep_.seed, {1, frame_}));
    const FeatureFrame features =
        synth_embed_frame(codebook_, patch_labels(obs_, pp_.embedding.patch_stride), derive_seed(ep_.seed, {2, frame_}));
    integrate_observation(map_, obs_, features, pp_.mapping);
    update_occupancy(occ_, obs_, geom_);
    ++frame_;
  }

  SubMaps submaps() const {
    const double prior = pp_.mapping.prior_variance;
    return derive_submaps(map_, pp_.exploration.tau_e * prior, pp_.exploration.tau_c * prior, occ_, pp_.agent.radius);
  }

  Cell agent_cell() const { return geom_.cell_of(state_.pose.x, state_.pose.y); }

  double distance_to(const Cell& c) const {
    return std::hypot(geom_.center_x(c.x) - state_.pose.x, geom_.center_y(c.y) - state_.pose.y);
  }

  bool within_success_radius(const std::string& label) const {
    for (const WorldObject& o : world_.objects) {
      if (o.label != label) continue;
      for (const Cell& c : o.cells)
        if (distance_to(c) <= pp_.agent.success_radius) return true;
    }
    return false;
  }

  bool path_valid(const Path& path, const Mask& nav) const {
    for (const Cell& c : path.cells)
      if (!nav[c]) return false;
    return true;
  }

  bool blacklisted(const Cell& c) const {
    for (const Cell& b : blacklist_)
      if (std::abs(b.x - c.x) <= 2 && std::abs(b.y - c.y) <= 2) return true;
    return false;
  }

  void log_action(int object, const char* kind) {
    if (!trace_) return;
    trace_->actions.push_back({{"episode", ep_.episode_id},
                               {"object", object},
                               {"step", state_.steps_taken},
                               {"action", kind},
                               {"pose", {state_.pose.x, state_.pose.y, state_.pose.heading}}});
  }

  // Moves along the current path, or first turns toward it when the next
  // stretch lies outside the central part of the view, so the agent only
  // walks into space it has just looked at.
  void move(int object) {
    const double inc = pp_.agent.turn_deg * std::numbers::pi / 180.0;
    for (const Cell& c : path_.cells) {
      const double dx = geom_.center_x(c.x) - state_.pose.x;
      const double dy = geom_.center_y(c.y) - state_.pose.y;
      if (std::hypot(dx, dy) < 0.5 * world_.cell_size) continue;
      const double diff = wrap_angle(std::atan2(dy, dx) - state_.pose.heading);
      if (std::abs(diff) > inc) {
        turn(object, diff > 0 ? inc : -inc);
        return;
      }
      break;
    }
    state_ = step_agent(world_, state_, path_, pp_.agent.step_size);
    log_action(object, "move");
  }

  void turn(int object, double angle) {
    state_ = turn_agent(state_, angle);
    log_action(object, angle > 0 ? "turn_left" : "turn_right");
  }

  // Queues the turns that bring the heading toward `target`.
  void face(const Cell& target) {
    const double want = std::atan2(geom_.center_y(target.y) - state_.pose.y, geom_.center_x(target.x) - state_.pose.x);
    const double diff = wrap_angle(want - state_.pose.heading);
    const double inc = pp_.agent.turn_deg * std::numbers::pi / 180.0;
    pending_turns_ = static_cast<int>(std::lround(std::abs(diff) / inc));
    turn_sign_ = diff >= 0 ? 1.0 : -1.0;
  }

  // Last-resort goal once no scored goal is left: the nearest navigable cell
  // bordering space that is neither observed nor known to be occupied. Sets
  // path_ on success.
  std::optional<NavGoal> boundary_goal(const SubMaps& sub, const Mask& nav) {
    const Cell here = agent_cell();
    const Cell src[] = {here};
    const auto costs = geodesic_costs(nav, src);
    std::optional<Cell> best;
    std::optional<Cell> look;
    std::optional<OctileCost> best_cost;
    for (std::size_t i = 0; i < nav.size(); ++i) {
      if (!costs[i] || blacklisted(nav.cell(i))) continue;
      if (best_cost && !(*costs[i] < *best_cost)) continue;
      const Cell c = nav.cell(i);
      for (const Cell& d : kNeighbors8) {
        const Cell nb{c.x + d.x, c.y + d.y};
        if (!nav.in_bounds(nb) || sub.observed[nb] || occ_[nb] != Occupancy::kUnknown) continue;
        best = c;
        look = nb;
        best_cost = costs[i];
        break;
      }
    }
    if (!best) return std::nullopt;
    try {
      path_ = astar(nav, here, *best, world_.cell_size, pp_.agent.snap_radius);
    } catch (const Unreachable&) {
      return std::nullopt;
    }
    NavGoal g;
    g.kind = GoalKind::kFrontier;
    g.target_cell = *best;
    g.look_at = *look;
    g.score = -1.0;
    g.support = {*best};
    return g;
  }

  // Plans toward the best ranked goal that admits a path. Returns false when
  // no goal is left.
  bool choose_goal(int object, const Grid<float>& sim, const SubMaps& sub, const Mask& nav) {
    std::vector<NavGoal> frontier_goals;
    for (const Frontier& f : extract_frontiers(sub, pp_.exploration.min_frontier))
      frontier_goals.push_back(make_frontier_goal(f, sim, sub));
    const auto clusters = cluster_high_similarity(sim, sub, pp_.exploration.tau_sim);
    std::vector<NavGoal> ranked;
    for (NavGoal& g : rank_goals(std::move(frontier_goals), clusters))
      if (!blacklisted(g.target_cell)) ranked.push_back(std::move(g));

    std::optional<std::size_t> selected;
    const Cell here = agent_cell();
    for (std::size_t n = 0; n < ranked.size() && !selected; ++n) {
      const NavGoal& g = ranked[n];
      const bool same = goal_ && goal_->kind == g.kind && goal_->target_cell == g.target_cell;
      if (same && !pp_.agent.replan_every_step && !path_.empty() && path_valid(path_, nav)) {
        selected = n;
        break;
      }
      try {
        Path p = astar(nav, here, g.target_cell, world_.cell_size, pp_.agent.snap_radius);
        path_ = std::move(p);
        selected = n;
      } catch (const Unreachable&) {
        blacklist_.push_back(g.target_cell);
      }
    }
    if (!selected) {
      if (auto fallback = boundary_goal(sub, nav)) {
        ranked.push_back(std::move(*fallback));
        selected = ranked.size() - 1;
      }
    }
    if (trace_) trace_->goals.push_back(goal_trace_record(ep_.episode_id, object, state_.steps_taken, ranked, selected));
    if (!selected) {
      goal_.reset();
      return false;
    }
    goal_ = ranked[*selected];
    return true;
  }

  ObjectResult search(int object, const std::string& label) {
    ObjectResult r;
    r.index = object;
    r.label = label;
    const std::vector<float> query = embed_text(codebook_, label);
    r.oracle_path_length =
        oracle_shortest_path(world_, true_nav_, agent_cell(), label, pp_.agent.success_radius);
    const double start_length = state_.path_length;
    const long start_steps = state_.steps_taken;
    const double inc = pp_.agent.turn_deg * std::numbers::pi / 180.0;

    Mode mode = Mode::kExplore;
    Cell approach_cell{};
    blacklist_.clear();
    goal_.reset();
    path_ = Path{};
    pending_turns_ = 0;
    int spin = pp_.agent.initial_spin ? static_cast<int>(std::lround(2.0 * std::numbers::pi / inc)) - 1 : 0;

    auto finish = [&](const std::string& reason) {
      r.agent_path_length = state_.path_length - start_length;
      r.steps = state_.steps_taken - start_steps;
      r.reason = reason;
      r.found = reason == "success";
      return r;
    };
    auto declare = [&]() { return finish(within_success_radius(label) ? "success" : "misdetection"); };

    observe();
    for (;;) {
      if (mode == Mode::kExplore) {
        if (const auto det = simulate_detection(world_, obs_, label, detector_, frame_ - 1)) {
          ++r.detections;
          bool accepted = true;
          if (pp_.exploration.consensus) {
            const Grid<float> sim = query_similarity(map_, query);
            accepted = consensus_filter(*det, sim, submaps(), pp_.exploration.percentile).accepted;
          }
          if (accepted) {
            mode = Mode::kApproach;
            approach_cell = det->cell;
            path_ = Path{};
            pending_turns_ = 0;
            spin = 0;
          } else {
            ++r.rejected_detections;
          }
        }
      }
      if (mode == Mode::kApproach && distance_to(approach_cell) <= pp_.agent.approach_distance) return declare();
      if (state_.steps_taken - start_steps >= pp_.agent.step_budget) return finish("budget");

      if (spin > 0) {
        --spin;
        turn(object, inc);
        observe();
        continue;
      }
      if (pending_turns_ > 0) {
        --pending_turns_;
        turn(object, turn_sign_ * inc);
        observe();
        continue;
      }

      const SubMaps sub = submaps();
      Mask nav = sub.navigable;
      nav[agent_cell()] = 1;

      if (mode == Mode::kApproach) {
        if (path_.empty() || !path_valid(path_, nav) || pp_.agent.replan_every_step) {
          try {
            path_ = astar(nav, agent_cell(), approach_cell, world_.cell_size, pp_.agent.snap_radius);
          } catch (const Error&) {
            return declare();
          }
          const Cell last = path_.cells.back();
          if (path_.cells.size() == 1 && distance_to(last) < 1e-9) return declare();
        }
        move(object);
        observe();
        continue;
      }

      const Grid<float> sim = query_similarity(map_, query);
      if (!choose_goal(object, sim, sub, nav)) {
        return finish("exhausted");
      }
      if (path_.cells.size() == 1 && distance_to(path_.cells.front()) < 1e-9) {
        // already standing on the goal: look toward it, then pick another
        arrive();
        path_ = Path{};
        continue;
      }
      move(object);
      if (path_.empty()) arrive();
      observe();
    }
  }

  void arrive() {
    if (!goal_) return;
    blacklist_.push_back(goal_->target_cell);
    face(goal_->look_at);
    goal_.reset();
  }

  const World& world_;
  const Codebook& codebook_;
  const Episode& ep_;
  const PolicyParams& pp_;
  EpisodeTrace* trace_;
  GridGeometry geom_;
  Mask true_nav_;
  DetectorParams detector_;

  BeliefMap map_;
  OccupancyGrid occ_;
  PosedObservation obs_;
  AgentState state_;
  std::uint64_t frame_ = 0;

  std::optional<NavGoal> goal_;
  Path path_;
  std::vector<Cell> blacklist_;
  int pending_turns_ = 0;
  double turn_sign_ = 1.0;
};

}  // namespace detail

/// Runs one multi-object episode with the full mapping / exploration /
/// detection loop. Failures are recorded in the result, never thrown.
inline EpisodeResult run_episode(const World& world, const Codebook& codebook, const Episode& episode,
                                 const PolicyParams& params, EpisodeTrace* trace = nullptr) {
  detail::EpisodeRunner runner(world, codebook, episode, params, trace);
  return runner.run();
}

/// Runs every episode of a dataset on up to `jobs` threads. Results are in
/// dataset order whatever the completion order. A `traces` vector already
/// sized to the episode count is filled in place, so per-episode flags set by
/// the caller survive.
inline std::vector<EpisodeResult> run_episodes(const Dataset& data, const PolicyParams& params, int jobs = 1,
                                               std::vector<EpisodeTrace>* traces = nullptr) {
  const std::size_t n = data.episodes.size();
  std::vector<EpisodeResult> results(n);
  if (traces && traces->size() != n) traces->assign(n, EpisodeTrace{});
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const Episode& ep = data.episodes[i];
        results[i] = run_episode(data.worlds.at(ep.world_index), data.codebook, ep, params,
                                 traces ? &(*traces)[i] : nullptr);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(n, 1))));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double sr = 0.0;
  double spl = 0.0;
  double pr = 0.0;
  double ppl = 0.0;
  std::size_t episodes = 0;
};

namespace detail {

inline double path_ratio(double oracle, double agent) {
  const double denom = std::max(agent, oracle);
  return denom > 0.0 ? oracle / denom : 1.0;
}

}  // namespace detail

struct EpisodeScores {
  double success = 0.0;
  double spl = 0.0;
  double pr = 0.0;
  double ppl = 0.0;
};

inline EpisodeScores score_episode(const EpisodeResult& r) {
  if (r.num_goals <= 0) throw InvalidArgument("episode result without goals");
  EpisodeScores s;
  int found = 0;
  double oracle = 0.0;
  double agent = 0.0;
  double oracle_found = 0.0;
  double agent_found = 0.0;
  for (const ObjectResult& o : r.objects) {
    oracle += o.oracle_path_length;
    agent += o.agent_path_length;
    if (!o.found) continue;
    ++found;
    oracle_found += o.oracle_path_length;
    agent_found += o.agent_path_length;
  }
  const bool success = found == r.num_goals && static_cast<int>(r.objects.size()) == r.num_goals;
  s.success = success ? 1.0 : 0.0;
  s.spl = success ? detail::path_ratio(oracle, agent) : 0.0;
  s.pr = double(found) / r.num_goals;
  s.ppl = found > 0 ? s.pr * detail::path_ratio(oracle_found, agent_found) : 0.0;
  return s;
}

inline Metrics compute_metrics(std::span<const EpisodeResult> results) {
  if (results.empty()) throw InvalidArgument("metrics need at least one episode");
  Metrics m;
  for (const EpisodeResult& r : results) {
    const EpisodeScores s = score_episode(r);
    m.sr += s.success;
    m.spl += s.spl;
    m.pr += s.pr;
    m.ppl += s.ppl;
  }
  const double n = double(results.size());
  m.sr /= n;
  m.spl /= n;
  m.pr /= n;
  m.ppl /= n;
  m.episodes = results.size();
  return m;
}

struct IndexBreakdown {
  int index = 0;        // 0-based object index
  std::size_t attempts = 0;  // episodes whose earlier objects were all found
  double spl = 0.0;     // mean per-object SPL over those episodes
};

/// Per-object SPL for each goal index, conditioned on every earlier object
/// of the episode having been found.
inline std::vector<IndexBreakdown> spl_by_object_index(std::span<const EpisodeResult> results) {
  int max_goals = 0;
  for (const auto& r : results) max_goals = std::max(max_goals, r.num_goals);
  std::vector<IndexBreakdown> out(max_goals);
  for (int k = 0; k < max_goals; ++k) out[k].index = k;
  for (const auto& r : results)
    for (const ObjectResult& o : r.objects) {
      IndexBreakdown& b = out[o.index];
      ++b.attempts;
      if (o.found) b.spl += detail::path_ratio(o.oracle_path_length, o.agent_path_length);
    }
  for (auto& b : out)
    if (b.attempts > 0) b.spl /= double(b.attempts);
  return out;
}

inline nlohmann::json result_log_record(const EpisodeResult& r, const ObjectResult& o) {
  return {{"episode", r.episode_id},
          {"object", o.index},
          {"num_goals", r.num_goals},
          {"label", o.label},
          {"found", o.found},
          {"reason", o.reason},
          {"agent_path_length", o.agent_path_length},
          {"oracle_path_length", o.oracle_path_length},
          {"steps", o.steps},
          {"detections", o.detections},
          {"rejected_detections", o.rejected_detections}};
}

/// Line-delimited result log: one record per (episode, object) in episode
/// order.
inline std::string result_log(std::span<const EpisodeResult> results) {
  std::string out;
  for (const auto& r : results)
    for (const auto& o : r.objects) out += result_log_record(r, o).dump() + "\n";
  return out;
}

/// Inverse of result_log.
inline std::vector<EpisodeResult> parse_result_log(const std::string& text) {
  std::vector<EpisodeResult> out;
  std::size_t pos = 0;
  long line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const long id = j.at("episode").get<long>();
      if (out.empty() || out.back().episode_id != id) {
        out.emplace_back();
        out.back().episode_id = id;
        out.back().num_goals = j.at("num_goals").get<int>();
      }
      ObjectResult o;
      o.index = j.at("object").get<int>();
      o.label = j.at("label").get<std::string>();
      o.found = j.at("found").get<bool>();
      o.reason = j.at("reason").get<std::string>();
      o.agent_path_length = j.at("agent_path_length").get<double>();
      o.oracle_path_length = j.at("oracle_path_length").get<double>();
      o.steps = j.at("steps").get<long>();
      o.detections = j.at("detections").get<int>();
      o.rejected_detections = j.at("rejected_detections").get<int>();
      out.back().objects.push_back(o);
      out.back().terminated_reason = o.found ? "success" : o.reason;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("result log line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    ++line_no;
  }
  return out;
}

/// Structured summary: overall metrics, per-index SPL and termination counts.
inline nlohmann::json make_report(std::span<const EpisodeResult> results) {
  nlohmann::json j;
  j["episodes"] = results.size();
  if (results.empty()) {
    j["empty"] = true;
    j["metrics"] = nullptr;
    j["spl_by_object"] = nlohmann::json::array();
    return j;
  }
  j["empty"] = false;
  const Metrics m = compute_metrics(results);
  j["metrics"] = {{"sr", m.sr}, {"spl", m.spl}, {"pr", m.pr}, {"ppl", m.ppl}};
  j["spl_by_object"] = nlohmann::json::array();
  for (const auto& b : spl_by_object_index(results))
    j["spl_by_object"].push_back({{"index", b.index}, {"attempts", b.attempts}, {"spl", b.spl}});
  std::map<std::string, int> reasons;
  for (const auto& r : results) ++reasons[r.terminated_reason];
  j["terminations"] = reasons;
  return j;
}

}  // namespace onemap
