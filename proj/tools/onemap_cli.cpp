// onemap: dataset generation, closed-loop runs, map snapshots and oracle
// path lengths.
//
// exit codes: 0 success, 1 usage or config error, 2 data error

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "onemap/onemap.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace onemap;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("io-error", "failed writing " + path.string());
}

Config resolve_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  Config c;
  try {
    if (!path.empty()) c = load_config(path);
    apply_env_overrides(c, onemap_environment(environ));
  } catch (const SchemaError& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const ParseError& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const NotFound& e) {
    throw UsageError(e.what());
  }
  if (seed) c.seed = *seed;
  return c;
}

int default_jobs() {
  if (const char* v = std::getenv("ONEMAP_JOBS")) {
    try {
      return std::max(1, std::stoi(v));
    } catch (const std::exception&) {
      throw UsageError("ONEMAP_JOBS must be an integer");
    }
  }
  return 1;
}

Dataset load_dataset(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("dataset " + path + ": " + e.what());
  }
  return dataset_from_json(j);
}

int cmd_gen(const Config& c, const std::string& out) {
  const Dataset d = generate_dataset(c);
  write_file(out, dataset_to_json(d).dump(1) + "\n");
  std::cout << "worlds " << d.worlds.size() << "\nepisodes " << d.episodes.size() << "\nwritten " << out << "\n";
  return 0;
}

struct RunOptions {
  std::string dataset;
  std::string out = "run";
  int jobs = 1;
  bool chart = false;
  bool trace = false;
  std::string maps_dir;
};

int cmd_run(const Config& c, const RunOptions& o) {
  const Dataset d = load_dataset(o.dataset);
  std::vector<EpisodeTrace> traces;
  const bool want_traces = o.trace || !o.maps_dir.empty();
  if (want_traces) {
    traces.assign(d.episodes.size(), EpisodeTrace{});
    for (auto& t : traces) t.keep_final_map = !o.maps_dir.empty();
  }
  const auto results = run_episodes(d, c.policy, o.jobs, want_traces ? &traces : nullptr);

  const fs::path out(o.out);
  fs::create_directories(out);
  write_file(out / "results.jsonl", result_log(results));
  const nlohmann::json report = make_report(results);
  write_file(out / "report.json", report.dump(2) + "\n");
  if (o.chart) {
    std::vector<double> bars;
    for (const auto& b : report["spl_by_object"]) bars.push_back(b["spl"].get<double>());
    write_pgm(bar_chart(bars), (out / "spl_by_object.pgm").string());
  }
  if (o.trace) {
    std::string goals, actions;
    for (const auto& t : traces) {
      for (const auto& g : t.goals) goals += g.dump() + "\n";
      for (const auto& a : t.actions) actions += a.dump() + "\n";
    }
    write_file(out / "goal_trace.jsonl", goals);
    write_file(out / "actions.jsonl", actions);
  }
  if (!o.maps_dir.empty()) {
    fs::create_directories(o.maps_dir);
    for (const auto& t : traces)
      if (t.final_map)
        save_map_state(*t.final_map,
                       (fs::path(o.maps_dir) / ("episode_" + std::to_string(t.final_map->episode_id) + ".map")).string());
  }
  if (report["empty"].get<bool>()) {
    std::cout << "episodes 0 (empty dataset)\n";
  } else {
    const auto& m = report["metrics"];
    std::cout << "episodes " << results.size() << "\nsr " << m["sr"] << "\nspl " << m["spl"] << "\npr " << m["pr"]
              << "\nppl " << m["ppl"] << "\n";
  }
  return 0;
}

int cmd_snapshot(const Config& c, const std::string& map_path, const std::string& query, const std::string& layer,
                 const std::string& out) {
  const MapState s = load_map_state(map_path);
  const double prior = s.map.prior_variance();
  const auto& e = c.policy.exploration;
  auto sub = [&] {
    return derive_submaps(s.map, e.tau_e * prior, e.tau_c * prior, s.occupancy, c.policy.agent.radius);
  };
  if (layer == "similarity") {
    if (query.empty()) throw UsageError("--query is required for the similarity layer");
    const auto q = embed_text(s.codebook, query);
    write_pgm(to_gray(query_similarity(s.map, q), -1.0, 1.0), out);
  } else if (layer == "variance") {
    write_pgm(to_gray(s.map.sigma2(), 0.0, prior), out);
  } else if (layer == "search_variance") {
    write_pgm(to_gray(s.map.sigma2_search(), 0.0, prior), out);
  } else if (layer == "O") {
    write_pgm(mask_to_gray(sub().observed), out);
  } else if (layer == "E") {
    write_pgm(mask_to_gray(sub().explored), out);
  } else if (layer == "C") {
    write_pgm(mask_to_gray(sub().searched), out);
  } else if (layer == "N") {
    write_pgm(mask_to_gray(sub().navigable), out);
  } else {
    throw UsageError("unknown layer: " + layer);
  }
  const nlohmann::json meta{{"layer", layer},
                            {"query", query.empty() ? nlohmann::json(nullptr) : nlohmann::json(query)},
                            {"extent_x", s.map.extent_x()},
                            {"extent_y", s.map.extent_y()},
                            {"resolution", s.map.resolution()},
                            {"width", s.map.nx()},
                            {"height", s.map.ny()},
                            {"episode", s.episode_id},
                            {"object", s.object_index}};
  const std::string sidecar = fs::path(out).replace_extension(".json").string();
  write_file(sidecar, meta.dump(2) + "\n");
  std::cout << "written " << out << "\nwritten " << sidecar << "\n";
  return 0;
}

int cmd_oracle(const Config& c, const std::string& dataset, const std::string& out) {
  const Dataset d = load_dataset(dataset);
  std::string text;
  for (const Episode& ep : d.episodes) {
    const World& w = d.worlds.at(ep.world_index);
    const Mask nav = w.navigable(c.policy.agent.radius);
    Cell from = w.geometry().cell_of(ep.start.x, ep.start.y);
    for (std::size_t k = 0; k < ep.goals.size(); ++k) {
      nlohmann::json rec{{"episode", ep.episode_id}, {"object", k}, {"label", ep.goals[k]}};
      try {
        rec["oracle_path_length"] = oracle_shortest_path(w, nav, from, ep.goals[k], c.policy.agent.success_radius);
      } catch (const Unreachable&) {
        rec["oracle_path_length"] = nullptr;
      }
      // next leg starts where an optimal agent would stop
      const Mask region = goal_region(w, ep.goals[k], c.policy.agent.success_radius);
      Mask leg_nav = nav;
      leg_nav[from] = 1;
      const Cell src[] = {from};
      const auto costs = geodesic_costs(leg_nav, src);
      std::optional<OctileCost> best;
      for (std::size_t i = 0; i < region.size(); ++i)
        if (region[i] && costs[i] && (!best || *costs[i] < *best)) {
          best = costs[i];
          from = region.cell(i);
        }
      text += rec.dump() + "\n";
    }
  }
  if (out.empty())
    std::cout << text;
  else
    write_file(out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"onemap: multi-object search on a persistent open-vocabulary belief map"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  std::string out;
  app.add_option("--config", config_path, "JSON config (comments allowed)");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--jobs", jobs, "worker threads for run (default ONEMAP_JOBS or 1)")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output path");

  auto* gen = app.add_subcommand("gen", "generate worlds and episodes");
  auto* run = app.add_subcommand("run", "run every episode of a dataset");
  RunOptions ro;
  run->add_option("--dataset", ro.dataset, "dataset written by gen")->required();
  run->add_flag("--chart", ro.chart, "also write the per-object SPL bar chart");
  run->add_flag("--trace", ro.trace, "also write goal and action traces");
  run->add_option("--maps-dir", ro.maps_dir, "save each episode's final map state here");
  auto* snap = app.add_subcommand("snapshot", "render a layer of a saved map state");
  std::string map_path, query, layer = "similarity";
  snap->add_option("--map", map_path, "map state file")->required();
  snap->add_option("--query", query, "text query for the similarity layer");
  snap->add_option("--layer", layer, "similarity, variance, search_variance, O, E, C or N");
  auto* oracle = app.add_subcommand("oracle", "print oracle path lengths per episode and object");
  std::string oracle_dataset;
  oracle->add_option("--dataset", oracle_dataset, "dataset written by gen")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const Config c = resolve_config(config_path, seed);
    if (*gen) return cmd_gen(c, out.empty() ? "dataset.json" : out);
    if (*run) {
      ro.out = out.empty() ? "run" : out;
      ro.jobs = jobs > 0 ? jobs : default_jobs();
      return cmd_run(c, ro);
    }
    if (*snap) return cmd_snapshot(c, map_path, query, layer, out.empty() ? "snapshot.pgm" : out);
    if (*oracle) return cmd_oracle(c, oracle_dataset, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
