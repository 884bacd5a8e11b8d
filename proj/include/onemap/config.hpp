#pragma once

// Run configuration: every tunable of mapping, exploration, agent, sensor,
// detector, world generation and dataset sampling, loaded from JSON (comments
// allowed), range-checked, with ONEMAP_<SECTION>__<KEY> environment overrides.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "onemap/benchmark.hpp"
#include "onemap/error.hpp"
#include "onemap/simulator.hpp"

namespace onemap {

struct DatasetParams {
  int n_worlds = 10;
  int n_episodes = 100;
  int seq_len = 3;
  std::vector<std::string> goal_categories = default_goal_categories();
};

struct Config {
  std::uint64_t seed = 1;
  PolicyParams policy;
  WorldParams world;
  DatasetParams dataset;
};

namespace detail {

struct Field {
  std::function<nlohmann::json()> get;
  std::function<void(const nlohmann::json&)> set;
  std::function<std::string()> check;  // empty string when valid
};

using Section = std::vector<std::pair<std::string, Field>>;

inline std::string range_text(double lo, double hi, bool lo_open, bool hi_open) {
  std::ostringstream os;
  os << (lo_open ? "(" : "[") << lo << ", " << hi << (hi_open ? ")" : "]");
  return os.str();
}

inline Field real(double& v, double lo, double hi, bool lo_open = false, bool hi_open = false) {
  return {[&v] { return nlohmann::json(v); },
          [&v](const nlohmann::json& j) {
            if (!j.is_number()) throw SchemaError("expected a number");
            v = j.get<double>();
          },
          [&v, lo, hi, lo_open, hi_open]() -> std::string {
            const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
            return ok ? std::string() : "must lie in " + range_text(lo, hi, lo_open, hi_open);
          }};
}

inline Field integer(int& v, int lo, int hi) {
  return {[&v] { return nlohmann::json(v); },
          [&v](const nlohmann::json& j) {
            if (!j.is_number_integer()) throw SchemaError("expected an integer");
            v = j.get<int>();
          },
          [&v, lo, hi]() -> std::string {
            return v >= lo && v <= hi ? std::string() : "must lie in " + range_text(lo, hi, false, false);
          }};
}

inline Field boolean(bool& v) {
  return {[&v] { return nlohmann::json(v); },
          [&v](const nlohmann::json& j) {
            if (!j.is_boolean()) throw SchemaError("expected true or false");
            v = j.get<bool>();
          },
          [] { return std::string(); }};
}

inline Field choice(std::string& v, std::vector<std::string> allowed) {
  return {[&v] { return nlohmann::json(v); },
          [&v](const nlohmann::json& j) {
            if (!j.is_string()) throw SchemaError("expected a string");
            v = j.get<std::string>();
          },
          [&v, allowed]() -> std::string {
            for (const auto& a : allowed)
              if (a == v) return {};
            std::string msg = "must be one of";
            for (const auto& a : allowed) msg += " " + a;
            return msg;
          }};
}

inline Field labels(std::vector<std::string>& v) {
  return {[&v] { return nlohmann::json(v); },
          [&v](const nlohmann::json& j) {
            if (!j.is_array()) throw SchemaError("expected a list of strings");
            std::vector<std::string> out;
            for (const auto& e : j) {
              if (!e.is_string()) throw SchemaError("expected a list of strings");
              out.push_back(e.get<std::string>());
            }
            v = std::move(out);
          },
          [&v]() -> std::string { return v.empty() ? "must not be empty" : std::string(); }};
}

// The variance form is an enum in the library; it travels as text here.
inline Field variance_form(FeatureVarianceForm& v) {
  return {[&v] {
            return nlohmann::json(v == FeatureVarianceForm::kHalfErrorSquared ? "half_error_squared"
                                                                               : "squared_error_half");
          },
          [&v](const nlohmann::json& j) {
            if (!j.is_string()) throw SchemaError("expected a string");
            const auto s = j.get<std::string>();
            if (s == "half_error_squared")
              v = FeatureVarianceForm::kHalfErrorSquared;
            else if (s == "squared_error_half")
              v = FeatureVarianceForm::kSquaredErrorHalf;
            else
              throw SchemaError("must be half_error_squared or squared_error_half");
          },
          [] { return std::string(); }};
}

inline Field replan(bool& every_step) {
  return {[&every_step] { return nlohmann::json(every_step ? "every_step" : "on_change"); },
          [&every_step](const nlohmann::json& j) {
            if (!j.is_string()) throw SchemaError("expected a string");
            const auto s = j.get<std::string>();
            if (s != "every_step" && s != "on_change") throw SchemaError("must be on_change or every_step");
            every_step = s == "every_step";
          },
          [] { return std::string(); }};
}

inline std::map<std::string, Section> bind(Config& c) {
  auto& m = c.policy.mapping;
  auto& e = c.policy.exploration;
  auto& a = c.policy.agent;
  auto& s = c.policy.sensor;
  auto& d = c.policy.detector;
  auto& em = c.policy.embedding;
  auto& w = c.world;
  auto& ds = c.dataset;
  constexpr double big = 1e9;
  std::map<std::string, Section> out;
  out["mapping"] = {
      {"prior_variance", real(m.prior_variance, 0, big, true)},
      {"eps_var", real(m.eps_var, 0, 1, true)},
      {"d_opt", real(m.d_opt, 0, 100, true)},
      {"p", real(m.p, 0, 10)},
      {"truncation", real(m.truncation, 0, 10, true)},
      {"min_kernel_radius", real(m.min_kernel_radius, 0, 100)},
      {"variance_form", variance_form(m.variance_form)},
      {"literal_variance_weights", boolean(m.literal_variance_weights)},
      {"coverage_scaled_variance", boolean(m.coverage_scaled_variance)},
  };
  out["embedding"] = {
      {"dim", integer(em.dim, 2, 4096)},
      {"noise_sigma", real(em.noise_sigma, 0, 10)},
      {"distractor_overlap", real(em.distractor_overlap, 0, 1, false, true)},
      {"patch_stride", integer(em.patch_stride, 1, 64)},
  };
  out["exploration"] = {
      {"tau_e", real(e.tau_e, 0, 1, true, true)},
      {"tau_c", real(e.tau_c, 0, 1, true, true)},
      {"tau_sim", real(e.tau_sim, -1, 1, true, true)},
      {"percentile", real(e.percentile, 0, 100, true, true)},
      {"min_frontier", integer(e.min_frontier, 1, 1000)},
      {"consensus", boolean(e.consensus)},
  };
  out["agent"] = {
      {"radius", real(a.radius, 0, 10)},
      {"step_size", real(a.step_size, 0, 10, true)},
      {"turn_deg", real(a.turn_deg, 0, 180, true)},
      {"success_radius", real(a.success_radius, 0, 100, true)},
      {"approach_distance", real(a.approach_distance, 0, 100)},
      {"snap_radius", real(a.snap_radius, 0, 100)},
      {"step_budget", integer(a.step_budget, 1, 1000000)},
      {"initial_spin", boolean(a.initial_spin)},
      {"replan", replan(a.replan_every_step)},
      {"map_reuse", boolean(c.policy.map_reuse)},
  };
  out["sensor"] = {
      {"width", integer(s.width, 8, 4096)},
      {"height", integer(s.height, 1, 4096)},
      {"hfov_deg", real(s.hfov_deg, 0, 180, true, true)},
      {"max_range", real(s.max_range, 0, 1000, true)},
      {"camera_height", real(s.camera_height, 0, 100, true)},
      {"depth_noise", real(s.depth_noise, 0, 10)},
  };
  out["detector"] = {
      {"tp_range", real(d.tp_range, 0, 1000)},
      {"tp_rate", real(d.tp_rate, 0, 1)},
      {"fp_rate", real(d.fp_rate, 0, 1)},
  };
  out["world"] = {
      {"kind", choice(w.kind, {"rooms", "single_room", "corridor"})},
      {"rooms_x", integer(w.rooms_x, 1, 64)},
      {"rooms_y", integer(w.rooms_y, 1, 64)},
      {"room_size", real(w.room_size, 0, 1000, true)},
      {"corridor_length", real(w.corridor_length, 0, 1000, true)},
      {"corridor_width", real(w.corridor_width, 0, 1000, true)},
      {"cell_size", real(w.cell_size, 0, 10, true)},
      {"door_width", real(w.door_width, 0, 100, true)},
      {"extra_door_prob", real(w.extra_door_prob, 0, 1)},
      {"objects_per_room", integer(w.objects_per_room, 0, 100)},
      {"co_location_bias", real(w.co_location_bias, 0, 1)},
  };
  out["dataset"] = {
      {"n_worlds", integer(ds.n_worlds, 1, 100000)},
      {"n_episodes", integer(ds.n_episodes, 0, 10000000)},
      {"seq_len", integer(ds.seq_len, 1, 100)},
      {"goal_categories", labels(ds.goal_categories)},
  };
  return out;
}

inline Field* find_field(std::map<std::string, Section>& b, const std::string& section, const std::string& key) {
  auto it = b.find(section);
  if (it == b.end()) return nullptr;
  for (auto& [k, f] : it->second)
    if (k == key) return &f;
  return nullptr;
}

}  // namespace detail

/// Throws SchemaError naming the first out-of-range field.
inline void validate(Config& c) {
  auto b = detail::bind(c);
  for (auto& [section, fields] : b)
    for (auto& [key, f] : fields)
      if (auto msg = f.check(); !msg.empty()) throw SchemaError(section + "." + key + " " + msg);
  // the agent must fit through a door and the world agent radius follows the agent
  c.world.agent_radius = c.policy.agent.radius;
}

inline nlohmann::json config_to_json(const Config& config) {
  Config c = config;
  auto b = detail::bind(c);
  nlohmann::json j;
  j["seed"] = c.seed;
  for (auto& [section, fields] : b)
    for (auto& [key, f] : fields) j[section][key] = f.get();
  return j;
}

/// Builds a config from defaults overlaid with `j`. Unknown sections or keys
/// and out-of-range values are rejected.
inline Config config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("config must be an object");
  Config c;
  auto b = detail::bind(c);
  for (const auto& [section, value] : j.items()) {
    if (section == "seed") {
      if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<long long>() >= 0))
        throw SchemaError("seed must be a non-negative integer");
      c.seed = value.get<std::uint64_t>();
      continue;
    }
    if (!b.count(section)) throw SchemaError("unknown config section: " + section);
    if (!value.is_object()) throw SchemaError("config section " + section + " must be an object");
    for (const auto& [key, v] : value.items()) {
      detail::Field* f = detail::find_field(b, section, key);
      if (!f) throw SchemaError("unknown config key: " + section + "." + key);
      try {
        f->set(v);
      } catch (const SchemaError& e) {
        throw SchemaError(section + "." + key + ": " + e.what());
      } catch (const nlohmann::json::exception& e) {
        throw SchemaError(section + "." + key + ": " + e.what());
      }
    }
  }
  validate(c);
  return c;
}

inline nlohmann::json parse_json_with_comments(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(parse_json_with_comments(ss.str(), path));
}

inline void save_config(const Config& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("io-error", "cannot write " + path);
  out << config_to_json(c).dump(2) << "\n";
}

/// Applies overrides of the form ONEMAP_SEED=<n> and
/// ONEMAP_<SECTION>__<KEY>=<value>, where the value is read as JSON when it
/// parses and as a plain string otherwise. Names are case-insensitive.
/// ONEMAP_JOBS is left to the caller.
inline void apply_env_overrides(Config& c, const std::vector<std::pair<std::string, std::string>>& env) {
  nlohmann::json j = config_to_json(c);
  bool touched = false;
  for (const auto& [name, raw] : env) {
    if (name.rfind("ONEMAP_", 0) != 0 || name == "ONEMAP_JOBS") continue;
    std::string rest = name.substr(7);
    for (char& ch : rest) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    if (rest == "seed") {
      j["seed"] = value;
      touched = true;
      continue;
    }
    const auto sep = rest.find("__");
    if (sep == std::string::npos) throw SchemaError("malformed override variable: " + name);
    const std::string section = rest.substr(0, sep);
    const std::string key = rest.substr(sep + 2);
    if (!j.contains(section) || !j[section].contains(key)) throw SchemaError("override names unknown key: " + name);
    j[section][key] = value;
    touched = true;
  }
  if (touched) c = config_from_json(j);
}

inline std::vector<std::pair<std::string, std::string>> onemap_environment(char** envp) {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = envp; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    if (kv.rfind("ONEMAP_", 0) == 0) out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return out;
}

inline bool operator==(const Config& a, const Config& b) { return config_to_json(a) == config_to_json(b); }

/// Codebook over every object label the configured room types can produce.
inline Codebook make_codebook(const Config& c) {
  const auto& em = c.policy.embedding;
  return Codebook(object_vocabulary(c.world.room_types), em.dim, em.distractor_overlap, em.noise_sigma,
                  derive_seed(c.seed, {0xc0de}));
}

/// Generates the worlds and episodes of a dataset. World i is drawn from
/// seed derive(seed, i); worlds that cannot host a full goal sequence are
/// skipped and replaced by the next candidate seed.
inline Dataset generate_dataset(const Config& c) {
  Dataset d;
  d.seed = c.seed;
  d.codebook = make_codebook(c);
  for (const auto& g : c.dataset.goal_categories)
    if (!d.codebook.contains(g)) throw GenerationError("goal category '" + g + "' is not an object label");
  const int max_tries = 50 * c.dataset.n_worlds + 50;
  for (int attempt = 0; static_cast<int>(d.worlds.size()) < c.dataset.n_worlds; ++attempt) {
    if (attempt >= max_tries) throw GenerationError("could not generate enough feasible worlds");
    const std::uint64_t ws = derive_seed(c.seed, {0x3011d, static_cast<std::uint64_t>(attempt)});
    World w;
    try {
      w = generate_world(c.world, ws);
      generate_episodes({w}, 1, c.dataset.seq_len, ws, c.dataset.goal_categories, c.policy.agent.radius,
                        c.policy.agent.success_radius);
    } catch (const GenerationError&) {
      continue;
    }
    d.worlds.push_back(std::move(w));
  }
  d.episodes = generate_episodes(d.worlds, c.dataset.n_episodes, c.dataset.seq_len, derive_seed(c.seed, {0xe9}),
                                 c.dataset.goal_categories, c.policy.agent.radius, c.policy.agent.success_radius);
  return d;
}

}  // namespace onemap
