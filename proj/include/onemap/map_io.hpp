#pragma once

// Saved map states: a belief map, the occupancy grid built alongside it and
// the codebook that gives text queries their vectors.
//
// Layout:
//   ONEMAP-MAP-STATE 1\n
//   one line of JSON metadata (extent, resolution, dim, prior variance,
//   episode, object index, codebook)\n
//   END\n
//   f32 features[ny*nx*f]   row-major cells, channel fastest
//   f32 sigma2[ny*nx]
//   f32 sigma2_search[ny*nx]
//   u8  observed[ny*nx]
//   u8  occupancy[ny*nx]    0 unknown, 1 free, 2 occupied
// All numbers little-endian.

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "onemap/belief_map.hpp"
#include "onemap/embedding.hpp"
#include "onemap/error.hpp"
#include "onemap/exploration.hpp"
#include "onemap/frame_io.hpp"

namespace onemap {

struct MapState {
  long episode_id = -1;
  int object_index = -1;
  BeliefMap map;
  OccupancyGrid occupancy;
  Codebook codebook;
};

inline void save_map_state(const MapState& s, const std::string& path) {
  const BeliefMap& m = s.map;
  nlohmann::json meta{{"extent_x", m.extent_x()},
                      {"extent_y", m.extent_y()},
                      {"resolution", m.resolution()},
                      {"dim", m.dim()},
                      {"prior_variance", m.prior_variance()},
                      {"episode", s.episode_id},
                      {"object", s.object_index},
                      {"codebook", s.codebook.to_json()}};
  std::string blob = "ONEMAP-MAP-STATE 1\n" + meta.dump() + "\nEND\n";
  for (float v : m.features()) detail::put_le(blob, v);
  for (float v : m.sigma2().data()) detail::put_le(blob, v);
  for (float v : m.sigma2_search().data()) detail::put_le(blob, v);
  for (std::uint8_t v : m.observed().data()) detail::put_le(blob, v);
  for (Occupancy o : s.occupancy.data()) detail::put_le(blob, static_cast<std::uint8_t>(o));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", "cannot open " + path + " for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("io-error", "failed writing " + path);
}

inline MapState load_map_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("map state not found: " + path);
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string magic = "ONEMAP-MAP-STATE 1\n";
  if (blob.compare(0, magic.size(), magic) != 0) throw ParseError("not a map state file (bad magic)");
  const std::size_t meta_end = blob.find('\n', magic.size());
  if (meta_end == std::string::npos || blob.compare(meta_end + 1, 4, "END\n") != 0)
    throw ParseError("map state header is not terminated by END");

  MapState s;
  try {
    const auto meta = nlohmann::json::parse(blob.substr(magic.size(), meta_end - magic.size()));
    s.map = BeliefMap(meta.at("extent_x").get<double>(), meta.at("extent_y").get<double>(),
                      meta.at("resolution").get<double>(), meta.at("dim").get<int>(),
                      meta.at("prior_variance").get<double>());
    s.episode_id = meta.at("episode").get<long>();
    s.object_index = meta.at("object").get<int>();
    s.codebook = Codebook::from_json(meta.at("codebook"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("map state header: ") + e.what());
  }
  if (s.codebook.dim() != s.map.dim()) throw SchemaError("map state codebook dimension differs from the map");

  const std::size_t start = meta_end + 5;
  detail::LeReader r(blob.data() + start, blob.size() - start, 0);
  for (float& v : s.map.features()) v = r.get<float>();
  for (float& v : s.map.sigma2().data()) v = r.get<float>();
  for (float& v : s.map.sigma2_search().data()) v = r.get<float>();
  for (auto& v : s.map.observed().data()) v = r.get<std::uint8_t>();
  s.occupancy = OccupancyGrid(s.map.nx(), s.map.ny(), Occupancy::kUnknown);
  for (Occupancy& o : s.occupancy.data()) {
    const auto b = r.get<std::uint8_t>();
    if (b > 2) throw ParseError("map state has an invalid occupancy value");
    o = static_cast<Occupancy>(b);
  }
  if (!r.done()) throw ParseError("map state has trailing bytes");
  return s;
}

}  // namespace onemap
