#pragma once

// Feature-frame files hold a sequence of posed depth frames together with the
// patch features an external encoder produced for them.
//
// Layout:
//   text header, one "key value" per line, terminated by a line "END":
//     ONEMAP-FEATURE-FRAMES 1
//     feature_dim <f>
//     END
//   then zero or more records, each a little-endian u64 byte count followed by
//   that many payload bytes:
//     f64 x, y, heading
//     f64 fx, fy, cx, cy, camera_height, max_range
//     u32 H, W
//     f32 depth[H*W]        row-major
//     u8  valid[H*W]
//     u32 H_F, W_F, f
//     f32 features[H_F*W_F*f]  row-major, channel fastest
// A zero-byte file is an empty sequence.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "onemap/error.hpp"
#include "onemap/features.hpp"
#include "onemap/observation.hpp"

namespace onemap {

struct FrameRecord {
  PosedObservation observation;
  FeatureFrame features;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class LeReader {
 public:
  LeReader(const char* data, std::size_t size, long record) : p_(data), end_(data + size), record_(record) {}

  template <typename T>
  T get() {
    if (static_cast<std::size_t>(end_ - p_) < sizeof(T))
      throw ParseError("feature-frame record " + std::to_string(record_) + " is truncated", record_);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, p_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    p_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  bool done() const { return p_ == end_; }

 private:
  const char* p_;
  const char* end_;
  long record_;
};

}  // namespace detail

inline void write_feature_frames(const std::string& path, int feature_dim, const std::vector<FrameRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", "cannot open " + path + " for writing");
  out << "ONEMAP-FEATURE-FRAMES 1\nfeature_dim " << feature_dim << "\nEND\n";
  for (const FrameRecord& r : records) {
    const PosedObservation& o = r.observation;
    std::string payload;
    for (double v : {o.pose.x, o.pose.y, o.pose.heading, o.intrinsics.fx, o.intrinsics.fy, o.intrinsics.cx,
                     o.intrinsics.cy, o.camera_height, o.max_range})
      detail::put_le(payload, v);
    detail::put_le(payload, static_cast<std::uint32_t>(o.height()));
    detail::put_le(payload, static_cast<std::uint32_t>(o.width()));
    for (float d : o.depth.data()) detail::put_le(payload, d);
    for (std::uint8_t v : o.valid.data()) detail::put_le(payload, v);
    detail::put_le(payload, static_cast<std::uint32_t>(r.features.height));
    detail::put_le(payload, static_cast<std::uint32_t>(r.features.width));
    detail::put_le(payload, static_cast<std::uint32_t>(r.features.dim));
    for (float v : r.features.data) detail::put_le(payload, v);
    std::string prefix;
    detail::put_le(prefix, static_cast<std::uint64_t>(payload.size()));
    out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  }
  if (!out) throw Error("io-error", "failed writing " + path);
}

inline std::vector<FrameRecord> load_feature_frames(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("feature-frame file not found: " + path);
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<FrameRecord> records;
  if (blob.empty()) return records;

  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = blob.find('\n', pos);
    if (nl == std::string::npos) throw ParseError("feature-frame header is not terminated by END");
    std::string line = blob.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "ONEMAP-FEATURE-FRAMES 1") throw ParseError("not a feature-frame file (bad magic)");
  int feature_dim = -1;
  for (std::string line = next_line(); line != "END"; line = next_line()) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "feature_dim") {
      if (!(ls >> feature_dim) || feature_dim <= 0) throw ParseError("bad feature_dim in header");
    }
  }
  if (feature_dim <= 0) throw ParseError("header lacks feature_dim");

  long index = 0;
  while (pos < blob.size()) {
    detail::LeReader prefix(blob.data() + pos, blob.size() - pos, index);
    const auto len = prefix.get<std::uint64_t>();
    pos += sizeof(std::uint64_t);
    if (len > blob.size() - pos)
      throw ParseError("feature-frame record " + std::to_string(index) + " is truncated", index);
    detail::LeReader rd(blob.data() + pos, static_cast<std::size_t>(len), index);
    FrameRecord r;
    PosedObservation& o = r.observation;
    o.pose.x = rd.get<double>();
    o.pose.y = rd.get<double>();
    o.pose.heading = rd.get<double>();
    o.intrinsics.fx = rd.get<double>();
    o.intrinsics.fy = rd.get<double>();
    o.intrinsics.cx = rd.get<double>();
    o.intrinsics.cy = rd.get<double>();
    o.camera_height = rd.get<double>();
    o.max_range = rd.get<double>();
    const auto h = static_cast<int>(rd.get<std::uint32_t>());
    const auto w = static_cast<int>(rd.get<std::uint32_t>());
    if (h <= 0 || w <= 0)
      throw ParseError("feature-frame record " + std::to_string(index) + " has empty depth", index);
    if (static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w) * 5 > len)
      throw ParseError("feature-frame record " + std::to_string(index) + " is truncated", index);
    o.depth = Grid<float>(w, h);
    o.valid = Mask(w, h);
    o.hit_labels = Grid<std::string>(w, h);
    for (float& d : o.depth.data()) d = rd.get<float>();
    for (std::uint8_t& v : o.valid.data()) v = rd.get<std::uint8_t>();
    const auto hf = static_cast<int>(rd.get<std::uint32_t>());
    const auto wf = static_cast<int>(rd.get<std::uint32_t>());
    const auto f = static_cast<int>(rd.get<std::uint32_t>());
    if (f != feature_dim)
      throw SchemaError("feature-frame record " + std::to_string(index) + " has feature_dim " + std::to_string(f) +
                            ", header says " + std::to_string(feature_dim),
                        index);
    if (hf <= 0 || wf <= 0)
      throw ParseError("feature-frame record " + std::to_string(index) + " has empty features", index);
    r.features = FeatureFrame(hf, wf, f);
    for (float& v : r.features.data) {
      v = rd.get<float>();
      if (!std::isfinite(v))
        throw ParseError("feature-frame record " + std::to_string(index) + " has non-finite features", index);
    }
    if (!rd.done())
      throw ParseError("feature-frame record " + std::to_string(index) + " has trailing bytes", index);
    pos += static_cast<std::size_t>(len);
    records.push_back(std::move(r));
    ++index;
  }
  return records;
}

}  // namespace onemap
