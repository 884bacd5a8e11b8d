#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "onemap/error.hpp"

namespace onemap {

/// Height x width raster of dim-dimensional feature vectors, row-major with the
/// channel index fastest. Used both for patch-level feature frames and for
/// per-pixel features after upsampling.
struct FeatureImage {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<float> data;

  FeatureImage() = default;
  FeatureImage(int h, int w, int f) : height(h), width(w), dim(f) {
    if (h <= 0 || w <= 0 || f <= 0) throw InvalidArgument("feature image dimensions must be positive");
    data.assign(static_cast<std::size_t>(h) * w * f, 0.0f);
  }

  std::size_t offset(int i, int j) const {
    return (static_cast<std::size_t>(i) * width + j) * static_cast<std::size_t>(dim);
  }
  std::span<float> at(int i, int j) { return {data.data() + offset(i, j), static_cast<std::size_t>(dim)}; }
  std::span<const float> at(int i, int j) const {
    return {data.data() + offset(i, j), static_cast<std::size_t>(dim)};
  }

  friend bool operator==(const FeatureImage&, const FeatureImage&) = default;
};

/// Patch-level output of an image encoder.
using FeatureFrame = FeatureImage;

namespace detail {

struct Tap {
  int lo = 0;
  int hi = 0;
  float frac = 0.0f;
};

// Patch p covers pixels [p*s, (p+1)*s) with s = out/in, so its center sits at
// pixel coordinate (p + 0.5) * s - 0.5. Outside the first/last center the value
// is held constant.
inline std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double u = (o + 0.5) * scale - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(u));
    const int hi = std::min(lo + 1, in - 1);
    taps[o] = Tap{lo, hi, static_cast<float>(u - lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear upsampling of a patch frame to an h x w pixel grid.
inline FeatureImage upsample_bilinear(const FeatureFrame& frame, int h, int w) {
  if (h < frame.height || w < frame.width)
    throw InvalidArgument("upsample target must be at least as large as the source frame");
  if (h == frame.height && w == frame.width) return frame;
  FeatureImage out(h, w, frame.dim);
  const auto rows = detail::bilinear_taps(frame.height, h);
  const auto cols = detail::bilinear_taps(frame.width, w);
  const int f = frame.dim;
  for (int i = 0; i < h; ++i) {
    const auto& r = rows[i];
    for (int j = 0; j < w; ++j) {
      const auto& c = cols[j];
      const float w00 = (1 - r.frac) * (1 - c.frac);
      const float w01 = (1 - r.frac) * c.frac;
      const float w10 = r.frac * (1 - c.frac);
      const float w11 = r.frac * c.frac;
      auto a = frame.at(r.lo, c.lo);
      auto b = frame.at(r.lo, c.hi);
      auto d = frame.at(r.hi, c.lo);
      auto e = frame.at(r.hi, c.hi);
      auto dst = out.at(i, j);
      for (int k = 0; k < f; ++k) dst[k] = w00 * a[k] + w01 * b[k] + w10 * d[k] + w11 * e[k];
    }
  }
  return out;
}

}  // namespace onemap
