#pragma once

// Netpbm output for map rasters and the per-object SPL bar chart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "onemap/error.hpp"
#include "onemap/grid.hpp"

namespace onemap {

/// 8-bit grayscale raster, row 0 printed first.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Linear map of [lo, hi] onto 0..255. When lo == hi every pixel gets the
/// same mid-gray value, so a constant layer renders as a uniform image.
/// Row y of the grid becomes image row ny-1-y so +y points up.
inline GrayImage to_gray(const Grid<float>& g, double lo, double hi) {
  GrayImage img{g.nx(), g.ny(), std::vector<std::uint8_t>(g.size())};
  for (int y = 0; y < g.ny(); ++y)
    for (int x = 0; x < g.nx(); ++x) {
      double t = hi > lo ? (g(x, y) - lo) / (hi - lo) : 0.5;
      t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
      img.pixels[static_cast<std::size_t>(g.ny() - 1 - y) * g.nx() + x] = static_cast<std::uint8_t>(std::lround(255 * t));
    }
  return img;
}

inline GrayImage to_gray(const Grid<float>& g) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (float v : g.data()) {
    lo = std::min<double>(lo, v);
    hi = std::max<double>(hi, v);
  }
  if (g.empty()) lo = hi = 0.0;
  return to_gray(g, lo, hi);
}

inline GrayImage mask_to_gray(const Mask& m) {
  GrayImage img{m.nx(), m.ny(), std::vector<std::uint8_t>(m.size())};
  for (int y = 0; y < m.ny(); ++y)
    for (int x = 0; x < m.nx(); ++x)
      img.pixels[static_cast<std::size_t>(m.ny() - 1 - y) * m.nx() + x] = m(x, y) ? 255 : 0;
  return img;
}

/// Binary PGM (P5).
inline void write_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io-error", "cannot open " + path + " for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw Error("io-error", "failed writing " + path);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("image not found: " + path);
  std::string magic;
  int maxval = 0;
  GrayImage img;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || img.width < 0 || img.height < 0) throw ParseError("not an 8-bit P5 image");
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw ParseError("truncated P5 image");
  return img;
}

/// Vertical bars with values in [0, 1], one per entry, on a white canvas.
inline GrayImage bar_chart(const std::vector<double>& values, int bar_width = 40, int height = 200) {
  const int gap = bar_width / 2;
  const int n = static_cast<int>(values.size());
  GrayImage img{std::max(1, n * (bar_width + gap) + gap), height, {}};
  img.pixels.assign(static_cast<std::size_t>(img.width) * height, 255);
  for (int b = 0; b < n; ++b) {
    const double v = std::clamp(std::isfinite(values[b]) ? values[b] : 0.0, 0.0, 1.0);
    const int top = height - static_cast<int>(std::lround(v * (height - 1)));
    const int x0 = gap + b * (bar_width + gap);
    for (int y = top; y < height; ++y)
      for (int x = x0; x < x0 + bar_width; ++x) img.pixels[static_cast<std::size_t>(y) * img.width + x] = 64;
  }
  for (int x = 0; x < img.width; ++x) img.pixels[static_cast<std::size_t>(height - 1) * img.width + x] = 0;
  return img;
}

}  // namespace onemap
