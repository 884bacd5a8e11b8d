#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "onemap/grid.hpp"

namespace onemap {

/// Pinhole intrinsics in pixel units. Pixel (i, j) is row i, column j.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;

  /// Intrinsics of a camera with horizontal field of view `hfov` (radians)
  /// and square pixels, optical center at the image center.
  static Intrinsics from_fov(int width, int height, double hfov) {
    Intrinsics k;
    k.fx = (width / 2.0) / std::tan(hfov / 2.0);
    k.fy = k.fx;
    k.cx = (width - 1) / 2.0;
    k.cy = (height - 1) / 2.0;
    return k;
  }
};

/// One posed depth frame with the semantic label struck by each pixel.
///
/// Rasters use Grid's (x, y) = (column j, row i) convention, so `depth(j, i)`.
/// Depth is planar z-depth along the optical axis in meters. Pixels whose
/// `valid` flag is 0 (censored at max_range, or no return) take no part in
/// map updates. The camera looks along the pose heading with zero pitch at
/// `camera_height` above the floor.
struct PosedObservation {
  Pose2D pose;
  Intrinsics intrinsics;
  double camera_height = 0.88;
  double max_range = 5.0;
  Grid<float> depth;
  Mask valid;
  Grid<std::string> hit_labels;

  int width() const { return depth.nx(); }
  int height() const { return depth.ny(); }
  double fov() const { return 2.0 * std::atan((width() / 2.0) / intrinsics.fx); }
};

/// Horizontal world-frame displacement of pixel (i, j) seen at z-depth `depth`.
/// Returns {forward, left} in the camera's planar frame.
inline std::pair<double, double> pixel_planar_offset(const Intrinsics& k, int j, double depth) {
  const double right = (j - k.cx) / k.fx * depth;
  return {depth, -right};
}

inline std::pair<double, double> pixel_to_world(const PosedObservation& obs, int /*i*/, int j,
                                                double depth) {
  const auto [fwd, left] = pixel_planar_offset(obs.intrinsics, j, depth);
  const double c = std::cos(obs.pose.heading);
  const double s = std::sin(obs.pose.heading);
  return {obs.pose.x + fwd * c - left * s, obs.pose.y + fwd * s + left * c};
}

}  // namespace onemap
