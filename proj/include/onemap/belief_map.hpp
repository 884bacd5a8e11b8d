#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "onemap/error.hpp"
#include "onemap/features.hpp"
#include "onemap/grid.hpp"
#include "onemap/observation.hpp"

namespace onemap {

/// How the distance-to-optimum term of the per-pixel variance is formed.
enum class FeatureVarianceForm {
  kHalfErrorSquared,  // exp(((d_opt - D) / 2)^2)
  kSquaredErrorHalf,  // exp((d_opt - D)^2 / 2)
};

/// Tunables of the observation model and map update.
struct MappingParams {
  double prior_variance = 1.0;
  double eps_var = 1e-3;       // floor on per-pixel and per-observation variance
  double d_opt = 2.5;          // m, distance at which features are most reliable
  double p = 0.02;             // location variance per squared meter of range
  double truncation = 3.0;     // kernel radius in standard deviations
  double min_kernel_radius = 1.0;  // cells
  FeatureVarianceForm variance_form = FeatureVarianceForm::kHalfErrorSquared;
  bool literal_variance_weights = false;  // weight pixels by variance instead of precision
  bool coverage_scaled_variance = true;  // divide by min(1, kernel weight) so thin kernel tails stay uncertain
};

/// Bytes needed for an nx x ny map with f-dimensional features: the feature
/// grid, the fusion and search variances, and one byte per cell for the
/// observed flag.
inline std::size_t estimate_map_memory(std::size_t nx, std::size_t ny, std::size_t f,
                                       std::size_t scalar_size = sizeof(float)) {
  return nx * ny * (f + 2) * scalar_size + nx * ny;
}

/// Persistent open-vocabulary belief map: one fused feature vector, a fusion
/// variance, a search variance and an observed flag per cell.
class BeliefMap {
 public:
  BeliefMap() = default;

  BeliefMap(double extent_x, double extent_y, double resolution, int feature_dim,
            double prior_variance)
      : extent_x_(extent_x),
        extent_y_(extent_y),
        resolution_(resolution),
        dim_(feature_dim),
        prior_variance_(prior_variance) {
    if (!(extent_x > 0) || !(extent_y > 0)) throw InvalidArgument("map extent must be positive");
    if (!(resolution > 0)) throw InvalidArgument("map resolution must be positive");
    if (feature_dim <= 0) throw InvalidArgument("feature dimension must be positive");
    if (!(prior_variance > 0)) throw InvalidArgument("prior variance must be positive");
    nx_ = std::max(1, static_cast<int>(std::lround(extent_x * resolution)));
    ny_ = std::max(1, static_cast<int>(std::lround(extent_y * resolution)));
    features_.assign(static_cast<std::size_t>(nx_) * ny_ * dim_, 0.0f);
    sigma2_ = Grid<float>(nx_, ny_, static_cast<float>(prior_variance));
    sigma2_search_ = Grid<float>(nx_, ny_, static_cast<float>(prior_variance));
    observed_ = Mask(nx_, ny_, 0);
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int dim() const { return dim_; }
  double resolution() const { return resolution_; }
  double cell_size() const { return 1.0 / resolution_; }
  double extent_x() const { return extent_x_; }
  double extent_y() const { return extent_y_; }
  double prior_variance() const { return prior_variance_; }
  GridGeometry geometry() const { return GridGeometry{nx_, ny_, cell_size()}; }

  std::span<float> feature(const Cell& c) { return feature(sigma2_.index(c)); }
  std::span<const float> feature(const Cell& c) const { return feature(sigma2_.index(c)); }
  std::span<float> feature(std::size_t i) {
    return {features_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }
  std::span<const float> feature(std::size_t i) const {
    return {features_.data() + i * dim_, static_cast<std::size_t>(dim_)};
  }

  const std::vector<float>& features() const { return features_; }
  std::vector<float>& features() { return features_; }
  const Grid<float>& sigma2() const { return sigma2_; }
  Grid<float>& sigma2() { return sigma2_; }
  const Grid<float>& sigma2_search() const { return sigma2_search_; }
  Grid<float>& sigma2_search() { return sigma2_search_; }
  const Mask& observed() const { return observed_; }
  Mask& observed() { return observed_; }

  std::size_t memory_estimate() const {
    return estimate_map_memory(nx_, ny_, dim_, sizeof(float));
  }

  friend bool operator==(const BeliefMap&, const BeliefMap&) = default;

 private:
  double extent_x_ = 0.0;
  double extent_y_ = 0.0;
  double resolution_ = 1.0;
  int nx_ = 0;
  int ny_ = 0;
  int dim_ = 0;
  double prior_variance_ = 1.0;
  std::vector<float> features_;
  Grid<float> sigma2_;
  Grid<float> sigma2_search_;
  Mask observed_;
};

inline BeliefMap create_map(double extent_x, double extent_y, double resolution, int feature_dim,
                            double prior_variance) {
  return BeliefMap(extent_x, extent_y, resolution, feature_dim, prior_variance);
}

// ---------------------------------------------------------------------------
// Per-pixel observation variance
// ---------------------------------------------------------------------------

struct PixelVariances {
  Grid<float> variance;  // (column, row) like the depth raster
  Mask valid;
};

inline bool usable_depth(float d) { return std::isfinite(d) && d > 0.0f; }

/// Variance of each pixel's feature: a leakage term driven by the squared
/// depth gradient times an extraction term that grows away from d_opt,
/// floored at eps_var. Gradients are central differences over valid
/// neighbours, one-sided where only one neighbour is valid, and zero along an
/// axis with a single pixel.
inline PixelVariances compute_pixel_variances(const Grid<float>& depth, const Mask& valid_in,
                                              const MappingParams& params) {
  const int w = depth.nx();
  const int h = depth.ny();
  PixelVariances out{Grid<float>(w, h, 0.0f), Mask(w, h, 0)};
  auto ok = [&](int j, int i) {
    return j >= 0 && i >= 0 && j < w && i < h && valid_in(j, i) && usable_depth(depth(j, i));
  };
  auto gradient = [&](int j, int i, int dj, int di) -> double {
    const bool prev = ok(j - dj, i - di);
    const bool next = ok(j + dj, i + di);
    if (prev && next) return (double(depth(j + dj, i + di)) - depth(j - dj, i - di)) / 2.0;
    if (next) return double(depth(j + dj, i + di)) - depth(j, i);
    if (prev) return double(depth(j, i)) - depth(j - dj, i - di);
    return 0.0;
  };
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (!ok(j, i)) continue;
      const double gx = gradient(j, i, 1, 0);
      const double gy = gradient(j, i, 0, 1);
      const double leakage = std::tanh(gx * gx + gy * gy);
      const double err = params.d_opt - depth(j, i);
      const double extraction = params.variance_form == FeatureVarianceForm::kHalfErrorSquared
                                    ? std::exp((err / 2.0) * (err / 2.0))
                                    : std::exp(err * err / 2.0);
      out.variance(j, i) = static_cast<float>(std::max(leakage * extraction, params.eps_var));
      out.valid(j, i) = 1;
    }
  }
  return out;
}

inline PixelVariances compute_pixel_variances(const Grid<float>& depth, const MappingParams& params) {
  return compute_pixel_variances(depth, Mask(depth.nx(), depth.ny(), 1), params);
}

// ---------------------------------------------------------------------------
// Projection and per-cell aggregation
// ---------------------------------------------------------------------------

/// Aggregated observation of one map cell from a single frame.
struct CellUpdate {
  Cell cell;
  std::vector<float> feature;
  float variance = 0.0f;
  float camera_distance = 0.0f;  // m, planar distance camera -> cell center
};

struct Projection {
  std::vector<CellUpdate> updates;  // sorted by row-major cell index
  std::size_t discarded_out_of_bounds = 0;
};

/// Unprojects every valid pixel, drops it to the floor plane and bins it into
/// a map cell. Per cell the feature is the precision-weighted mean of the
/// contributing pixel features and the variance is the plain mean of their
/// variances.
inline Projection project_and_aggregate(const PosedObservation& obs, const FeatureImage& pixel_features,
                                        const PixelVariances& pixel_variances, const GridGeometry& geom,
                                        const MappingParams& params = {}) {
  const int w = obs.width();
  const int h = obs.height();
  if (pixel_features.width != w || pixel_features.height != h)
    throw InvalidArgument("pixel features must match the depth raster");
  if (pixel_variances.variance.nx() != w || pixel_variances.variance.ny() != h)
    throw InvalidArgument("pixel variances must match the depth raster");
  const int f = pixel_features.dim;

  struct Acc {
    std::vector<double> feature;
    double weight = 0.0;
    double variance = 0.0;
    int count = 0;
  };
  std::unordered_map<std::size_t, Acc> cells;
  Projection result;

  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (!obs.valid(j, i) || !pixel_variances.valid(j, i)) continue;
      const float d = obs.depth(j, i);
      if (!usable_depth(d)) continue;
      const auto [wx, wy] = pixel_to_world(obs, i, j, d);
      const Cell c = geom.cell_of(wx, wy);
      if (c.x < 0 || c.y < 0 || c.x >= geom.nx || c.y >= geom.ny) {
        ++result.discarded_out_of_bounds;
        continue;
      }
      const std::size_t key = static_cast<std::size_t>(c.y) * geom.nx + c.x;
      Acc& acc = cells[key];
      if (acc.feature.empty()) acc.feature.assign(f, 0.0);
      const double var = pixel_variances.variance(j, i);
      const double weight = params.literal_variance_weights ? var : 1.0 / var;
      auto feat = pixel_features.at(i, j);
      for (int k = 0; k < f; ++k) acc.feature[k] += weight * feat[k];
      acc.weight += weight;
      acc.variance += var;
      ++acc.count;
    }
  }

  std::vector<std::size_t> keys;
  keys.reserve(cells.size());
  for (const auto& kv : cells) keys.push_back(kv.first);
  std::sort(keys.begin(), keys.end());
  result.updates.reserve(keys.size());
  for (std::size_t key : keys) {
    const Acc& acc = cells.at(key);
    CellUpdate u;
    u.cell = Cell{static_cast<int>(key % geom.nx), static_cast<int>(key / geom.nx)};
    u.feature.resize(f);
    for (int k = 0; k < f; ++k) u.feature[k] = static_cast<float>(acc.feature[k] / acc.weight);
    u.variance = static_cast<float>(acc.variance / acc.count);
    u.camera_distance = static_cast<float>(
        std::hypot(geom.center_x(u.cell.x) - obs.pose.x, geom.center_y(u.cell.y) - obs.pose.y));
    result.updates.push_back(std::move(u));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sparse spatially varying Gaussian scatter
// ---------------------------------------------------------------------------

/// Truncated, renormalised Gaussian stencil of half-width `radius` cells.
/// Entries outside the circular truncation radius are zero.
struct GaussianKernel {
  int radius = 0;
  std::vector<double> weights;  // (2r+1)^2, row-major over (dy, dx)

  double at(int dx, int dy) const {
    return weights[static_cast<std::size_t>(dy + radius) * (2 * radius + 1) + (dx + radius)];
  }
};

/// sigma in cells. sigma == 0 gives a delta.
inline GaussianKernel make_gaussian_kernel(double sigma, double truncation, double min_radius) {
  GaussianKernel k;
  if (!(sigma > 0.0)) {
    k.radius = 0;
    k.weights = {1.0};
    return k;
  }
  const double cutoff = std::max(truncation * sigma, min_radius);
  k.radius = static_cast<int>(std::floor(cutoff));
  const int side = 2 * k.radius + 1;
  k.weights.assign(static_cast<std::size_t>(side) * side, 0.0);
  double total = 0.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int dy = -k.radius; dy <= k.radius; ++dy) {
    for (int dx = -k.radius; dx <= k.radius; ++dx) {
      const double r2 = double(dx) * dx + double(dy) * dy;
      if (r2 > cutoff * cutoff) continue;
      const double v = std::exp(-r2 * inv);
      k.weights[static_cast<std::size_t>(dy + k.radius) * side + (dx + k.radius)] = v;
      total += v;
    }
  }
  for (double& v : k.weights) v /= total;
  return k;
}

/// Sparse result of scattering cell updates. For each touched cell it keeps
/// the accumulated kernel mass, the mass-weighted feature sum and the
/// mass-weighted variance sum. `feature_sum` / `weight_sum` on their own are
/// the plain scatter convolutions of features and of the unit indicator.
struct BlurResult {
  int dim = 0;
  std::vector<Cell> cells;  // sorted by row-major index
  std::vector<double> weight_sum;
  std::vector<double> feature_sum;  // cells.size() * dim
  std::vector<double> variance_sum;

  std::size_t size() const { return cells.size(); }
  bool empty() const { return cells.empty(); }

  /// Normalised (weighted-mean) feature of touched cell n.
  std::vector<float> feature(std::size_t n) const {
    std::vector<float> v(dim);
    for (int k = 0; k < dim; ++k) v[k] = static_cast<float>(feature_sum[n * dim + k] / weight_sum[n]);
    return v;
  }
  /// Weighted-mean variance of touched cell n.
  double variance(std::size_t n) const { return variance_sum[n] / weight_sum[n]; }
};

/// Spreads each update over its neighbourhood with a Gaussian of variance
/// p * d^2 (d = the update's camera distance, in meters). Only cells within the
/// truncation radius of some update are visited. Overlapping contributions
/// combine by kernel-mass weighting.
inline BlurResult spatial_blur(std::span<const CellUpdate> updates, const GridGeometry& geom, double p,
                               double truncation = 3.0, double min_radius = 1.0) {
  if (p < 0.0) throw InvalidArgument("blur proportionality factor must be non-negative");
  BlurResult out;
  if (updates.empty()) return out;
  const int f = static_cast<int>(updates.front().feature.size());
  out.dim = f;

  std::unordered_map<std::size_t, std::size_t> slot;
  slot.reserve(updates.size() * 16);
  std::vector<std::size_t> keys;
  std::vector<double> weight;
  std::vector<double> feat;
  std::vector<double> var;

  for (const CellUpdate& u : updates) {
    if (static_cast<int>(u.feature.size()) != f) throw InvalidArgument("inconsistent feature dimension");
    const double sigma_m = std::sqrt(p) * u.camera_distance;
    const GaussianKernel kernel = make_gaussian_kernel(sigma_m / geom.cell_size, truncation, min_radius);
    const int r = kernel.radius;
    for (int dy = -r; dy <= r; ++dy) {
      const int y = u.cell.y + dy;
      if (y < 0 || y >= geom.ny) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int x = u.cell.x + dx;
        if (x < 0 || x >= geom.nx) continue;
        const double wgt = kernel.at(dx, dy);
        if (wgt <= 0.0) continue;
        const std::size_t key = static_cast<std::size_t>(y) * geom.nx + x;
        auto [it, inserted] = slot.try_emplace(key, keys.size());
        if (inserted) {
          keys.push_back(key);
          weight.push_back(0.0);
          var.push_back(0.0);
          feat.resize(feat.size() + f, 0.0);
        }
        const std::size_t s = it->second;
        weight[s] += wgt;
        var[s] += wgt * u.variance;
        double* dst = feat.data() + s * f;
        for (int k = 0; k < f; ++k) dst[k] += wgt * u.feature[k];
      }
    }
  }

  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  out.cells.reserve(order.size());
  out.weight_sum.reserve(order.size());
  out.variance_sum.reserve(order.size());
  out.feature_sum.reserve(order.size() * f);
  for (std::size_t s : order) {
    out.cells.push_back(Cell{static_cast<int>(keys[s] % geom.nx), static_cast<int>(keys[s] / geom.nx)});
    out.weight_sum.push_back(weight[s]);
    out.variance_sum.push_back(var[s]);
    out.feature_sum.insert(out.feature_sum.end(), feat.begin() + s * f, feat.begin() + (s + 1) * f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recursive Bayesian fusion
// ---------------------------------------------------------------------------

/// (1 - gain) * prior rounded to float, kept strictly below a positive prior
/// when the gain is positive.
inline float contract(double prior, double gain) {
  float next = static_cast<float>((1.0 - gain) * prior);
  const float before = static_cast<float>(prior);
  if (gain > 0.0 && next >= before && before > 0.0f) next = std::nextafter(before, 0.0f);
  return next;
}

/// Kalman-style update of one cell's state. Returns the gain used.
inline double fuse_cell(std::span<float> state, float& variance, std::span<const float> observation,
                        double observation_variance) {
  const double prior = variance;
  const double gain = prior / (observation_variance + prior);
  for (std::size_t k = 0; k < state.size(); ++k)
    state[k] = static_cast<float>(state[k] + gain * (observation[k] - state[k]));
  variance = contract(prior, gain);
  return gain;
}

/// Fuses blurred observations into the map cell by cell. The search variance
/// follows the same gain rule on its own state. Non-positive observation
/// variances are floored at eps_var.
inline void bayesian_fuse(BeliefMap& map, const BlurResult& blurred, double eps_var = 1e-3, bool coverage_scaled = false) {
  if (blurred.empty()) return;
  if (blurred.dim != map.dim()) throw InvalidArgument("blurred features do not match map dimension");
  const GridGeometry g = map.geometry();
  std::vector<float> obs(map.dim());
  for (std::size_t n = 0; n < blurred.size(); ++n) {
    const Cell c = blurred.cells[n];
    if (c.x < 0 || c.y < 0 || c.x >= g.nx || c.y >= g.ny) throw InvalidArgument("blurred cell outside map");
    for (int k = 0; k < map.dim(); ++k)
      obs[k] = static_cast<float>(blurred.feature_sum[n * map.dim() + k] / blurred.weight_sum[n]);
    double v = blurred.variance(n);
    if (coverage_scaled) v /= std::min(1.0, blurred.weight_sum[n]);
    if (!(v > eps_var)) v = std::max(v, eps_var);
    fuse_cell(map.feature(c), map.sigma2()[c], obs, v);
    const double prior_search = map.sigma2_search()[c];
    map.sigma2_search()[c] = contract(prior_search, prior_search / (v + prior_search));
    map.observed()[c] = 1;
  }
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += double(a[k]) * b[k];
    na += double(a[k]) * a[k];
    nb += double(b[k]) * b[k];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

/// Cosine similarity between `query` and every cell; zero where either
/// vector has zero norm.
inline Grid<float> query_similarity(const BeliefMap& map, std::span<const float> query) {
  if (static_cast<int>(query.size()) != map.dim())
    throw InvalidArgument("query dimension does not match map feature dimension");
  Grid<float> out(map.nx(), map.ny(), 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!map.observed()[i]) continue;
    out[i] = static_cast<float>(cosine_similarity(query, map.feature(i)));
  }
  return out;
}

inline void reset_search_layer(BeliefMap& map) {
  map.sigma2_search().fill(static_cast<float>(map.prior_variance()));
}

// ---------------------------------------------------------------------------
// Full update
// ---------------------------------------------------------------------------

struct IntegrationStats {
  std::size_t cells_updated = 0;
  std::size_t cells_blurred = 0;
  std::size_t discarded_out_of_bounds = 0;
};

/// Runs variance estimation, projection, blur and fusion for one frame.
/// `features` may be a patch frame; it is upsampled to the depth raster size.
inline IntegrationStats integrate_observation(BeliefMap& map, const PosedObservation& obs,
                                              const FeatureImage& features, const MappingParams& params) {
  if (features.dim != map.dim()) throw InvalidArgument("observation feature dimension does not match map");
  FeatureImage upsampled;
  const bool same = features.height == obs.height() && features.width == obs.width();
  if (!same) upsampled = upsample_bilinear(features, obs.height(), obs.width());
  const FeatureImage& pixel_features = same ? features : upsampled;
  const PixelVariances variances = compute_pixel_variances(obs.depth, obs.valid, params);
  const Projection projection = project_and_aggregate(obs, pixel_features, variances, map.geometry(), params);
  const BlurResult blurred =
      spatial_blur(projection.updates, map.geometry(), params.p, params.truncation, params.min_kernel_radius);
  bayesian_fuse(map, blurred, params.eps_var, params.coverage_scaled_variance);
  return IntegrationStats{projection.updates.size(), blurred.size(), projection.discarded_out_of_bounds};
}

}  // namespace onemap
