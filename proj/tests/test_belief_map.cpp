#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "onemap/belief_map.hpp"
#include "oracles.hpp"

using namespace onemap;
using namespace oracle;
using Catch::Approx;

namespace {

std::vector<float> unit(int dim, int axis) {
  std::vector<float> v(dim, 0.0f);
  v[axis] = 1.0f;
  return v;
}

// A frame with a 1-row-per-`rows` depth raster looking along +x from `pose`.
PosedObservation flat_frame(const Pose2D& pose, int w, int h, float depth) {
  PosedObservation o;
  o.pose = pose;
  o.intrinsics = Intrinsics::from_fov(w, h, 1.2);
  o.depth = Grid<float>(w, h, depth);
  o.valid = Mask(w, h, 1);
  o.hit_labels = Grid<std::string>(w, h, "void");
  return o;
}

FeatureImage constant_features(int h, int w, const std::vector<float>& v) {
  FeatureImage img(h, w, static_cast<int>(v.size()));
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) std::copy(v.begin(), v.end(), img.at(i, j).begin());
  return img;
}

}  // namespace

TEST_CASE("create_map sizes the grid from extent and resolution") {
  const BeliefMap big = create_map(50, 50, 10, 768, 1.0);
  CHECK(big.nx() == 500);
  CHECK(big.ny() == 500);
  const BeliefMap tiny = create_map(1, 1, 1, 4, 1.0);
  REQUIRE(tiny.nx() == 1);
  for (float v : tiny.feature(Cell{0, 0})) CHECK(v == 0.0f);
  CHECK(tiny.sigma2()(0, 0) == 1.0f);
  CHECK(tiny.sigma2_search()(0, 0) == 1.0f);
  CHECK_FALSE(tiny.observed()(0, 0));
  CHECK_THROWS_AS(create_map(0, 1, 1, 4, 1.0), InvalidArgument);
  CHECK_THROWS_AS(create_map(1, 1, 0, 4, 1.0), InvalidArgument);
  CHECK_THROWS_AS(create_map(1, 1, 1, 0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(create_map(1, 1, 1, 4, -1.0), InvalidArgument);
}

TEST_CASE("memory estimate for a 500x500 map with 768-d features") {
  const double bytes = double(estimate_map_memory(500, 500, 768, 4));
  CHECK(bytes == 500.0 * 500 * 770 * 4 + 500.0 * 500);
  CHECK(bytes / 1e6 >= 650.0);
  CHECK(bytes / 1e6 <= 800.0);
  CHECK(create_map(50, 50, 10, 768, 1.0).memory_estimate() == estimate_map_memory(500, 500, 768, 4));
}

TEST_CASE("pixel variance of a flat frame at the optimal distance is the floor") {
  MappingParams mp;
  const Grid<float> depth(3, 3, static_cast<float>(mp.d_opt));
  const auto pv = compute_pixel_variances(depth, mp);
  for (float v : pv.variance.data()) CHECK(v == Approx(mp.eps_var));
}

TEST_CASE("pixel variance at a depth step matches hand evaluation") {
  MappingParams mp;
  mp.eps_var = 1e-9;
  Grid<float> depth(3, 3, static_cast<float>(mp.d_opt));
  for (int i = 0; i < 3; ++i) depth(2, i) = static_cast<float>(mp.d_opt + 1.0);
  const auto pv = compute_pixel_variances(depth, mp);
  // center: central difference (D2 - D0) / 2 = 0.5, at d_opt
  CHECK(pv.variance(1, 1) == Approx(std::tanh(0.25)).epsilon(1e-6));
  // right border: one-sided difference 1, one meter past d_opt
  CHECK(pv.variance(2, 1) == Approx(std::tanh(1.0) * std::exp(0.25)).epsilon(1e-6));
  // left border: one-sided difference 0
  CHECK(pv.variance(0, 1) == Approx(1e-9));
}

TEST_CASE("extraction term grows as exp(((d_opt - D) / 2)^2)") {
  MappingParams mp;
  mp.eps_var = 1e-12;
  auto center_var = [&](double base) {
    Grid<float> depth(3, 1);
    depth(0, 0) = static_cast<float>(base - 0.5);
    depth(1, 0) = static_cast<float>(base);
    depth(2, 0) = static_cast<float>(base + 0.5);
    return double(compute_pixel_variances(depth, mp).variance(1, 0));
  };
  const double ratio = center_var(mp.d_opt + 2.0) / center_var(mp.d_opt);
  CHECK(ratio == Approx(std::exp(1.0)).epsilon(1e-5));
  mp.variance_form = FeatureVarianceForm::kSquaredErrorHalf;
  CHECK(center_var(mp.d_opt + 2.0) / center_var(mp.d_opt) == Approx(std::exp(2.0)).epsilon(1e-5));
}

TEST_CASE("invalid and zero-depth pixels are excluded") {
  MappingParams mp;
  Grid<float> depth(4, 1, 2.0f);
  depth(1, 0) = 0.0f;
  Mask valid(4, 1, 1);
  valid(3, 0) = 0;
  const auto pv = compute_pixel_variances(depth, valid, mp);
  CHECK(pv.valid(0, 0));
  CHECK_FALSE(pv.valid(1, 0));
  CHECK(pv.valid(2, 0));
  CHECK_FALSE(pv.valid(3, 0));
  // pixel 0 has no valid neighbour on either side: zero gradient
  CHECK(pv.variance(0, 0) == Approx(mp.eps_var));
}

TEST_CASE("aggregation weights pixels by precision") {
  // two pixels a hair apart on the same 0.1 m cell
  PosedObservation o;
  o.pose = {0.05, 0.05, 0.0};
  o.intrinsics = {1000.0, 1000.0, 0.5, 0.0};
  o.depth = Grid<float>(2, 1, 2.0f);
  o.valid = Mask(2, 1, 1);
  FeatureImage feats(1, 2, 2);
  feats.at(0, 0)[0] = 1.0f;  // u
  feats.at(0, 1)[1] = 1.0f;  // v
  PixelVariances pv{Grid<float>(2, 1, 1.0f), Mask(2, 1, 1)};
  const GridGeometry g{40, 10, 0.1};

  auto one = project_and_aggregate(o, feats, pv, g);
  REQUIRE(one.updates.size() == 1);
  CHECK(one.updates[0].cell == Cell{20, 0});
  CHECK(one.updates[0].feature[0] == Approx(0.5));
  CHECK(one.updates[0].feature[1] == Approx(0.5));
  CHECK(one.updates[0].variance == Approx(1.0));

  pv.variance(1, 0) = 3.0f;
  auto two = project_and_aggregate(o, feats, pv, g);
  CHECK(two.updates[0].feature[0] == Approx(0.75));
  CHECK(two.updates[0].feature[1] == Approx(0.25));
  CHECK(two.updates[0].variance == Approx(2.0));

  MappingParams literal;
  literal.literal_variance_weights = true;
  auto lit = project_and_aggregate(o, feats, pv, g, literal);
  CHECK(lit.updates[0].feature[0] == Approx(0.25));
  CHECK(lit.updates[0].feature[1] == Approx(0.75));
}

TEST_CASE("projection matches a bearing-and-range pinhole oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GridGeometry g{200, 200, 0.1};
  for (int trial = 0; trial < 200; ++trial) {
    PosedObservation o;
    o.pose = {8 + 4 * u(rng), 8 + 4 * u(rng), (u(rng) * 2 - 1) * M_PI};
    o.intrinsics = Intrinsics::from_fov(16, 4, 1.0 + u(rng));
    o.depth = Grid<float>(16, 4, 0.0f);
    o.valid = Mask(16, 4, 0);
    const int j = static_cast<int>(u(rng) * 16), i = static_cast<int>(u(rng) * 4);
    const double z = 0.5 + 4 * u(rng);
    o.depth(j, i) = static_cast<float>(z);
    o.valid(j, i) = 1;
    FeatureImage feats(4, 16, 1);
    PixelVariances pv{Grid<float>(16, 4, 1.0f), Mask(16, 4, 1)};
    const auto proj = project_and_aggregate(o, feats, pv, g);
    REQUIRE(proj.updates.size() == 1);

    const double bearing = o.pose.heading - std::atan((j - o.intrinsics.cx) / o.intrinsics.fx);
    const double range = z / std::cos(std::atan((j - o.intrinsics.cx) / o.intrinsics.fx));
    const double wx = o.pose.x + range * std::cos(bearing);
    const double wy = o.pose.y + range * std::sin(bearing);
    const double fx = wx / 0.1 - std::floor(wx / 0.1), fy = wy / 0.1 - std::floor(wy / 0.1);
    // skip points within rounding noise of a cell border
    if (std::min(fx, 1 - fx) > 1e-7 && std::min(fy, 1 - fy) > 1e-7)
      CHECK(proj.updates[0].cell == Cell{static_cast<int>(std::floor(wx / 0.1)), static_cast<int>(std::floor(wy / 0.1))});
    const Cell got = proj.updates[0].cell;
    const double cd = std::hypot(g.center_x(got.x) - o.pose.x, g.center_y(got.y) - o.pose.y);
    CHECK(proj.updates[0].camera_distance == Approx(cd).epsilon(1e-6));
  }
}

TEST_CASE("pixels projecting outside the map are counted and dropped") {
  auto o = flat_frame({0.5, 0.5, M_PI}, 8, 1, 3.0f);  // looking out of the map
  FeatureImage feats(1, 8, 2);
  PixelVariances pv{Grid<float>(8, 1, 1.0f), Mask(8, 1, 1)};
  const auto proj = project_and_aggregate(o, feats, pv, GridGeometry{10, 10, 0.1});
  CHECK(proj.updates.empty());
  CHECK(proj.discarded_out_of_bounds == 8);
}

TEST_CASE("blur with p = 0 is the identity") {
  std::vector<CellUpdate> ups{{Cell{2, 3}, {0.2f, 0.4f}, 0.7f, 3.0f}, {Cell{5, 5}, {1.0f, -1.0f}, 0.1f, 1.0f}};
  const auto b = spatial_blur(ups, GridGeometry{8, 8, 0.1}, 0.0);
  REQUIRE(b.size() == 2);
  CHECK(b.cells[0] == Cell{2, 3});
  CHECK(b.weight_sum[0] == 1.0);
  CHECK(b.feature(0) == ups[0].feature);
  CHECK(b.variance(0) == Approx(0.7f));
  CHECK(b.feature(1) == ups[1].feature);
}

TEST_CASE("a single scatter carries unit mass") {
  for (double d : {0.5, 1.0, 2.0, 4.0}) {
    std::vector<CellUpdate> ups{{Cell{50, 50}, {1.0f}, 1.0f, static_cast<float>(d)}};
    const auto b = spatial_blur(ups, GridGeometry{101, 101, 0.1}, 0.02);
    double mass = 0.0;
    for (double w : b.weight_sum) mass += w;
    CHECK(mass == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("blurring a constant field leaves it constant") {
  std::vector<CellUpdate> ups;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) ups.push_back({Cell{x, y}, {0.3f, -0.6f}, 0.5f, 2.0f});
  const auto b = spatial_blur(ups, GridGeometry{12, 12, 0.1}, 0.05);
  for (std::size_t n = 0; n < b.size(); ++n) {
    const auto f = b.feature(n);
    CHECK(f[0] == Approx(0.3f).margin(1e-6));
    CHECK(f[1] == Approx(-0.6f).margin(1e-6));
    CHECK(b.variance(n) == Approx(0.5).margin(1e-6));
  }
}

TEST_CASE("unit spike at 2 m with p = 0.25 matches the dense reference") {
  const GridGeometry g{32, 32, 0.25};  // sigma_d = 1 m = 4 cells
  std::vector<CellUpdate> ups{{Cell{16, 16}, {1.0f}, 1.0f, 2.0f}};
  const auto b = spatial_blur(ups, g, 0.25);
  const Dense d = dense_scatter(ups, g, 0.25, 3.0, 1.0);
  std::vector<double> sparse(32 * 32, 0.0);
  for (std::size_t n = 0; n < b.size(); ++n) sparse[b.cells[n].y * 32 + b.cells[n].x] = b.feature_sum[n];
  for (std::size_t i = 0; i < sparse.size(); ++i) CHECK(sparse[i] == Approx(d.feature[i]).margin(1e-6));
}

TEST_CASE("sparse scatter equals dense reference on random rasters") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> side(1, 32);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const GridGeometry g{side(rng), side(rng), 0.1};
    std::vector<CellUpdate> ups;
    const int n = 1 + static_cast<int>(u(rng) * 6);
    for (int k = 0; k < n; ++k)
      ups.push_back({Cell{static_cast<int>(u(rng) * g.nx), static_cast<int>(u(rng) * g.ny)},
                     {static_cast<float>(u(rng)), static_cast<float>(u(rng) - 0.5)},
                     static_cast<float>(0.01 + u(rng)),
                     static_cast<float>(u(rng) * 4)});
    const double p = u(rng) * 0.05;
    const auto b = spatial_blur(ups, g, p);
    const Dense d = dense_scatter(ups, g, p, 3.0, 1.0);
    std::vector<double> w(d.weight.size(), 0.0), v(d.weight.size(), 0.0), f(d.feature.size(), 0.0);
    for (std::size_t m = 0; m < b.size(); ++m) {
      const std::size_t i = static_cast<std::size_t>(b.cells[m].y) * g.nx + b.cells[m].x;
      w[i] = b.weight_sum[m];
      v[i] = b.variance_sum[m];
      f[2 * i] = b.feature_sum[2 * m];
      f[2 * i + 1] = b.feature_sum[2 * m + 1];
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      REQUIRE(w[i] == Approx(d.weight[i]).margin(1e-6));
      REQUIRE(v[i] == Approx(d.variance[i]).margin(1e-6));
      REQUIRE(f[2 * i] == Approx(d.feature[2 * i]).margin(1e-6));
      REQUIRE(f[2 * i + 1] == Approx(d.feature[2 * i + 1]).margin(1e-6));
    }
  }
}

TEST_CASE("symmetric fusion halves the variance") {
  std::vector<float> state = unit(2, 0);
  float var = 1.0f;
  const auto obs = unit(2, 1);
  const double k = fuse_cell(state, var, obs, 1.0);
  CHECK(k == 0.5);
  CHECK(state[0] == Approx(0.5));
  CHECK(state[1] == Approx(0.5));
  CHECK(var == 0.5f);
}

TEST_CASE("fusion limits") {
  SECTION("near-perfect observation") {
    std::vector<float> state = unit(2, 0);
    float var = 0.7f;
    const double k = fuse_cell(state, var, unit(2, 1), 1e-9);
    CHECK(k == Approx(1.0).margin(1e-8));
    CHECK(state[1] == Approx(1.0).margin(1e-6));
    CHECK(var < 0.7f);
  }
  SECTION("uninformative observation") {
    std::vector<float> state = unit(2, 0);
    float var = 1.0f;
    const double k = fuse_cell(state, var, unit(2, 1), 1e6);
    CHECK(k == Approx(1e-6).epsilon(1e-3));
    CHECK(state[0] == Approx(1.0).margin(1e-5));
    CHECK(var < 1.0f);
  }
}

TEST_CASE("non-positive observation variance is floored before fusion") {
  BeliefMap m = create_map(0.3, 0.1, 10, 1, 1.0);
  BlurResult b;
  b.dim = 1;
  b.cells = {Cell{0, 0}, Cell{1, 0}};
  b.weight_sum = {1.0, 1.0};
  b.feature_sum = {1.0, 1.0};
  b.variance_sum = {0.0, -2.0};
  bayesian_fuse(m, b, 1e-3);
  const float expect = static_cast<float>(1.0 - 1.0 / 1.001);
  CHECK(m.sigma2()(0, 0) == Approx(expect));
  CHECK(m.sigma2()(1, 0) == Approx(expect));
  CHECK(m.sigma2()(2, 0) == 1.0f);
  CHECK(m.observed()(0, 0));
  CHECK_FALSE(m.observed()(2, 0));
}

TEST_CASE("fusion contracts the variance and keeps fixed points", "[property]") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> logv(-6.0, 6.0);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const float prior = static_cast<float>(std::pow(10.0, logv(rng) / 2));
    const double obs_var = std::pow(10.0, logv(rng));
    std::vector<float> state(4), obs(4);
    for (int k = 0; k < 4; ++k) {
      state[k] = static_cast<float>(z(rng));
      obs[k] = static_cast<float>(z(rng));
    }
    float var = prior;
    fuse_cell(state, var, obs, obs_var);
    REQUIRE(var < prior);
    REQUIRE(var > 0.0f);
    std::vector<float> same = state;
    float v2 = var;
    fuse_cell(same, v2, std::vector<float>(state), obs_var);
    REQUIRE(same == state);
  }
}

TEST_CASE("coverage-scaled variance inflates thin kernel tails") {
  BlurResult b;
  b.dim = 1;
  b.cells = {Cell{0, 0}, Cell{1, 0}};
  b.weight_sum = {2.0, 0.25};
  b.feature_sum = {2.0, 0.25};
  b.variance_sum = {2.0 * 0.5, 0.25 * 0.5};
  BeliefMap plain = create_map(0.2, 0.1, 10, 1, 1.0);
  BeliefMap scaled = plain;
  bayesian_fuse(plain, b, 1e-3, false);
  bayesian_fuse(scaled, b, 1e-3, true);
  // full coverage: the weighted-mean variance is used as is
  CHECK(scaled.sigma2()(0, 0) == plain.sigma2()(0, 0));
  // quarter coverage: variance 0.5 / 0.25 = 2, gain 1/3
  CHECK(plain.sigma2()(1, 0) == Approx(1.0 - 1.0 / 1.5));
  CHECK(scaled.sigma2()(1, 0) == Approx(1.0 - 1.0 / 3.0));
}

TEST_CASE("similarity queries") {
  BeliefMap m = create_map(0.3, 0.1, 10, 3, 1.0);
  const std::vector<float> q{0.0f, 1.0f, 0.0f};
  std::copy(q.begin(), q.end(), m.feature(Cell{0, 0}).begin());
  m.observed()(0, 0) = 1;
  const std::vector<float> orth{1.0f, 0.0f, 0.0f};
  std::copy(orth.begin(), orth.end(), m.feature(Cell{1, 0}).begin());
  m.observed()(1, 0) = 1;
  const auto s = query_similarity(m, q);
  CHECK(s(0, 0) == Approx(1.0));
  CHECK(s(1, 0) == 0.0f);
  CHECK(s(2, 0) == 0.0f);
  CHECK_THROWS_AS(query_similarity(m, std::vector<float>{1.0f}), InvalidArgument);
  CHECK(cosine_similarity(q, std::vector<float>{0, 0, 0}) == 0.0);
}

TEST_CASE("reset_search_layer restores the prior only in the search layer") {
  BeliefMap m = create_map(1, 1, 10, 2, 1.0);
  auto o = flat_frame({0.05, 0.5, 0.0}, 8, 2, 0.6f);
  integrate_observation(m, o, constant_features(2, 8, unit(2, 0)), MappingParams{});
  const BeliefMap before = m;
  reset_search_layer(m);
  for (float v : m.sigma2_search().data()) CHECK(v == 1.0f);
  CHECK(m.sigma2() == before.sigma2());
  CHECK(m.features() == before.features());
  CHECK(m.observed() == before.observed());
}

TEST_CASE("integrating a fully invalid frame changes nothing") {
  BeliefMap m = create_map(2, 2, 10, 2, 1.0);
  auto o = flat_frame({0.05, 1.0, 0.0}, 8, 2, 1.0f);
  o.valid.fill(0);
  const BeliefMap before = m;
  const auto stats = integrate_observation(m, o, constant_features(2, 8, unit(2, 1)), MappingParams{});
  CHECK(stats.cells_updated == 0);
  CHECK(m == before);
}

TEST_CASE("repeating an observation strictly lowers variance where it lands") {
  BeliefMap m = create_map(2, 2, 10, 2, 1.0);
  auto o = flat_frame({0.05, 1.0, 0.0}, 8, 3, 1.2f);
  const auto feats = constant_features(3, 8, unit(2, 1));
  integrate_observation(m, o, feats, MappingParams{});
  for (int rep = 0; rep < 4; ++rep) {
    const Grid<float> before = m.sigma2();
    const Mask seen = m.observed();
    integrate_observation(m, o, feats, MappingParams{});
    for (std::size_t i = 0; i < before.size(); ++i)
      if (seen[i]) REQUIRE(m.sigma2()[i] < before[i]);
  }
}

TEST_CASE("integrate_observation equals the chained stages") {
  MappingParams mp;
  auto o = flat_frame({0.3, 1.0, 0.2}, 8, 4, 1.5f);
  for (int i = 0; i < 4; ++i) o.depth(5, i) = 1.1f;  // a silhouette
  FeatureImage patches(2, 4, 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<float> z(0.0f, 1.0f);
  for (float& v : patches.data) v = z(rng);

  BeliefMap a = create_map(3, 3, 10, 3, 1.0);
  BeliefMap b = a;
  integrate_observation(a, o, patches, mp);

  const FeatureImage px = upsample_bilinear(patches, 4, 8);
  const auto pv = compute_pixel_variances(o.depth, o.valid, mp);
  const auto proj = project_and_aggregate(o, px, pv, b.geometry(), mp);
  const auto blurred = spatial_blur(proj.updates, b.geometry(), mp.p, mp.truncation, mp.min_kernel_radius);
  bayesian_fuse(b, blurred, mp.eps_var, mp.coverage_scaled_variance);
  CHECK(a == b);
}

TEST_CASE("map invariants hold over a random observation stream", "[property]") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BeliefMap m = create_map(4, 4, 5, 4, 1.0);
  BeliefMap twin = m;
  for (int t = 0; t < 30; ++t) {
    auto o = flat_frame({0.5 + 3 * u(rng), 0.5 + 3 * u(rng), (2 * u(rng) - 1) * M_PI}, 8, 3,
                        static_cast<float>(0.3 + 3 * u(rng)));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 8; ++j)
        if (u(rng) < 0.2) o.valid(j, i) = 0;
    FeatureImage f(3, 8, 4);
    for (float& v : f.data) v = static_cast<float>(u(rng) - 0.5);
    const Grid<float> before = m.sigma2();
    const Mask seen = m.observed();
    integrate_observation(m, o, f, MappingParams{});
    integrate_observation(twin, o, f, MappingParams{});
    for (std::size_t i = 0; i < m.sigma2().size(); ++i) {
      REQUIRE(m.sigma2()[i] <= before[i]);
      if (seen[i]) REQUIRE(m.observed()[i]);
      if (!m.observed()[i]) {
        REQUIRE(m.sigma2()[i] == 1.0f);
        REQUIRE(m.sigma2_search()[i] == 1.0f);
        for (float v : m.feature(i)) REQUIRE(v == 0.0f);
      } else {
        REQUIRE(m.sigma2()[i] > 0.0f);
        REQUIRE(m.sigma2_search()[i] > 0.0f);
      }
    }
    const std::vector<float> q{1, 0, 0, 0};
    const Grid<float> sim = query_similarity(m, q);
    for (float s : sim.data()) REQUIRE((s >= -1.0f && s <= 1.0f));
  }
  CHECK(m == twin);
}
