#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "onemap/exploration.hpp"
#include "oracles.hpp"

using namespace onemap;
using namespace oracle;
using Catch::Approx;

namespace {

Frontier frontier_of(std::initializer_list<Cell> cells) {
  Frontier f;
  f.cells = cells;
  std::sort(f.cells.begin(), f.cells.end(), row_major_less);
  return f;
}

}  // namespace

TEST_CASE("sub-maps of a fresh map are empty") {
  const BeliefMap m = create_map(2, 2, 5, 4, 1.0);
  const OccupancyGrid occ(m.nx(), m.ny(), Occupancy::kUnknown);
  const SubMaps s = derive_submaps(m, 0.3, 0.3, occ, 0.2);
  CHECK(count(s.observed) == 0);
  CHECK(count(s.explored) == 0);
  CHECK(count(s.searched) == 0);
  CHECK(count(s.navigable) == 0);
}

TEST_CASE("two unit-variance fusions put a cell in E at tau 0.4") {
  BeliefMap m = create_map(0.2, 0.2, 10, 2, 1.0);
  const std::vector<float> obs{1.0f, 0.0f};
  fuse_cell(m.feature(Cell{0, 0}), m.sigma2()(0, 0), obs, 1.0);
  CHECK(m.sigma2()(0, 0) == Approx(0.5));
  fuse_cell(m.feature(Cell{0, 0}), m.sigma2()(0, 0), obs, 1.0);
  CHECK(m.sigma2()(0, 0) == Approx(1.0 / 3.0));
  m.observed()(0, 0) = 1;
  const OccupancyGrid occ(2, 2, Occupancy::kUnknown);
  const SubMaps s = derive_submaps(m, 0.4, 0.4, occ, 0.0);
  CHECK(s.explored(0, 0));
  CHECK_FALSE(s.explored(1, 0));
}

TEST_CASE("resetting the search layer empties C and keeps E") {
  BeliefMap m = create_map(1, 1, 10, 2, 1.0);
  BlurResult b;
  b.dim = 2;
  for (int x = 0; x < 5; ++x) {
    b.cells.push_back(Cell{x, 2});
    b.weight_sum.push_back(1.0);
    b.feature_sum.insert(b.feature_sum.end(), {1.0, 0.0});
    b.variance_sum.push_back(0.05);
  }
  bayesian_fuse(m, b);
  const OccupancyGrid occ(m.nx(), m.ny(), Occupancy::kUnknown);
  const SubMaps before = derive_submaps(m, 0.3, 0.3, occ, 0.2);
  CHECK(count(before.explored) == 5);
  CHECK(count(before.searched) == 5);
  reset_search_layer(m);
  const SubMaps after = derive_submaps(m, 0.3, 0.3, occ, 0.2);
  CHECK(count(after.searched) == 0);
  CHECK(after.explored == before.explored);
}

TEST_CASE("sub-map inclusions hold for random variance fields", "[property]") {
  std::mt19937_64 rng(61);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 100; ++trial) {
    BeliefMap m = create_map(1.6, 1.6, 10, 1, 1.0);
    OccupancyGrid occ(m.nx(), m.ny(), Occupancy::kUnknown);
    for (std::size_t i = 0; i < m.sigma2().size(); ++i) {
      m.observed()[i] = u(rng) < 0.7;
      if (m.observed()[i]) {
        m.sigma2()[i] = u(rng);
        m.sigma2_search()[i] = u(rng);
      }
      occ[i] = static_cast<Occupancy>(static_cast<int>(u(rng) * 3) % 3);
    }
    const SubMaps s = derive_submaps(m, 0.3, 0.3, occ, 0.2);
    for (std::size_t i = 0; i < s.observed.size(); ++i) {
      if (s.explored[i]) REQUIRE(s.observed[i]);
      if (s.searched[i]) REQUIRE(s.observed[i]);
      if (occ[i] == Occupancy::kOccupied) REQUIRE_FALSE(s.navigable[i]);
    }
  }
}

TEST_CASE("occupancy carving frees the ray and marks the return") {
  PosedObservation o;
  o.pose = {0.15, 1.15, 0.0};
  o.intrinsics = Intrinsics::from_fov(9, 6, 1.0);
  o.depth = Grid<float>(9, 6, 1.5f);
  o.valid = Mask(9, 6, 1);
  o.hit_labels = Grid<std::string>(9, 6, "void");
  const GridGeometry g{20, 20, 0.1};
  OccupancyGrid occ(20, 20, Occupancy::kUnknown);
  update_occupancy(occ, o, g);
  // the central column hits a wall 1.5 m ahead
  CHECK(occ(16, 11) == Occupancy::kOccupied);
  for (int x = 1; x < 15; ++x) CHECK(occ(x, 11) == Occupancy::kFree);
  CHECK(occ(19, 11) == Occupancy::kUnknown);
  // occupied survives a later pass that would carve through it
  o.depth.fill(1.9f);
  update_occupancy(occ, o, g);
  CHECK(occ(16, 11) == Occupancy::kOccupied);
}

TEST_CASE("no frontiers when everything observed is explored") {
  SubMaps s = blank(6, 6);
  s.observed.fill(1);
  s.explored.fill(1);
  CHECK(extract_frontiers(s).empty());
}

TEST_CASE("5x5 split frontier is the boundary column") {
  SubMaps s = blank(5, 5);
  s.observed.fill(1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 2; ++x) s.explored(x, y) = 1;
  const auto fs = extract_frontiers(s);
  REQUIRE(fs.size() == 1);
  CHECK(as_sets(fs) == std::set<CellSet>{{{1, 0}, {1, 1}, {1, 2}, {1, 3}, {1, 4}}});
}

TEST_CASE("two unexplored pockets give two chains") {
  SubMaps s = blank(12, 5);
  s.observed.fill(1);
  s.explored.fill(1);
  for (int y = 1; y < 4; ++y) {
    s.explored(2, y) = 0;
    s.explored(9, y) = 0;
  }
  const auto fs = extract_frontiers(s);
  CHECK(fs.size() == 2);
}

TEST_CASE("short chains and chains away from N are dropped") {
  SubMaps s = blank(8, 8);
  s.observed.fill(1);
  s.explored.fill(1);
  s.explored(7, 7) = 0;  // corner pocket: boundary of 3 cells
  CHECK(extract_frontiers(s, 3).size() == 1);
  CHECK(extract_frontiers(s, 4).empty());
  s.navigable.fill(0);
  CHECK(extract_frontiers(s, 1).empty());
}

TEST_CASE("frontier chains match brute-force boundary and component oracles", "[property]") {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 500; ++trial) {
    const SubMaps s = random_submaps(rng, 16);
    std::set<CellSet> expected;
    for (const CellSet& comp : components_oracle(boundary_oracle(s)))
      if (comp.size() >= 3 && touches(comp, s.navigable)) expected.insert(comp);
    REQUIRE(as_sets(extract_frontiers(s)) == expected);
  }
}

TEST_CASE("chains partition the boundary", "[property]") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    SubMaps s = random_submaps(rng, 16);
    s.navigable.fill(1);
    const auto fs = extract_frontiers(s, 1);
    std::map<std::pair<int, int>, int> hits;
    for (const auto& f : fs)
      for (const Cell& c : f.cells) ++hits[{c.x, c.y}];
    const CellSet boundary = boundary_oracle(s);
    REQUIRE(hits.size() == boundary.size());
    for (const auto& [c, n] : hits) {
      REQUIRE(n == 1);
      REQUIRE(boundary.count(c) == 1);
    }
  }
}

TEST_CASE("frontier score is the maximum over the connected unexplored region") {
  // columns 0-1 explored, 2-3 observed-unexplored, column 4 unobserved,
  // 5-6 observed-unexplored holding a 0.9 behind the gap
  SubMaps s = blank(7, 7);
  Grid<float> sim(7, 7, 0.0f);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) s.observed(x, y) = x != 4;
    s.explored(0, y) = s.explored(1, y) = 1;
  }
  sim(3, 2) = 0.2f;
  sim(5, 3) = 0.9f;
  const auto fs = extract_frontiers(s);
  REQUIRE(fs.size() == 1);
  CHECK(score_frontier(fs[0], sim, s) == Approx(0.2));
  const auto region = frontier_region(fs[0], s);
  CHECK(region.size() == 14);
  for (const Cell& c : region) CHECK((c.x == 2 || c.x == 3));

  SECTION("all-zero region scores zero") {
    sim.fill(0.0f);
    CHECK(score_frontier(fs[0], sim, s) == 0.0);
  }
  SECTION("raising a region cell never lowers the score") {
    const double before = score_frontier(fs[0], sim, s);
    for (const Cell& c : region) {
      Grid<float> up = sim;
      up[c] = std::min(1.0f, up[c] + 0.3f);
      REQUIRE(score_frontier(fs[0], up, s) >= before);
    }
  }
  SECTION("a frontier with no unexplored neighbours scores -1") {
    SubMaps e = s;
    e.observed.fill(1);
    e.explored.fill(1);
    CHECK(score_frontier(frontier_of({Cell{0, 0}}), sim, e) == -1.0);
  }
}

TEST_CASE("frontier goals target a chain cell and carry the region score") {
  std::mt19937_64 rng(73);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int trial = 0; trial < 100; ++trial) {
    const SubMaps s = random_submaps(rng, 16);
    Grid<float> sim(16, 16);
    for (float& v : sim.data()) v = u(rng);
    for (const auto& f : extract_frontiers(s)) {
      const NavGoal g = make_frontier_goal(f, sim, s);
      REQUIRE(g.kind == GoalKind::kFrontier);
      REQUIRE(std::find(f.cells.begin(), f.cells.end(), g.target_cell) != f.cells.end());
      REQUIRE(g.score == Approx(score_frontier(f, sim, s)));
    }
  }
}

TEST_CASE("frontier scores of disjoint regions are independent") {
  SubMaps s = blank(12, 5);
  s.observed.fill(1);
  s.explored.fill(1);
  for (int y = 1; y < 4; ++y) s.explored(2, y) = s.explored(9, y) = 0;
  Grid<float> sim(12, 5, 0.0f);
  sim(2, 2) = 0.3f;
  sim(9, 2) = 0.8f;
  auto fs = extract_frontiers(s);
  REQUIRE(fs.size() == 2);
  const double a = score_frontier(fs[0], sim, s);
  sim(9, 2) = -0.5f;
  CHECK(score_frontier(fs[0], sim, s) == a);
}

TEST_CASE("cluster goals") {
  SubMaps s = blank(6, 4);
  s.observed.fill(1);
  s.explored.fill(1);
  Grid<float> sim(6, 4, 0.0f);
  sim(1, 1) = 0.5f;
  sim(2, 1) = 0.7f;
  sim(3, 1) = 0.6f;

  SECTION("nothing when C equals E") {
    s.searched = s.explored;
    CHECK(cluster_high_similarity(sim, s, 0.4).empty());
  }
  SECTION("one component of three cells") {
    const auto gs = cluster_high_similarity(sim, s, 0.4);
    REQUIRE(gs.size() == 1);
    CHECK(gs[0].kind == GoalKind::kCluster);
    CHECK(gs[0].score == Approx(0.7));
    CHECK(gs[0].target_cell == Cell{2, 1});
    CHECK(gs[0].support.size() == 3);
  }
  SECTION("two components score independently") {
    sim(5, 3) = 0.45f;
    const auto gs = cluster_high_similarity(sim, s, 0.4);
    REQUIRE(gs.size() == 2);
    CHECK(gs[0].score == Approx(0.7));
    CHECK(gs[1].score == Approx(0.45));
  }
  SECTION("ties pick the lowest row-major cell") {
    sim(3, 1) = 0.7f;
    CHECK(cluster_high_similarity(sim, s, 0.4)[0].target_cell == Cell{2, 1});
  }
}

TEST_CASE("cluster goals match a components oracle", "[property]") {
  std::mt19937_64 rng(79);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int trial = 0; trial < 200; ++trial) {
    SubMaps s = random_submaps(rng, 16);
    for (std::size_t i = 0; i < s.searched.size(); ++i) s.searched[i] = s.explored[i] && u(rng) < -0.3f;
    Grid<float> sim(16, 16);
    for (float& v : sim.data()) v = u(rng);
    CellSet cand;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (s.explored(x, y) && !s.searched(x, y) && sim(x, y) >= 0.35f) cand.insert({x, y});
    std::map<CellSet, double> expected;
    for (const CellSet& comp : components_oracle(cand)) {
      double best = -2;
      for (const auto& [x, y] : comp) best = std::max(best, double(sim(x, y)));
      expected[comp] = best;
    }
    const auto gs = cluster_high_similarity(sim, s, 0.35);
    REQUIRE(gs.size() == expected.size());
    for (const NavGoal& g : gs) {
      CellSet support;
      for (const Cell& c : g.support) support.insert({c.x, c.y});
      REQUIRE(expected.count(support) == 1);
      REQUIRE(g.score == Approx(expected[support]));
      REQUIRE(sim[g.target_cell] == g.score);
    }
  }
}

TEST_CASE("greedy goal selection") {
  NavGoal f{GoalKind::kFrontier, Cell{3, 3}, 0.4, {}, Cell{3, 3}};
  NavGoal c{GoalKind::kCluster, Cell{1, 1}, 0.6, {}, Cell{1, 1}};
  CHECK_FALSE(select_goal({}, {}).has_value());
  CHECK(select_goal({f}, {})->target_cell == Cell{3, 3});
  CHECK(select_goal({f}, {c})->kind == GoalKind::kCluster);
  c.score = f.score = 0.5;
  CHECK(select_goal({f}, {c})->kind == GoalKind::kFrontier);
  NavGoal f2 = f;
  f2.target_cell = Cell{0, 2};
  CHECK(select_goal({f, f2}, {})->target_cell == Cell{0, 2});
}

TEST_CASE("selection is invariant under monotone score transforms", "[property]") {
  std::mt19937_64 rng(83);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> cell(0, 15);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<NavGoal> fs, cs;
    for (int k = 0; k < 4; ++k) {
      // coarse scores so ties actually occur
      fs.push_back({GoalKind::kFrontier, Cell{cell(rng), cell(rng)}, std::round(u(rng) * 4) / 4, {}, {}});
      cs.push_back({GoalKind::kCluster, Cell{cell(rng), cell(rng)}, std::round(u(rng) * 4) / 4, {}, {}});
    }
    const NavGoal a = *select_goal(fs, cs);
    for (auto* list : {&fs, &cs})
      for (NavGoal& g : *list) g.score = std::exp(3 * g.score) + 7;
    const NavGoal b = *select_goal(fs, cs);
    REQUIRE(a.kind == b.kind);
    REQUIRE(a.target_cell == b.target_cell);
    REQUIRE(rank_goals(fs, cs).front().target_cell == b.target_cell);
  }
}

TEST_CASE("consensus filter examples") {
  SubMaps s = blank(10, 10);
  s.observed.fill(1);
  Grid<float> sim(10, 10);
  for (int r = 1; r <= 100; ++r) sim[r - 1] = 0.01f * r;

  const auto at_rank = [&](int r) { return Detection{"chair", sim.cell(r - 1), 1.0, false}; };
  const auto r96 = consensus_filter(at_rank(96), sim, s, 5.0);
  CHECK(r96.threshold == Approx(0.9505).margin(1e-6));
  CHECK(r96.accepted);
  CHECK_FALSE(consensus_filter(at_rank(94), sim, s, 5.0).accepted);
  CHECK_FALSE(consensus_filter(at_rank(95), sim, s, 5.0).accepted);
  CHECK(consensus_filter(at_rank(100), sim, s, 5.0).accepted);

  s.observed(0, 0) = 0;
  const auto out = consensus_filter(Detection{"chair", Cell{0, 0}, 1.0, false}, sim, s, 5.0);
  CHECK_FALSE(out.accepted);
  CHECK(out.verdict == ConsensusVerdict::kOutsideObserved);
  CHECK(consensus_filter(Detection{"chair", Cell{-1, 0}, 1.0, false}, sim, s, 5.0).verdict ==
        ConsensusVerdict::kOutsideObserved);
  CHECK_THROWS_AS(consensus_filter(at_rank(50), sim, s, 0.0), InvalidArgument);
  CHECK_THROWS_AS(consensus_filter(at_rank(50), sim, s, 100.0), InvalidArgument);
}

TEST_CASE("uniform similarity accepts every detection") {
  SubMaps s = blank(5, 5);
  s.observed.fill(1);
  const Grid<float> sim(5, 5, 0.3f);
  for (std::size_t i = 0; i < sim.size(); ++i) CHECK(consensus_filter({"tv", sim.cell(i), 1.0, false}, sim, s).accepted);
}

TEST_CASE("consensus acceptance rate tracks the percentile", "[property]") {
  for (double pct : {5.0, 20.0}) {
    std::mt19937_64 rng(89);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::uniform_int_distribution<int> pick(0, 99);
    SubMaps s = blank(10, 10);
    s.observed.fill(1);
    Grid<float> sim(10, 10);
    int accepted = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
      for (float& v : sim.data()) v = u(rng);
      accepted += consensus_filter({"tv", sim.cell(pick(rng)), 1.0, false}, sim, s, pct).accepted;
    }
    CHECK(double(accepted) / trials == Approx(pct / 100).margin(0.02));
  }
}

TEST_CASE("percentile uses linear interpolation") {
  std::vector<double> v{4, 1, 3, 2};
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 4.0);
  CHECK(percentile(v, 50) == 2.5);
  std::vector<double> none;
  CHECK_THROWS_AS(percentile(none, 50), InvalidArgument);
}

TEST_CASE("goal trace record lists goals and the selection") {
  const NavGoal g{GoalKind::kCluster, Cell{2, 5}, 0.75, {Cell{2, 5}, Cell{3, 5}}, Cell{2, 5}};
  const auto j = goal_trace_record(4, 1, 17, {g}, 0);
  CHECK(j["episode"] == 4);
  CHECK(j["object"] == 1);
  CHECK(j["step"] == 17);
  CHECK(j["goals"][0]["kind"] == "cluster");
  CHECK(j["goals"][0]["support"] == 2);
  CHECK(j["selected"] == 0);
  CHECK(goal_trace_record(4, 1, 18, {}, std::nullopt)["selected"].is_null());
}
