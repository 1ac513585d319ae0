#include <catch_amalgamated.hpp>

#include <chiplab/floorplan.hpp>

#include "oracles.hpp"

using namespace chiplab;
using Catch::Approx;

namespace {

FloorPlanConfig small_config(int chiplets, int tiles) {
  FloorPlanConfig c;
  c.chiplet_count = chiplets;
  c.tiles_per_boundary = tiles;
  c.ro_blocks.clear();
  return c;
}

const SpotHit* find_hit(const std::vector<SpotHit>& hits, NodeId id) {
  for (const auto& h : hits)
    if (h.node.id == id) return &h;
  return nullptr;
}

}  // namespace

TEST_CASE("vu9p preset has three chiplets and two Laguna boundaries") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  CHECK(plan.chiplets().size() == 3);
  CHECK(plan.boundary_count() == 2);
  CHECK(plan.sll_driver_count() == 2u * 17280u);
  CHECK(plan.chiplets()[0].width() == Approx(11660.0));
  CHECK(plan.chiplets()[0].height() == Approx(26000.0));
  CHECK(plan.ro_blocks().size() == 14);
}

TEST_CASE("single chiplet without tiles is a valid plan with no Laguna nodes") {
  const auto plan = build_floorplan(small_config(1, 0));
  CHECK(plan.boundary_count() == 0);
  CHECK(plan.sll_driver_count() == 0);
  CHECK_THROWS_AS(plan.sll_id(0, 0, 0, 0), IndexError);
  for (const auto& h : plan.nodes_in_spot({5000, 5000}, 5.0)) CHECK(h.node.kind == NodeKind::fabric_register);
}

TEST_CASE("two chiplets with ten tiles hold 240 drivers") {
  const auto plan = build_floorplan(small_config(2, 10));
  CHECK(plan.sll_driver_count() == 240);
}

TEST_CASE("driver count equals boundaries x tiles x 24 for valid configs") {
  const int chiplets = GENERATE(1, 2, 3, 4, 5);
  const int tiles = GENERATE(0, 1, 10, 360, 720, 1000);
  const auto plan = build_floorplan(small_config(chiplets, tiles));
  CHECK(plan.sll_driver_count() == static_cast<std::size_t>((chiplets - 1) * tiles * 24));
}

TEST_CASE("spot matching a driver footprint covers it fully") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  const NodeId id = plan.sll_id(0, 360, 2, 3);
  const auto n = plan.resolve(id);
  const auto hits = nodes_in_spot(plan, n.center, plan.driver_radius_um());
  const auto* h = find_hit(hits, id);
  REQUIRE(h != nullptr);
  CHECK(h->weight == Approx(1.0).margin(1e-9));
}

TEST_CASE("spot between two fabric registers hits both partially") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  const NodeId a = plan.fabric_id(0, 100, 100), b = plan.fabric_id(0, 101, 100);
  const Point ca = plan.resolve(a).center, cb = plan.resolve(b).center;
  const Point mid{(ca.x + cb.x) / 2, (ca.y + cb.y) / 2};
  const double r = 1.0;
  const auto hits = plan.nodes_in_spot(mid, r);
  const auto* ha = find_hit(hits, a);
  const auto* hb = find_hit(hits, b);
  REQUIRE(ha != nullptr);
  REQUIRE(hb != nullptr);
  CHECK(ha->weight + hb->weight < 2.0);
  const double fr = plan.config().fabric_radius_um;
  const double expected = oracle::disc_overlap(distance(mid, ca), r, fr) / (oracle::kPi * fr * fr);
  CHECK(ha->weight == Approx(expected).epsilon(2e-3));
  CHECK(hb->weight == Approx(expected).epsilon(2e-3));
}

TEST_CASE("spot inside the interposer gap finds nothing") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  const auto& c = plan.config();
  const Point gap{c.chiplet_width_um + c.chiplet_gap_um / 2, 0.5 * c.chiplet_height_um};
  CHECK(plan.nodes_in_spot(gap, 1.0).empty());
}

TEST_CASE("lanes of one site are at least one pitch apart") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  for (int lane = 0; lane + 1 < kLanesPerSite; ++lane) {
    const Point a = locate_laguna(plan, 17, 1, lane);
    const Point b = locate_laguna(plan, 17, 1, lane + 1);
    CHECK(distance(a, b) >= plan.config().driver_pitch_um - 1e-9);
  }
  for (int site = 0; site + 1 < kSitesPerTile; ++site)
    CHECK(distance(locate_laguna(plan, 17, site, 0), locate_laguna(plan, 17, site + 1, 0)) >= plan.config().site_pitch_um - 1e-9);
}

TEST_CASE("Laguna index out of range is an index error") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  CHECK_THROWS_AS(locate_laguna(plan, 720, 0, 0), IndexError);
  CHECK_THROWS_AS(locate_laguna(plan, 0, 4, 0), IndexError);
  CHECK_THROWS_AS(locate_laguna(plan, 0, 0, 6), IndexError);
  CHECK_THROWS_AS(plan.locate_laguna(2, 0, 0, 0), IndexError);
  CHECK_NOTHROW(locate_laguna(plan, 719, 3, 5));
}

TEST_CASE("overlapping ring-oscillator blocks are rejected") {
  auto c = small_config(1, 0);
  c.ro_blocks = {{0, {1000, 1000}}, {1, {1010, 1010}}};
  CHECK_THROWS_AS(build_floorplan(c), PlacementError);
  c.ro_blocks = {{0, {1000, 1000}}, {0, {3000, 3000}}};
  CHECK_THROWS_AS(build_floorplan(c), PlacementError);
  c.ro_blocks = {{0, {5.0, 1000}}};
  CHECK_THROWS_AS(build_floorplan(c), PlacementError);
}

TEST_CASE("invalid configurations raise config errors") {
  auto c = small_config(3, 720);
  c.laguna_columns = 7;
  CHECK_THROWS_AS(build_floorplan(c), ConfigError);
  c = small_config(0, 0);
  CHECK_THROWS_AS(build_floorplan(c), ConfigError);
  c = small_config(2, 10);
  c.driver_area_ratio = 1.0;
  CHECK_THROWS_AS(build_floorplan(c), ConfigError);
  c = small_config(2, 10);
  c.fabric_pitch_um = 0.5;
  CHECK_THROWS_AS(build_floorplan(c), ConfigError);
}

TEST_CASE("driver footprint area is the configured multiple of a fabric register") {
  auto c = FloorPlanConfig::vu9p();
  const auto plan = build_floorplan(c);
  const double rd = plan.driver_radius_um(), rf = c.fabric_radius_um;
  CHECK(rd * rd / (rf * rf) == Approx(c.driver_area_ratio));
}

TEST_CASE("every node is found by a spot matching its own footprint") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  std::mt19937_64 rng(12345);
  std::vector<NodeId> ids;
  for (int i = 0; i < 200; ++i) {
    const int b = static_cast<int>(rng() % 2), t = static_cast<int>(rng() % 720);
    ids.push_back(plan.sll_id(b, t, static_cast<int>(rng() % 4), static_cast<int>(rng() % 6)));
  }
  for (int i = 0; i < 200; ++i) {
    const int chip = static_cast<int>(rng() % 3);
    const int col = static_cast<int>(rng() % plan.fabric_cols()), row = static_cast<int>(rng() % plan.fabric_rows());
    try {
      ids.push_back(plan.fabric_id(chip, col, row));
    } catch (const IndexError&) {
    }
  }
  for (const auto& b : plan.ro_blocks()) ids.push_back(plan.ro_id(b.id, static_cast<int>(rng() % 256)));
  for (auto id : ids) {
    const auto n = plan.resolve(id);
    const auto* h = find_hit(plan.nodes_in_spot(n.center, n.radius_um), id);
    REQUIRE(h != nullptr);
    CHECK(h->weight >= 0.9);
  }
}

TEST_CASE("identical configs build identical plans") {
  const auto a = build_floorplan(FloorPlanConfig::vu9p());
  const auto b = build_floorplan(FloorPlanConfig::vu9p());
  CHECK(a == b);
  for (int t : {0, 359, 719})
    CHECK(a.locate_laguna(1, t, 3, 5) == b.locate_laguna(1, t, 3, 5));
}

TEST_CASE("tile rectangles contain their drivers and are separated by a gap") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  const Rect t0 = plan.laguna_tile_rect(0, 10), t1 = plan.laguna_tile_rect(0, 11);
  for (int s = 0; s < kSitesPerTile; ++s)
    for (int l = 0; l < kLanesPerSite; ++l) CHECK(t0.contains(plan.locate_laguna(0, 10, s, l)));
  CHECK(t1.y0 > t0.y1);
  CHECK(plan.laguna_strip(0).contains(t0));
}

TEST_CASE("resolving a foreign id is a lookup error") {
  const auto plan = build_floorplan(small_config(2, 10));
  const auto big = build_floorplan(FloorPlanConfig::vu9p());
  CHECK_THROWS_AS(plan.resolve(big.sll_id(0, 500, 0, 0)), LookupError);
  CHECK_FALSE(plan.contains(big.sll_id(1, 0, 0, 0)));
}

TEST_CASE("fabric registers are excluded under Laguna columns and oscillator blocks") {
  const auto plan = build_floorplan(FloorPlanConfig::vu9p());
  const Point drv = plan.locate_laguna(0, 100, 0, 0);
  for (const auto& h : plan.nodes_in_spot(drv, 0.5)) CHECK(h.node.kind == NodeKind::sll_driver);
  const auto& blk = plan.ro_blocks().front();
  for (const auto& h : plan.nodes_in_spot(blk.center, 3.0)) CHECK(h.node.kind == NodeKind::ring_oscillator);
}
