#pragma once

// Geometric model of a multi-chiplet package: chiplets side by side on an
// interposer, a Laguna column hugging each chiplet boundary, a uniform grid
// of fabric registers, and placed blocks of ring oscillators.
//
// Fabric registers are never materialised; their ids and positions are
// computed from the grid arithmetic, which keeps a full-size package at a few
// kilobytes.

#include <chiplab/errors.hpp>
#include <chiplab/geometry.hpp>

#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace chiplab {

enum class NodeKind : std::uint8_t { fabric_register = 0, sll_driver = 1, ring_oscillator = 2 };

inline std::string_view to_string(NodeKind k) noexcept {
  switch (k) {
    case NodeKind::fabric_register: return "fabric_register";
    case NodeKind::sll_driver: return "sll_driver";
    case NodeKind::ring_oscillator: return "ring_oscillator";
  }
  return "unknown";
}

/// Opaque node identifier. The top two bits carry the kind; the remaining
/// bits pack kind-specific indices.
struct NodeId {
  std::uint64_t value = 0;

  NodeKind kind() const noexcept { return static_cast<NodeKind>(value >> 62); }
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct LagunaIndex {
  int boundary = 0;
  int tile = 0;
  int site = 0;
  int lane = 0;
  friend bool operator==(const LagunaIndex&, const LagunaIndex&) = default;
};

struct NodeRef {
  NodeId id;
  NodeKind kind = NodeKind::fabric_register;
  Point center;
  double radius_um = 0.0;
  int chiplet = 0;
  std::optional<LagunaIndex> laguna;  // set for SLL drivers only
};

struct SpotHit {
  NodeRef node;
  double weight = 0.0;  // fraction of the node footprint covered by the disc
};

struct RoBlockPlacement {
  int id = 0;
  Point center;
  friend bool operator==(const RoBlockPlacement&, const RoBlockPlacement&) = default;
};

struct FloorPlanConfig {
  int chiplet_count = 3;
  double chiplet_width_um = 11660.0;
  double chiplet_height_um = 26000.0;
  double chiplet_gap_um = 10.0;

  int tiles_per_boundary = 720;
  int laguna_columns = 1;
  double driver_pitch_um = 3.0;       // lane pitch inside a site
  double site_pitch_um = 6.0;         // vertical pitch between sites of a tile
  double laguna_edge_margin_um = 40.0;
  double laguna_column_pitch_um = 40.0;

  double fabric_pitch_um = 2.0;
  double fabric_radius_um = 0.35;
  // Optical footprint area of an SLL driver relative to a fabric register.
  double driver_area_ratio = 4.0;

  int ro_grid = 16;  // block is ro_grid x ro_grid oscillators
  double ro_pitch_um = 4.0;
  double ro_radius_um = 0.35;
  std::vector<RoBlockPlacement> ro_blocks;

  friend bool operator==(const FloorPlanConfig&, const FloorPlanConfig&) = default;

  /// Three 11.66 mm x 26 mm chiplets, 720 Laguna tiles per boundary, and 14
  /// guidepost ring-oscillator blocks.
  static FloorPlanConfig vu9p();
};

inline constexpr int kSitesPerTile = 4;
inline constexpr int kLanesPerSite = 6;
inline constexpr int kDriversPerTile = kSitesPerTile * kLanesPerSite;

struct RoBlock {
  int id = 0;
  int chiplet = 0;
  Point center;
  Rect rect;
  friend bool operator==(const RoBlock&, const RoBlock&) = default;
};

class FloorPlan {
 public:
  static FloorPlan build(const FloorPlanConfig& config);

  const FloorPlanConfig& config() const noexcept { return cfg_; }
  const std::vector<Rect>& chiplets() const noexcept { return chiplets_; }
  const std::vector<RoBlock>& ro_blocks() const noexcept { return blocks_; }
  Rect package_bounds() const noexcept { return bounds_; }

  int boundary_count() const noexcept { return cfg_.chiplet_count - 1; }
  std::size_t sll_driver_count() const noexcept {
    return static_cast<std::size_t>(boundary_count()) * cfg_.tiles_per_boundary * kDriversPerTile;
  }
  int tiles_per_column() const noexcept {
    return cfg_.laguna_columns > 0 ? cfg_.tiles_per_boundary / cfg_.laguna_columns : 0;
  }
  double tile_pitch_um() const noexcept { return cfg_.chiplet_height_um / tiles_per_column(); }
  double tile_height_um() const noexcept { return kSitesPerTile * cfg_.site_pitch_um; }
  double driver_radius_um() const noexcept { return cfg_.fabric_radius_um * std::sqrt(cfg_.driver_area_ratio); }
  int fabric_cols() const noexcept { return static_cast<int>(std::floor(cfg_.chiplet_width_um / cfg_.fabric_pitch_um)); }
  int fabric_rows() const noexcept { return static_cast<int>(std::floor(cfg_.chiplet_height_um / cfg_.fabric_pitch_um)); }

  /// Rectangle enclosing the Laguna column(s) of a boundary.
  Rect laguna_strip(int boundary) const;
  /// Rectangle enclosing one tile (its 24 driver footprints plus half a pitch).
  Rect laguna_tile_rect(int boundary, int tile) const;

  NodeId sll_id(int boundary, int tile, int site, int lane) const;
  NodeId fabric_id(int chiplet, int col, int row) const;
  NodeId ro_id(int block, int index) const;

  /// Resolves any id produced by this plan; throws LookupError otherwise.
  NodeRef resolve(NodeId id) const;
  bool contains(NodeId id) const noexcept;

  Point locate_laguna(int boundary, int tile, int site, int lane) const;

  std::vector<SpotHit> nodes_in_spot(Point center, double radius_um) const;

  friend bool operator==(const FloorPlan& a, const FloorPlan& b) {
    return a.cfg_ == b.cfg_ && a.chiplets_ == b.chiplets_ && a.blocks_ == b.blocks_ && a.bounds_ == b.bounds_;
  }

 private:
  double chiplet_x0(int c) const noexcept { return c * (cfg_.chiplet_width_um + cfg_.chiplet_gap_um); }
  double column_left(int boundary, int col) const noexcept {
    return chiplet_x0(boundary) + cfg_.chiplet_width_um - cfg_.laguna_edge_margin_um -
           kLanesPerSite * cfg_.driver_pitch_um - col * cfg_.laguna_column_pitch_um;
  }
  Point driver_center(int boundary, int tile, int site, int lane) const noexcept;
  Point fabric_center(int chiplet, int col, int row) const noexcept {
    return {chiplet_x0(chiplet) + (col + 0.5) * cfg_.fabric_pitch_um, (row + 0.5) * cfg_.fabric_pitch_um};
  }
  bool fabric_excluded(int chiplet, Point p) const noexcept;
  void check_laguna(int boundary, int tile, int site, int lane) const;

  FloorPlanConfig cfg_;
  std::vector<Rect> chiplets_;
  std::vector<RoBlock> blocks_;
  Rect bounds_;
};

// ---------------------------------------------------------------------------

inline FloorPlanConfig FloorPlanConfig::vu9p() {
  FloorPlanConfig c;
  int id = 0;
  for (int chip = 0; chip < c.chiplet_count; ++chip) {
    const double x0 = chip * (c.chiplet_width_um + c.chiplet_gap_um);
    for (double fy : {0.25, 0.75})
      for (double fx : {0.25, 0.75})
        c.ro_blocks.push_back({id++, {x0 + fx * c.chiplet_width_um, fy * c.chiplet_height_um}});
  }
  // Guideposts next to the first two Laguna columns, used to steer toward them.
  for (int chip = 0; chip < c.chiplet_count - 1; ++chip) {
    const double right = chip * (c.chiplet_width_um + c.chiplet_gap_um) + c.chiplet_width_um;
    c.ro_blocks.push_back({id++, {right - 400.0, 0.5 * c.chiplet_height_um}});
  }
  return c;
}

inline FloorPlan FloorPlan::build(const FloorPlanConfig& config) {
  const auto& c = config;
  if (c.chiplet_count < 1) throw ConfigError("chiplet_count must be >= 1");
  if (c.chiplet_count > 255) throw ConfigError("chiplet_count must be < 256");
  if (!(c.chiplet_width_um > 0) || !(c.chiplet_height_um > 0)) throw ConfigError("chiplet dimensions must be positive");
  if (c.chiplet_gap_um < 0) throw ConfigError("chiplet_gap_um must be >= 0");
  if (c.tiles_per_boundary < 0) throw ConfigError("tiles_per_boundary must be >= 0");
  if (c.laguna_columns < 1) throw ConfigError("laguna_columns must be >= 1");
  if (c.tiles_per_boundary % c.laguna_columns != 0)
    throw ConfigError("tiles_per_boundary (" + std::to_string(c.tiles_per_boundary) +
                      ") is not divisible by laguna_columns (" + std::to_string(c.laguna_columns) + ")");
  if (!(c.fabric_radius_um > 0) || !(c.fabric_pitch_um >= 2 * c.fabric_radius_um))
    throw ConfigError("fabric pitch must be at least one footprint diameter");
  if (!(c.driver_area_ratio > 1.0)) throw ConfigError("driver_area_ratio must be > 1");
  if (!(c.ro_radius_um > 0) || !(c.ro_pitch_um >= 2 * c.ro_radius_um) || c.ro_grid < 1)
    throw ConfigError("invalid ring-oscillator block geometry");

  FloorPlan p;
  p.cfg_ = c;
  const double r_drv = p.driver_radius_um();
  if (c.driver_pitch_um < 2 * r_drv || c.site_pitch_um < 2 * r_drv)
    throw ConfigError("driver pitch smaller than driver footprint");

  for (int i = 0; i < c.chiplet_count; ++i) {
    const double x0 = p.chiplet_x0(i);
    p.chiplets_.push_back({x0, 0.0, x0 + c.chiplet_width_um, c.chiplet_height_um});
  }
  p.bounds_ = {0.0, 0.0, p.chiplets_.back().x1, c.chiplet_height_um};

  if (p.boundary_count() > 0 && c.tiles_per_boundary > 0) {
    if (p.tile_pitch_um() < p.tile_height_um() + 1.0)
      throw ConfigError("Laguna tiles do not fit: " + std::to_string(p.tiles_per_column()) + " tiles per column");
    const double strip_w = (c.laguna_columns - 1) * c.laguna_column_pitch_um + kLanesPerSite * c.driver_pitch_um;
    if (c.laguna_column_pitch_um < kLanesPerSite * c.driver_pitch_um + c.fabric_pitch_um && c.laguna_columns > 1)
      throw ConfigError("laguna_column_pitch_um narrower than a column");
    if (strip_w + c.laguna_edge_margin_um > c.chiplet_width_um) throw ConfigError("Laguna columns wider than the chiplet");
  }

  const double half = 0.5 * c.ro_grid * c.ro_pitch_um;
  for (const auto& b : c.ro_blocks) {
    RoBlock blk{b.id, -1, b.center, {b.center.x - half, b.center.y - half, b.center.x + half, b.center.y + half}};
    for (int i = 0; i < c.chiplet_count; ++i)
      if (p.chiplets_[i].contains(blk.rect)) blk.chiplet = i;
    if (blk.chiplet < 0)
      throw PlacementError("ring-oscillator block " + std::to_string(b.id) + " is not inside a chiplet");
    if (blk.chiplet < p.boundary_count() && c.tiles_per_boundary > 0 && blk.rect.overlaps(p.laguna_strip(blk.chiplet)))
      throw PlacementError("ring-oscillator block " + std::to_string(b.id) + " overlaps a Laguna column");
    for (const auto& other : p.blocks_) {
      if (other.id == b.id) throw PlacementError("duplicate ring-oscillator block id " + std::to_string(b.id));
      if (other.rect.overlaps(blk.rect))
        throw PlacementError("ring-oscillator blocks " + std::to_string(other.id) + " and " + std::to_string(b.id) +
                             " overlap");
    }
    p.blocks_.push_back(blk);
  }
  return p;
}

inline Rect FloorPlan::laguna_strip(int boundary) const {
  const double right = column_left(boundary, 0) + kLanesPerSite * cfg_.driver_pitch_um;
  const double left = column_left(boundary, cfg_.laguna_columns - 1);
  return {left - cfg_.fabric_pitch_um, 0.0, right + cfg_.fabric_pitch_um, cfg_.chiplet_height_um};
}

inline Rect FloorPlan::laguna_tile_rect(int boundary, int tile) const {
  check_laguna(boundary, tile, 0, 0);
  const Point lo = driver_center(boundary, tile, 0, 0);
  const Point hi = driver_center(boundary, tile, kSitesPerTile - 1, kLanesPerSite - 1);
  return {lo.x - 0.5 * cfg_.driver_pitch_um, lo.y - 0.5 * cfg_.site_pitch_um, hi.x + 0.5 * cfg_.driver_pitch_um,
          hi.y + 0.5 * cfg_.site_pitch_um};
}

inline Point FloorPlan::driver_center(int boundary, int tile, int site, int lane) const noexcept {
  const int per_col = tiles_per_column();
  const int col = tile / per_col;
  const int row = tile % per_col;
  const double gap = tile_pitch_um() - tile_height_um();
  const double y0 = row * tile_pitch_um() + 0.5 * gap;
  return {column_left(boundary, col) + (lane + 0.5) * cfg_.driver_pitch_um, y0 + (site + 0.5) * cfg_.site_pitch_um};
}

inline void FloorPlan::check_laguna(int boundary, int tile, int site, int lane) const {
  if (boundary < 0 || boundary >= boundary_count() || tile < 0 || tile >= cfg_.tiles_per_boundary || site < 0 ||
      site >= kSitesPerTile || lane < 0 || lane >= kLanesPerSite)
    throw IndexError("Laguna index out of range: boundary " + std::to_string(boundary) + ", tile " +
                     std::to_string(tile) + ", site " + std::to_string(site) + ", lane " + std::to_string(lane));
}

inline Point FloorPlan::locate_laguna(int boundary, int tile, int site, int lane) const {
  check_laguna(boundary, tile, site, lane);
  return driver_center(boundary, tile, site, lane);
}

inline bool FloorPlan::fabric_excluded(int chiplet, Point p) const noexcept {
  if (chiplet < boundary_count() && cfg_.tiles_per_boundary > 0 && laguna_strip(chiplet).contains(p)) return true;
  for (const auto& b : blocks_)
    if (b.chiplet == chiplet && b.rect.contains(p)) return true;
  return false;
}

inline NodeId FloorPlan::sll_id(int boundary, int tile, int site, int lane) const {
  check_laguna(boundary, tile, site, lane);
  return NodeId{(std::uint64_t{1} << 62) | (std::uint64_t(boundary) << 40) | (std::uint64_t(tile) << 8) |
                (std::uint64_t(site) << 4) | std::uint64_t(lane)};
}

inline NodeId FloorPlan::fabric_id(int chiplet, int col, int row) const {
  if (chiplet < 0 || chiplet >= cfg_.chiplet_count || col < 0 || col >= fabric_cols() || row < 0 ||
      row >= fabric_rows())
    throw IndexError("fabric register index out of range");
  if (fabric_excluded(chiplet, fabric_center(chiplet, col, row)))
    throw IndexError("no fabric register at chiplet " + std::to_string(chiplet) + " col " + std::to_string(col) +
                     " row " + std::to_string(row));
  return NodeId{(std::uint64_t(chiplet) << 40) | (std::uint64_t(col) << 20) | std::uint64_t(row)};
}

inline NodeId FloorPlan::ro_id(int block, int index) const {
  const bool known = std::any_of(blocks_.begin(), blocks_.end(), [&](const RoBlock& b) { return b.id == block; });
  if (!known || index < 0 || index >= cfg_.ro_grid * cfg_.ro_grid || block < 0)
    throw IndexError("ring oscillator index out of range");
  return NodeId{(std::uint64_t{2} << 62) | (std::uint64_t(block) << 20) | std::uint64_t(index)};
}

inline bool FloorPlan::contains(NodeId id) const noexcept {
  try {
    (void)resolve(id);
    return true;
  } catch (const Error&) {
    return false;
  }
}

inline NodeRef FloorPlan::resolve(NodeId id) const {
  const std::uint64_t v = id.value;
  NodeRef r;
  r.id = id;
  switch (id.kind()) {
    case NodeKind::fabric_register: {
      const int chip = static_cast<int>((v >> 40) & 0xFF);
      const int col = static_cast<int>((v >> 20) & 0xFFFFF);
      const int row = static_cast<int>(v & 0xFFFFF);
      if ((v >> 48) != 0 || chip >= cfg_.chiplet_count || col >= fabric_cols() || row >= fabric_rows() ||
          fabric_excluded(chip, fabric_center(chip, col, row)))
        break;
      r.kind = NodeKind::fabric_register;
      r.center = fabric_center(chip, col, row);
      r.radius_um = cfg_.fabric_radius_um;
      r.chiplet = chip;
      return r;
    }
    case NodeKind::sll_driver: {
      const int b = static_cast<int>((v >> 40) & 0x3FFFFF);
      const int tile = static_cast<int>((v >> 8) & 0xFFFFFFFF);
      const int site = static_cast<int>((v >> 4) & 0xF);
      const int lane = static_cast<int>(v & 0xF);
      if (b >= boundary_count() || tile >= cfg_.tiles_per_boundary || site >= kSitesPerTile || lane >= kLanesPerSite)
        break;
      r.kind = NodeKind::sll_driver;
      r.center = driver_center(b, tile, site, lane);
      r.radius_um = driver_radius_um();
      r.chiplet = b;
      r.laguna = LagunaIndex{b, tile, site, lane};
      return r;
    }
    case NodeKind::ring_oscillator: {
      const int block = static_cast<int>((v >> 20) & 0xFFFFFFFFFF);
      const int index = static_cast<int>(v & 0xFFFFF);
      for (const auto& b : blocks_) {
        if (b.id != block || index >= cfg_.ro_grid * cfg_.ro_grid) continue;
        r.kind = NodeKind::ring_oscillator;
        r.center = {b.rect.x0 + (index % cfg_.ro_grid + 0.5) * cfg_.ro_pitch_um,
                    b.rect.y0 + (index / cfg_.ro_grid + 0.5) * cfg_.ro_pitch_um};
        r.radius_um = cfg_.ro_radius_um;
        r.chiplet = b.chiplet;
        return r;
      }
      break;
    }
  }
  throw LookupError("unknown node id " + std::to_string(v));
}

inline std::vector<SpotHit> FloorPlan::nodes_in_spot(Point c, double radius) const {
  std::vector<SpotHit> hits;
  if (!(radius > 0)) return hits;

  auto add = [&](NodeRef n) {
    const double d = distance(c, n.center);
    if (d >= radius + n.radius_um) return;
    const double w = disc_intersection_area(d, radius, n.radius_um) / disc_area(n.radius_um);
    if (w > 0) hits.push_back({std::move(n), std::min(1.0, w)});
  };
  // Index range [lo, hi] of grid cells (centres at (i + 0.5) * pitch from
  // origin) whose centre lies within `reach` of coordinate v.
  auto cell_range = [](double v, double origin, double pitch, double reach, int count) {
    int lo = static_cast<int>(std::ceil((v - reach - origin) / pitch - 0.5));
    int hi = static_cast<int>(std::floor((v + reach - origin) / pitch - 0.5));
    return std::pair{std::max(lo, 0), std::min(hi, count - 1)};
  };

  for (int chip = 0; chip < cfg_.chiplet_count; ++chip) {
    const Rect& die = chiplets_[chip];
    if (!die.expanded(radius + driver_radius_um() + cfg_.ro_pitch_um).contains(c)) continue;

    const double fr = cfg_.fabric_radius_um;
    const auto [i0, i1] = cell_range(c.x, die.x0, cfg_.fabric_pitch_um, radius + fr, fabric_cols());
    const auto [j0, j1] = cell_range(c.y, 0.0, cfg_.fabric_pitch_um, radius + fr, fabric_rows());
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j) {
        const Point p = fabric_center(chip, i, j);
        if (distance(p, c) >= radius + fr || fabric_excluded(chip, p)) continue;
        add({NodeId{(std::uint64_t(chip) << 40) | (std::uint64_t(i) << 20) | std::uint64_t(j)},
             NodeKind::fabric_register, p, fr, chip, std::nullopt});
      }

    if (chip < boundary_count() && cfg_.tiles_per_boundary > 0) {
      const double rd = driver_radius_um();
      const int per_col = tiles_per_column();
      for (int col = 0; col < cfg_.laguna_columns; ++col) {
        const double left = column_left(chip, col);
        if (c.x + radius + rd < left || c.x - radius - rd > left + kLanesPerSite * cfg_.driver_pitch_um) continue;
        const int r0 = std::max(0, static_cast<int>(std::floor((c.y - radius - rd) / tile_pitch_um())));
        const int r1 = std::min(per_col - 1, static_cast<int>(std::floor((c.y + radius + rd) / tile_pitch_um())));
        for (int row = r0; row <= r1; ++row)
          for (int site = 0; site < kSitesPerTile; ++site)
            for (int lane = 0; lane < kLanesPerSite; ++lane) {
              const int tile = col * per_col + row;
              add({sll_id(chip, tile, site, lane), NodeKind::sll_driver, driver_center(chip, tile, site, lane), rd,
                   chip, LagunaIndex{chip, tile, site, lane}});
            }
      }
    }

    for (const auto& b : blocks_) {
      if (b.chiplet != chip || !b.rect.expanded(radius + cfg_.ro_radius_um).contains(c)) continue;
      const double reach = radius + cfg_.ro_radius_um;
      const auto [a0, a1] = cell_range(c.x, b.rect.x0, cfg_.ro_pitch_um, reach, cfg_.ro_grid);
      const auto [b0, b1] = cell_range(c.y, b.rect.y0, cfg_.ro_pitch_um, reach, cfg_.ro_grid);
      for (int row = b0; row <= b1; ++row)
        for (int col = a0; col <= a1; ++col) {
          const int index = row * cfg_.ro_grid + col;
          add({NodeId{(std::uint64_t{2} << 62) | (std::uint64_t(b.id) << 20) | std::uint64_t(index)},
               NodeKind::ring_oscillator,
               {b.rect.x0 + (col + 0.5) * cfg_.ro_pitch_um, b.rect.y0 + (row + 0.5) * cfg_.ro_pitch_um},
               cfg_.ro_radius_um, chip, std::nullopt});
        }
    }
  }
  return hits;
}

// Free-function spellings of the core floorplan operations.

inline FloorPlan build_floorplan(const FloorPlanConfig& config) { return FloorPlan::build(config); }

inline std::vector<SpotHit> nodes_in_spot(const FloorPlan& plan, Point center, double radius_um) {
  return plan.nodes_in_spot(center, radius_um);
}

inline Point locate_laguna(const FloorPlan& plan, int tile, int site, int lane, int boundary = 0) {
  return plan.locate_laguna(boundary, tile, site, lane);
}

}  // namespace chiplab
