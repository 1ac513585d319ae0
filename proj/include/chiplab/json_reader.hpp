#pragma once

// Strict JSON field access for scenario documents and service commands.
// Every failure raises ValidationError carrying the offending field path.

#include <chiplab/errors.hpp>
#include <chiplab/floorplan.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/stimulus.hpp>

#include <json.hpp>

#include <cmath>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace chiplab {

using json = nlohmann::json;

class JsonReader {
 public:
  JsonReader(const json& j, std::string path = "") : j_(&j), path_(std::move(path)) {}

  const json& raw() const noexcept { return *j_; }
  const std::string& path() const noexcept { return path_; }
  std::string path_of(std::string_view key) const { return path_ + "/" + std::string(key); }

  [[noreturn]] void fail(const std::string& msg) const { throw ValidationError(path_.empty() ? "/" : path_, msg); }

  bool is_object() const noexcept { return j_->is_object(); }
  bool is_array() const noexcept { return j_->is_array(); }

  const JsonReader& expect_object() const {
    if (!j_->is_object()) fail("expected an object");
    return *this;
  }

  /// Rejects keys outside `allowed`.
  const JsonReader& allow(std::initializer_list<std::string_view> allowed) const {
    if (!j_->is_object()) fail("expected an object");
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      bool ok = false;
      for (auto a : allowed) ok = ok || it.key() == a;
      if (!ok) throw ValidationError(path_of(it.key()), "unknown key");
    }
    return *this;
  }

  bool has(std::string_view key) const { return j_->is_object() && j_->contains(key); }

  JsonReader at(std::string_view key) const {
    if (!j_->is_object()) fail("expected an object");
    auto it = j_->find(key);
    if (it == j_->end()) throw ValidationError(path_of(key), "missing required field");
    return JsonReader(*it, path_of(key));
  }

  JsonReader index(std::size_t i) const { return JsonReader((*j_)[i], path_ + "/" + std::to_string(i)); }
  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }
  std::vector<JsonReader> items() const {
    std::vector<JsonReader> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(index(i));
    return out;
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }
  std::int64_t integer() const {
    if (j_->is_number_integer() || j_->is_number_unsigned()) return j_->get<std::int64_t>();
    if (j_->is_number_float()) {
      const double v = j_->get<double>();
      if (v == std::floor(v) && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
    }
    fail("expected an integer");
  }
  std::uint64_t uinteger() const {
    if (j_->is_number_unsigned()) return j_->get<std::uint64_t>();
    const auto v = integer();
    if (v < 0) fail("expected a non-negative integer");
    return static_cast<std::uint64_t>(v);
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected a boolean");
    return j_->get<bool>();
  }
  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  double num(std::string_view key) const { return at(key).number(); }
  double num(std::string_view key, double def) const { return has(key) ? at(key).number() : def; }
  int integer(std::string_view key) const { return static_cast<int>(at(key).integer()); }
  int integer(std::string_view key, int def) const { return has(key) ? static_cast<int>(at(key).integer()) : def; }
  bool flag(std::string_view key, bool def) const { return has(key) ? at(key).boolean() : def; }
  std::string str(std::string_view key) const { return at(key).string(); }
  std::string str(std::string_view key, std::string def) const { return has(key) ? at(key).string() : def; }

  double positive(std::string_view key, std::optional<double> def = {}) const {
    const double v = def && !has(key) ? *def : num(key);
    if (!(v > 0)) throw ValidationError(path_of(key), "must be > 0");
    return v;
  }
  double in_range(std::string_view key, double lo, double hi, std::optional<double> def = {}) const {
    const double v = def && !has(key) ? *def : num(key);
    if (!(v >= lo && v <= hi))
      throw ValidationError(path_of(key), "must be within [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    return v;
  }

  /// Integer or inclusive [lo, hi] pair.
  std::pair<int, int> int_range(std::string_view key) const {
    auto r = at(key);
    if (r.raw().is_array()) {
      if (r.size() != 2) r.fail("expected [lo, hi]");
      const int lo = static_cast<int>(r.index(0).integer()), hi = static_cast<int>(r.index(1).integer());
      if (hi < lo) r.fail("expected lo <= hi");
      return {lo, hi};
    }
    const int v = static_cast<int>(r.integer());
    return {v, v};
  }

  std::vector<double> numbers() const {
    std::vector<double> out;
    for (auto& it : items()) out.push_back(it.number());
    return out;
  }

 private:
  const json* j_;
  std::string path_;
};

/// Wraps errors raised while interpreting a field so they carry its path.
template <class F>
auto at_path(const JsonReader& r, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(r.path().empty() ? "/" : r.path(), e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared document fragments

inline FloorPlanConfig parse_floorplan_config(const JsonReader& r) {
  r.allow({"preset", "chiplet_count", "chiplet_width_um", "chiplet_height_um", "chiplet_gap_um", "tiles_per_boundary",
           "laguna_columns", "driver_pitch_um", "site_pitch_um", "laguna_edge_margin_um", "laguna_column_pitch_um",
           "fabric_pitch_um", "fabric_radius_um", "driver_area_ratio", "ro_grid", "ro_pitch_um", "ro_radius_um",
           "ro_blocks"});
  FloorPlanConfig c;
  const std::string preset = r.str("preset", "vu9p");
  if (preset == "vu9p") c = FloorPlanConfig::vu9p();
  else if (preset != "empty") throw ValidationError(r.path_of("preset"), "unknown preset (expected vu9p or empty)");
  c.chiplet_count = r.integer("chiplet_count", c.chiplet_count);
  c.chiplet_width_um = r.num("chiplet_width_um", c.chiplet_width_um);
  c.chiplet_height_um = r.num("chiplet_height_um", c.chiplet_height_um);
  c.chiplet_gap_um = r.num("chiplet_gap_um", c.chiplet_gap_um);
  c.tiles_per_boundary = r.integer("tiles_per_boundary", c.tiles_per_boundary);
  c.laguna_columns = r.integer("laguna_columns", c.laguna_columns);
  c.driver_pitch_um = r.num("driver_pitch_um", c.driver_pitch_um);
  c.site_pitch_um = r.num("site_pitch_um", c.site_pitch_um);
  c.laguna_edge_margin_um = r.num("laguna_edge_margin_um", c.laguna_edge_margin_um);
  c.laguna_column_pitch_um = r.num("laguna_column_pitch_um", c.laguna_column_pitch_um);
  c.fabric_pitch_um = r.num("fabric_pitch_um", c.fabric_pitch_um);
  c.fabric_radius_um = r.num("fabric_radius_um", c.fabric_radius_um);
  c.driver_area_ratio = r.num("driver_area_ratio", c.driver_area_ratio);
  c.ro_grid = r.integer("ro_grid", c.ro_grid);
  c.ro_pitch_um = r.num("ro_pitch_um", c.ro_pitch_um);
  c.ro_radius_um = r.num("ro_radius_um", c.ro_radius_um);
  if (r.has("ro_blocks")) {
    c.ro_blocks.clear();
    for (auto& b : r.at("ro_blocks").items()) {
      b.allow({"id", "center_um"});
      auto xy = b.at("center_um").numbers();
      if (xy.size() != 2) b.at("center_um").fail("expected [x, y]");
      c.ro_blocks.push_back({b.integer("id"), {xy[0], xy[1]}});
    }
  }
  return c;
}

inline json floorplan_config_json(const FloorPlanConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.ro_blocks) blocks.push_back({{"id", b.id}, {"center_um", {b.center.x, b.center.y}}});
  return {{"preset", "empty"},
          {"chiplet_count", c.chiplet_count},
          {"chiplet_width_um", c.chiplet_width_um},
          {"chiplet_height_um", c.chiplet_height_um},
          {"chiplet_gap_um", c.chiplet_gap_um},
          {"tiles_per_boundary", c.tiles_per_boundary},
          {"laguna_columns", c.laguna_columns},
          {"driver_pitch_um", c.driver_pitch_um},
          {"site_pitch_um", c.site_pitch_um},
          {"laguna_edge_margin_um", c.laguna_edge_margin_um},
          {"laguna_column_pitch_um", c.laguna_column_pitch_um},
          {"fabric_pitch_um", c.fabric_pitch_um},
          {"fabric_radius_um", c.fabric_radius_um},
          {"driver_area_ratio", c.driver_area_ratio},
          {"ro_grid", c.ro_grid},
          {"ro_pitch_um", c.ro_pitch_um},
          {"ro_radius_um", c.ro_radius_um},
          {"ro_blocks", blocks}};
}

/// Node selectors:
///   {"sll": {"boundary": 0, "tile": 360, "site": [0, 3], "lane": [0, 5]}}
///   {"fabric": {"chiplet": 0, "col": [a, b], "row": [c, d]}}
///   {"ro": {"block": 2, "index": [0, 255]}}
///   {"id": 123}
/// or an array of selectors.
inline std::vector<NodeId> parse_nodes(const JsonReader& r, const FloorPlan& plan) {
  std::vector<NodeId> out;
  if (r.is_array()) {
    for (auto& it : r.items()) {
      auto v = parse_nodes(it, plan);
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }
  r.allow({"sll", "fabric", "ro", "id"});
  if (r.raw().size() != 1) r.fail("a selector needs exactly one of sll, fabric, ro, id");
  if (r.has("sll")) {
    auto s = r.at("sll");
    s.allow({"boundary", "tile", "site", "lane"});
    const int b = s.integer("boundary", 0);
    auto [t0, t1] = s.int_range("tile");
    auto [s0, s1] = s.has("site") ? s.int_range("site") : std::pair{0, kSitesPerTile - 1};
    auto [l0, l1] = s.has("lane") ? s.int_range("lane") : std::pair{0, kLanesPerSite - 1};
    at_path(s, [&] {
      for (int t = t0; t <= t1; ++t)
        for (int si = s0; si <= s1; ++si)
          for (int l = l0; l <= l1; ++l) out.push_back(plan.sll_id(b, t, si, l));
      return 0;
    });
  } else if (r.has("fabric")) {
    auto f = r.at("fabric");
    f.allow({"chiplet", "col", "row"});
    const int c = f.integer("chiplet", 0);
    auto [c0, c1] = f.int_range("col");
    auto [r0, r1] = f.int_range("row");
    at_path(f, [&] {
      for (int i = c0; i <= c1; ++i)
        for (int j = r0; j <= r1; ++j) out.push_back(plan.fabric_id(c, i, j));
      return 0;
    });
  } else if (r.has("ro")) {
    auto o = r.at("ro");
    o.allow({"block", "index"});
    const int b = o.integer("block");
    auto [i0, i1] = o.has("index") ? o.int_range("index") : std::pair{0, plan.config().ro_grid * plan.config().ro_grid - 1};
    at_path(o, [&] {
      for (int i = i0; i <= i1; ++i) out.push_back(plan.ro_id(b, i));
      return 0;
    });
  } else {
    const NodeId id{r.at("id").uinteger()};
    if (!plan.contains(id)) throw ValidationError(r.path_of("id"), "node is not in the floorplan");
    out.push_back(id);
  }
  return out;
}

inline Rect bounding_box(const FloorPlan& plan, const std::vector<NodeId>& ids) {
  if (ids.empty()) throw ConfigError("empty node selection");
  Rect b{1e300, 1e300, -1e300, -1e300};
  for (auto id : ids) {
    const auto n = plan.resolve(id);
    b.x0 = std::min(b.x0, n.center.x - n.radius_um);
    b.y0 = std::min(b.y0, n.center.y - n.radius_um);
    b.x1 = std::max(b.x1, n.center.x + n.radius_um);
    b.y1 = std::max(b.y1, n.center.y + n.radius_um);
  }
  return b;
}

/// {"rect_um": [x0, y0, x1, y1]} or {"around": selector, "margin_um": m}.
inline Rect parse_region(const JsonReader& r, const FloorPlan& plan) {
  r.allow({"rect_um", "around", "margin_um"});
  if (r.has("rect_um")) {
    auto v = r.at("rect_um").numbers();
    if (v.size() != 4) r.at("rect_um").fail("expected [x0, y0, x1, y1]");
    if (!(v[2] > v[0] && v[3] > v[1])) r.at("rect_um").fail("expected x1 > x0 and y1 > y0");
    return {v[0], v[1], v[2], v[3]};
  }
  const Rect b = bounding_box(plan, parse_nodes(r.at("around"), plan));
  return b.expanded(r.num("margin_um", 10.0));
}

/// {"position_um": [x, y]} or {"at": selector} (centre of the first node).
inline Point parse_position(const JsonReader& r, const FloorPlan& plan) {
  if (r.has("position_um")) {
    auto v = r.at("position_um").numbers();
    if (v.size() != 2) r.at("position_um").fail("expected [x, y]");
    return {v[0], v[1]};
  }
  if (r.has("at")) return plan.resolve(parse_nodes(r.at("at"), plan).at(0)).center;
  r.fail("expected position_um or at");
}

inline Bits parse_bits(const JsonReader& r, std::uint64_t seed_for_random) {
  if (r.raw().is_string()) {
    Bits b;
    for (char c : r.string()) {
      if (c != '0' && c != '1') r.fail("bit strings may only contain 0 and 1");
      b.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    if (b.empty()) r.fail("bit string must be non-empty");
    return b;
  }
  if (r.raw().is_object()) {
    r.allow({"random_bits", "seed"});
    const int n = r.integer("random_bits");
    if (n < 1) throw ValidationError(r.path_of("random_bits"), "must be >= 1");
    Rng rng(detail::splitmix64(r.has("seed") ? r.at("seed").uinteger() : seed_for_random));
    Bits b(static_cast<std::size_t>(n));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng() >> 63);
    return b;
  }
  Bits b;
  for (auto& it : r.items()) {
    const auto v = it.integer();
    if (v != 0 && v != 1) it.fail("bits must be 0 or 1");
    b.push_back(static_cast<std::uint8_t>(v));
  }
  if (b.empty()) r.fail("bit list must be non-empty");
  return b;
}

inline Activity parse_activity(const JsonReader& r, std::uint64_t seed_for_random) {
  r.expect_object();
  const std::string type = r.str("type");
  if (type == "off") {
    r.allow({"type"});
    return Off{};
  }
  if (type == "toggle") {
    r.allow({"type", "frequency_hz"});
    return Toggle{r.positive("frequency_hz")};
  }
  if (type == "pattern") {
    r.allow({"type", "bits", "bit_rate_hz"});
    return Pattern{parse_bits(r.at("bits"), seed_for_random), r.positive("bit_rate_hz", kDefaultBitRateHz)};
  }
  if (type == "masked") {
    r.allow({"type", "data", "link", "bit_rate_hz"});
    return MaskedStream{parse_bits(r.at("data"), seed_for_random), r.str("link"),
                        r.positive("bit_rate_hz", kDefaultBitRateHz)};
  }
  throw ValidationError(r.path_of("type"), "unknown activity type (expected off, toggle, pattern or masked)");
}

inline Lens parse_lens(const JsonReader& r, std::string_view key, Lens def) {
  if (!r.has(key)) return def;
  auto f = r.at(key);
  return at_path(f, [&] { return lens_from_string(f.string()); });
}

}  // namespace chiplab
