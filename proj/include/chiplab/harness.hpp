#pragma once

// Scenario documents, the step runner, artifact manifests and the bundled
// figure reproductions with their pass/fail checks.

#include <chiplab/countermeasure.hpp>
#include <chiplab/detection.hpp>
#include <chiplab/export.hpp>
#include <chiplab/json_reader.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/timing.hpp>
#include <chiplab/version.hpp>

#include <chiplab/bundled_scenarios.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace chiplab {

inline constexpr std::string_view kScenarioSchema = "chiplab.scenario/1";

// ---------------------------------------------------------------------------
// Steps

struct RoBlocksStep {
  std::vector<int> enable, disable;
};
struct EmissionStep {
  EmissionRequest req;
};
struct DifferenceStep {
  std::string a, b;
};
struct EofmStep {
  EofmRequest req;
  std::vector<std::pair<std::string, std::vector<NodeId>>> groups;
  double group_margin_um = 4.0;
};
struct EopStep {
  std::vector<std::pair<std::string, Point>> probes;
  std::vector<int> integrations;
  int runs = 1;
  double trigger_period_s = 40e-9;
  double sample_rate_hz = 10e9;
  Lens lens = Lens::x71;
  double power_pct = 100.0;
};
struct SensorStep {
  SensorConfig cfg;
  std::optional<LaserSchedule> schedule;
  std::optional<NodeId> probe_lane;
};
struct PowerSweepStep {
  SensorConfig cfg;
  std::vector<double> powers;
  double toggle_period_s = 120.0;
};
struct DetectStep {
  std::string series;
  DetectorConfig cfg;
};
struct RocStep {
  std::vector<double> powers;
  int runs_per_class = 500;
  double sigma_ps = 0.5;
  double cadence_hz = 10.0;
  RocConfig cfg;
  double max_threshold = 400.0;
  int threshold_count = 801;
};
struct MaskStep {
  std::string mode = "masked";  // masked | plain | replayed
  std::vector<NodeId> data_lanes;
  NodeId pad_lane;
  int bits = 2048;
  int experiments = 1;
  ReplayAttackConfig attack;
  double bound = 0.095;
};

using StepSpec = std::variant<RoBlocksStep, EmissionStep, DifferenceStep, EofmStep, EopStep, SensorStep, PowerSweepStep,
                              DetectStep, RocStep, MaskStep>;

struct Step {
  std::string name;
  std::string kind;
  StepSpec spec;
};

struct Scenario {
  std::string source_text;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::shared_ptr<const FloorPlan> plan;
  std::shared_ptr<StimulusProgram> program;
  LaserSchedule schedule;
  std::vector<Step> steps;
};

namespace detail {

inline LaserSchedule parse_schedule(const JsonReader& r, const FloorPlan& plan) {
  if (r.is_object()) {
    if (r.has("toggle_period_s")) {
      r.allow({"toggle_period_s", "duration_s", "power_pct", "start_on"});
      return at_path(r, [&] {
        return LaserSchedule::toggling(r.positive("toggle_period_s"), r.positive("duration_s"),
                                       r.in_range("power_pct", 0, 100, 100.0), r.flag("start_on", false));
      });
    }
    r.allow({"step_at_s", "power_pct"});
    return at_path(r, [&] { return LaserSchedule::step(r.num("step_at_s"), r.in_range("power_pct", 0, 100, 100.0)); });
  }
  std::vector<LaserEvent> ev;
  for (auto& e : r.items()) {
    e.allow({"t_s", "on", "power_pct", "position_um", "at"});
    LaserEvent x;
    x.t_s = e.num("t_s");
    x.on = e.at("on").boolean();
    x.power_pct = e.in_range("power_pct", 0, 100, 100.0);
    if (e.has("position_um") || e.has("at")) x.position = parse_position(e, plan);
    ev.push_back(x);
  }
  return at_path(r, [&] { return LaserSchedule(std::move(ev)); });
}

/// Couples each positioned event to the probed driver by spot overlap.
inline LaserSchedule couple_schedule(const LaserSchedule& s, const FloorPlan& plan, std::optional<NodeId> lane,
                                     Lens lens = Lens::x71) {
  if (!lane) return s;
  const NodeRef drv = plan.resolve(*lane);
  std::vector<LaserEvent> ev = s.events();
  for (auto& e : ev) {
    if (!e.position) continue;
    LaserState l;
    l.position = *e.position;
    l.lens = lens;
    e.coupling = std::clamp(thermal_coupling(l, drv.center, drv.radius_um), 0.0, 1.0);
  }
  return LaserSchedule(std::move(ev));
}

inline SensorConfig parse_sensor_config(const JsonReader& r) {
  SensorConfig c;
  c.kind = at_path(r, [&] { return sensor_kind_from_string(r.str("sensor", "phase")); });
  c.duration_s = r.positive("duration_s", 480.0);
  c.cadence_hz = r.positive("cadence_hz", 10.0);
  if (r.has("jitter_ps")) {
    const double j = r.num("jitter_ps");
    if (j < 0) throw ValidationError(r.path_of("jitter_ps"), "must be >= 0");
    (c.kind == SensorKind::phase ? c.phase_jitter_ps : c.tdc_jitter_ps) = j;
  }
  c.drift_enabled = r.flag("drift", true);
  c.drift.sigma_ps = r.num("drift_sigma_ps", c.drift.sigma_ps);
  c.probe_nominal_ps = r.num("probe_nominal_ps", c.probe_nominal_ps);
  c.control_nominal_ps = r.num("control_nominal_ps", c.control_nominal_ps);
  c.phase.trials_per_step = r.integer("trials_per_step", c.phase.trials_per_step);
  if (r.has("tdc_preset")) {
    const auto p = r.str("tdc_preset");
    if (p == "calibrated") c.tdc = TdcConfig::calibrated();
    else if (p == "vendor") c.tdc = TdcConfig::vendor_estimate();
    else throw ValidationError(r.path_of("tdc_preset"), "expected calibrated or vendor");
  }
  return c;
}

inline constexpr std::array<std::string_view, 10> kSensorKeys = {
    "sensor", "duration_s", "cadence_hz", "jitter_ps", "drift", "drift_sigma_ps", "probe_nominal_ps",
    "control_nominal_ps", "trials_per_step", "tdc_preset"};

inline void allow_with_sensor(const JsonReader& r, std::initializer_list<std::string_view> extra) {
  std::vector<std::string_view> keys(kSensorKeys.begin(), kSensorKeys.end());
  keys.insert(keys.end(), extra.begin(), extra.end());
  for (auto it = r.raw().begin(); it != r.raw().end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) throw ValidationError(r.path_of(it.key()), "unknown key");
}

inline std::vector<int> parse_ints(const JsonReader& r) {
  std::vector<int> v;
  for (auto& it : r.items()) v.push_back(static_cast<int>(it.integer()));
  return v;
}

inline void apply_stimulus(const JsonReader& r, StimulusProgram& program, SeedTree seed) {
  r.allow({"ro_frequency_hz", "ro_blocks_enabled", "links", "assign"});
  const auto& plan = program.plan();
  if (r.has("links")) {
    for (auto& l : r.at("links").items()) {
      l.allow({"name", "policy", "debug_seed"});
      const auto name = l.str("name");
      const auto policy = at_path(l, [&] { return pad_policy_from_string(l.str("policy", "fresh")); });
      // Fresh pads are keyed from the master seed so that runs stay reproducible.
      const std::uint64_t key = l.has("debug_seed") ? l.at("debug_seed").uinteger() : seed.child("pad").child(name).value();
      program.add_link(name, policy == PadPolicy::fresh ? PadSource::keyed(policy, key) : PadSource(policy, key));
    }
  }
  if (r.has("ro_blocks_enabled"))
    for (auto& b : r.at("ro_blocks_enabled").items())
      at_path(b, [&] {
        program.set_ro_block(static_cast<int>(b.integer()), true);
        return 0;
      });
  if (r.has("assign")) {
    std::uint64_t i = 0;
    for (auto& a : r.at("assign").items()) {
      a.allow({"nodes", "activity"});
      const auto ids = parse_nodes(a.at("nodes"), plan);
      const auto act = parse_activity(a.at("activity"), seed.child("bits").child(i++).value());
      auto ar = a.at("activity");
      at_path(ar, [&] {
        for (auto id : ids) program.assign(id, act);
        return 0;
      });
    }
  }
}

inline Step parse_step(const JsonReader& r, const Scenario& sc) {
  r.expect_object();
  Step s;
  s.kind = r.str("kind");
  s.name = r.str("name");
  if (s.name.empty() || s.name.find_first_of("/\\. ") != std::string::npos)
    throw ValidationError(r.path_of("name"), "step names must be non-empty and contain no '/', '\\\\', '.' or spaces");
  const auto& plan = *sc.plan;
  if (s.kind == "ro_blocks") {
    r.allow({"kind", "name", "enable", "disable"});
    RoBlocksStep st;
    if (r.has("enable")) st.enable = parse_ints(r.at("enable"));
    if (r.has("disable")) st.disable = parse_ints(r.at("disable"));
    for (int b : st.enable)
      if (!std::any_of(plan.ro_blocks().begin(), plan.ro_blocks().end(), [b](auto& x) { return x.id == b; }))
        throw ValidationError(r.path_of("enable"), "unknown ring-oscillator block " + std::to_string(b));
    for (int b : st.disable)
      if (!std::any_of(plan.ro_blocks().begin(), plan.ro_blocks().end(), [b](auto& x) { return x.id == b; }))
        throw ValidationError(r.path_of("disable"), "unknown ring-oscillator block " + std::to_string(b));
    s.spec = st;
  } else if (s.kind == "emission") {
    r.allow({"kind", "name", "region", "exposure_s", "lens", "pitch_um"});
    EmissionStep st;
    st.req.region = parse_region(r.at("region"), plan);
    st.req.exposure_s = r.positive("exposure_s", 10.0);
    st.req.lens = parse_lens(r, "lens", Lens::x5);
    st.req.pitch_um = r.has("pitch_um") ? r.positive("pitch_um") : 0.0;
    s.spec = st;
  } else if (s.kind == "difference") {
    r.allow({"kind", "name", "a", "b"});
    s.spec = DifferenceStep{r.str("a"), r.str("b")};
  } else if (s.kind == "eofm") {
    r.allow({"kind", "name", "region", "f_target_hz", "dwell_s", "pitch_um", "lens", "power_pct", "groups", "group_margin_um"});
    EofmStep st;
    st.req.region = parse_region(r.at("region"), plan);
    st.req.f_target_hz = r.positive("f_target_hz", 100e6);
    st.req.dwell_s = r.positive("dwell_s", 10e-6);
    st.req.pitch_um = r.positive("pitch_um", 0.25);
    st.req.lens = parse_lens(r, "lens", Lens::x20);
    st.req.power_pct = r.in_range("power_pct", 0, 100, 100.0);
    st.group_margin_um = r.num("group_margin_um", 4.0);
    if (r.has("groups")) {
      auto g = r.at("groups");
      g.expect_object();
      for (auto it = g.raw().begin(); it != g.raw().end(); ++it)
        st.groups.emplace_back(it.key(), parse_nodes(JsonReader(it.value(), g.path_of(it.key())), plan));
    }
    s.spec = st;
  } else if (s.kind == "eop") {
    r.allow({"kind", "name", "probes", "integrations", "runs", "trigger_period_s", "sample_rate_hz", "lens", "power_pct"});
    EopStep st;
    auto p = r.at("probes");
    p.expect_object();
    for (auto it = p.raw().begin(); it != p.raw().end(); ++it) {
      JsonReader pr(it.value(), p.path_of(it.key()));
      pr.allow({"position_um", "at"});
      st.probes.emplace_back(it.key(), parse_position(pr, plan));
    }
    if (st.probes.empty()) p.fail("at least one probe is required");
    for (auto& n : r.at("integrations").items()) {
      const auto v = n.integer();
      if (v < 1) n.fail("integrations must be >= 1");
      st.integrations.push_back(static_cast<int>(v));
    }
    st.runs = r.integer("runs", 1);
    if (st.runs < 1) throw ValidationError(r.path_of("runs"), "must be >= 1");
    st.trigger_period_s = r.positive("trigger_period_s", 40e-9);
    st.sample_rate_hz = r.positive("sample_rate_hz", 10e9);
    st.lens = parse_lens(r, "lens", Lens::x71);
    st.power_pct = r.in_range("power_pct", 0, 100, 100.0);
    s.spec = st;
  } else if (s.kind == "sensor") {
    allow_with_sensor(r, {"kind", "name", "laser_schedule", "probe_lane"});
    SensorStep st;
    st.cfg = parse_sensor_config(r);
    if (r.has("laser_schedule")) st.schedule = parse_schedule(r.at("laser_schedule"), plan);
    if (r.has("probe_lane")) st.probe_lane = parse_nodes(r.at("probe_lane"), plan).at(0);
    s.spec = st;
  } else if (s.kind == "power_sweep") {
    allow_with_sensor(r, {"kind", "name", "powers", "toggle_period_s"});
    PowerSweepStep st;
    st.cfg = parse_sensor_config(r);
    st.powers = r.at("powers").numbers();
    for (double v : st.powers)
      if (!(v > 0 && v <= 100)) throw ValidationError(r.path_of("powers"), "powers must be within (0, 100]");
    st.toggle_period_s = r.positive("toggle_period_s", 120.0);
    s.spec = st;
  } else if (s.kind == "detect") {
    r.allow({"kind", "name", "series", "algorithm", "k_ps", "h_ps", "window", "baseline_samples"});
    DetectStep st;
    st.series = r.str("series");
    st.cfg.algorithm = at_path(r, [&] { return detector_algorithm_from_string(r.str("algorithm", "cusum")); });
    st.cfg.k_ps = r.num("k_ps", st.cfg.k_ps);
    st.cfg.h_ps = r.num("h_ps", st.cfg.h_ps);
    st.cfg.window = r.integer("window", st.cfg.window);
    st.cfg.baseline_samples = r.integer("baseline_samples", st.cfg.baseline_samples);
    at_path(r, [&] {
      st.cfg.validate();
      return 0;
    });
    s.spec = st;
  } else if (s.kind == "roc") {
    r.allow({"kind", "name", "powers", "runs_per_class", "sigma_ps", "cadence_hz", "k_ps", "onset_s", "deadline_s",
             "max_threshold", "threshold_count"});
    RocStep st;
    st.powers = r.at("powers").numbers();
    st.runs_per_class = r.integer("runs_per_class", st.runs_per_class);
    if (st.runs_per_class < 1) throw ValidationError(r.path_of("runs_per_class"), "must be >= 1");
    st.sigma_ps = r.positive("sigma_ps", st.sigma_ps);
    st.cadence_hz = r.positive("cadence_hz", st.cadence_hz);
    st.cfg.k_ps = r.num("k_ps", st.cfg.k_ps);
    st.cfg.onset_s = r.positive("onset_s", st.cfg.onset_s);
    st.cfg.deadline_s = r.positive("deadline_s", st.cfg.deadline_s);
    st.max_threshold = r.positive("max_threshold", st.max_threshold);
    st.threshold_count = r.integer("threshold_count", st.threshold_count);
    if (st.threshold_count < 2) throw ValidationError(r.path_of("threshold_count"), "must be >= 2");
    s.spec = st;
  } else if (s.kind == "mask") {
    r.allow({"kind", "name", "mode", "data_lanes", "pad_lane", "bits", "experiments", "repetitions", "integrations",
             "bound", "power_pct"});
    MaskStep st;
    st.mode = r.str("mode", "masked");
    if (st.mode != "masked" && st.mode != "plain" && st.mode != "replayed")
      throw ValidationError(r.path_of("mode"), "expected masked, plain or replayed");
    st.data_lanes = parse_nodes(r.at("data_lanes"), plan);
    st.pad_lane = parse_nodes(r.at("pad_lane"), plan).at(0);
    st.bits = r.integer("bits", st.bits);
    st.experiments = r.integer("experiments", st.experiments);
    st.attack.repetitions = r.integer("repetitions", 100);
    st.attack.integrations = r.integer("integrations", 1);
    st.attack.power_pct = r.in_range("power_pct", 0, 100, 100.0);
    st.bound = r.num("bound", st.bound);
    if (st.bits < 2 || st.experiments < 1 || st.attack.repetitions < 1 || st.attack.integrations < 1)
      r.fail("bits >= 2 and experiments, repetitions, integrations >= 1 are required");
    MaskedLinkConfig probe_cfg{"probe", st.data_lanes, st.pad_lane};
    at_path(r, [&] {
      probe_cfg.validate(&plan);
      return 0;
    });
    s.spec = st;
  } else {
    throw ValidationError(r.path_of("kind"), "unknown step kind '" + s.kind + "'");
  }
  return s;
}

}  // namespace detail

/// Parses and validates a scenario document. The floorplan and stimulus are
/// built here so that every node reference is checked before any step runs.
inline Scenario load_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("/", std::string("malformed JSON: ") + e.what());
  }
  JsonReader r(doc);
  r.allow({"schema", "description", "seed", "output_dir", "floorplan", "stimulus", "laser_schedule", "steps"});
  if (r.str("schema") != kScenarioSchema)
    throw ValidationError("/schema", "unsupported schema (expected " + std::string(kScenarioSchema) + ")");
  Scenario sc;
  sc.source_text = text;
  sc.seed = r.at("seed").uinteger();
  sc.output_dir = r.str("output_dir", "");
  const SeedTree master(sc.seed);
  const auto cfg = r.has("floorplan") ? parse_floorplan_config(r.at("floorplan")) : FloorPlanConfig::vu9p();
  sc.plan = at_path(r.has("floorplan") ? r.at("floorplan") : r, [&] {
    return std::make_shared<const FloorPlan>(build_floorplan(cfg));
  });
  double ro_hz = kDefaultRoFrequencyHz;
  if (r.has("stimulus") && r.at("stimulus").has("ro_frequency_hz")) ro_hz = r.at("stimulus").positive("ro_frequency_hz");
  sc.program = std::make_shared<StimulusProgram>(sc.plan, ro_hz);
  if (r.has("stimulus")) detail::apply_stimulus(r.at("stimulus"), *sc.program, master.child("stimulus"));
  if (r.has("laser_schedule")) sc.schedule = detail::parse_schedule(r.at("laser_schedule"), *sc.plan);
  std::set<std::string> names;
  if (r.has("steps"))
    for (auto& st : r.at("steps").items()) {
      sc.steps.push_back(detail::parse_step(st, sc));
      if (!names.insert(sc.steps.back().name).second) throw ValidationError(st.path_of("name"), "duplicate step name");
    }
  for (std::size_t i = 0; i < sc.steps.size(); ++i) {
    const auto& s = sc.steps[i];
    auto earlier = [&](const std::string& n, const char* kind) {
      for (std::size_t j = 0; j < i; ++j)
        if (sc.steps[j].name == n && sc.steps[j].kind == kind) return;
      throw ValidationError("/steps/" + std::to_string(i), "references unknown earlier " + std::string(kind) + " step '" + n + "'");
    };
    if (auto* d = std::get_if<DifferenceStep>(&s.spec)) {
      earlier(d->a, "emission");
      earlier(d->b, "emission");
    } else if (auto* d = std::get_if<DetectStep>(&s.spec)) {
      earlier(d->series, "sensor");
    }
  }
  return sc;
}

inline Scenario load_scenario_file(const std::filesystem::path& p) { return load_scenario(read_file(p)); }

// ---------------------------------------------------------------------------
// Running

struct RunResult {
  std::filesystem::path output_dir;
  std::map<std::string, double> metrics;
  std::map<std::string, SensorSeries> series;
  std::map<std::string, OpticalMap> maps;
  std::vector<std::string> files;
  std::string manifest;
};

namespace detail {

struct Artifacts {
  std::filesystem::path dir;
  std::vector<std::string>* files;
  void put(const std::string& name, std::string_view bytes) {
    write_file(dir / name, bytes);
    files->push_back(name);
  }
};

/// Centroid of the positive part of a map.
inline Point positive_centroid(const OpticalMap& m) {
  double sx = 0, sy = 0, w = 0;
  for (int j = 0; j < m.rows; ++j)
    for (int i = 0; i < m.cols; ++i) {
      const double v = m.at(i, j);
      if (v <= 0) continue;
      const Point c = m.pixel_center(i, j);
      sx += v * c.x;
      sy += v * c.y;
      w += v;
    }
  return w > 0 ? Point{sx / w, sy / w} : m.region.center();
}

inline std::string metrics_csv(const std::map<std::string, double>& m) {
  std::string s = "metric,value\n";
  for (const auto& [k, v] : m) s += k + "," + fmt(v) + "\n";
  return s;
}

/// Normalised thermal progress of the first onset at offsets `at_s`.
inline double ramp_fraction(const SensorSeries& s, double offset_s, double asymptote_ps) {
  std::size_t on = s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.laser_on[i]) {
      on = i;
      break;
    }
  if (on == s.size() || on == 0 || !(asymptote_ps > 0)) return 0.0;
  const double before = s.truth_ps[on - 1];
  const double t = s.t_s[on] + offset_s;
  for (std::size_t i = on; i < s.size(); ++i)
    if (s.t_s[i] >= t - 1e-9) return (s.truth_ps[i] - before) / asymptote_ps;
  return 0.0;
}

}  // namespace detail

inline void run_step(const Step& step, Scenario& sc, RunResult& res, detail::Artifacts& out,
                     const LaserSchedule& scenario_schedule) {
  const SeedTree seed = SeedTree(sc.seed).child("step").child(step.name);
  auto& M = res.metrics;
  const std::string p = step.name + ".";
  const auto& plan = *sc.plan;
  auto& program = *sc.program;

  std::visit(
      [&](const auto& st) {
        using T = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<T, RoBlocksStep>) {
          for (int b : st.enable) program.set_ro_block(b, true);
          for (int b : st.disable) program.set_ro_block(b, false);
        } else if constexpr (std::is_same_v<T, EmissionStep>) {
          auto m = emission_capture(plan, program, st.req, seed);
          out.put(step.name + ".csv", map_csv(m));
          out.put(step.name + ".png", map_png(m));
          double total = 0;
          for (double v : m.values) total += v;
          M[p + "total_counts"] = total;
          M[p + "mean_counts"] = total / static_cast<double>(m.values.size());
          res.maps.emplace(step.name, std::move(m));
        } else if constexpr (std::is_same_v<T, DifferenceStep>) {
          const auto& a = res.maps.at(st.a);
          const auto& b = res.maps.at(st.b);
          if (a.cols != b.cols || a.rows != b.rows) throw ConfigError("difference: map shapes differ");
          OpticalMap d = a;
          for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = a.values[i] - b.values[i];
          out.put(step.name + ".csv", map_csv(d));
          out.put(step.name + ".png", map_png(d));
          const Point c = detail::positive_centroid(d);
          M[p + "centroid_x_um"] = c.x;
          M[p + "centroid_y_um"] = c.y;
          res.maps.emplace(step.name, std::move(d));
        } else if constexpr (std::is_same_v<T, EofmStep>) {
          auto m = eofm_scan(plan, program, st.req, seed);
          out.put(step.name + ".csv", map_csv(m));
          out.put(step.name + ".png", map_png(m));
          const double floor_level = eofm_noise_mean();
          for (const auto& [label, ids] : st.groups) {
            const Rect area = bounding_box(plan, ids).expanded(st.group_margin_um);
            M[p + label + ".per_node"] = integrated_intensity(m, area, floor_level) / static_cast<double>(ids.size());
          }
          res.maps.emplace(step.name, std::move(m));
        } else if constexpr (std::is_same_v<T, EopStep>) {
          std::string summary = "probe,integrations,mean_snr,runs\n";
          for (const auto& [label, pos] : st.probes) {
            LaserState laser;
            laser.position = pos;
            laser.lens = st.lens;
            laser.power_pct = st.power_pct;
            laser.on = true;
            for (int n : st.integrations) {
              EopRequest req{n, st.trigger_period_s, st.sample_rate_hz};
              double snr_sum = 0.0;
              for (int r = 0; r < st.runs; ++r) {
                Rng rng = seed.child(label).child(static_cast<std::uint64_t>(n)).child(static_cast<std::uint64_t>(r)).rng();
                const auto tr = eop_acquire(plan, program, laser, req, rng);
                snr_sum += trace_snr(tr);
                if (r == 0) out.put(step.name + "." + label + ".n" + std::to_string(n) + ".csv", trace_csv(tr));
              }
              const double snr = snr_sum / st.runs;
              M[p + label + ".n" + std::to_string(n) + ".snr"] = snr;
              summary += label + "," + std::to_string(n) + "," + fmt(snr) + "," + std::to_string(st.runs) + "\n";
            }
          }
          out.put(step.name + ".summary.csv", summary);
        } else if constexpr (std::is_same_v<T, SensorStep>) {
          const LaserSchedule sched =
              detail::couple_schedule(st.schedule ? *st.schedule : scenario_schedule, plan, st.probe_lane);
          auto ses = run_sensor_session(st.cfg, sched, seed);
          out.put(step.name + ".csv", series_csv(ses.diff));
          const auto& d = ses.diff;
          M[p + "samples"] = static_cast<double>(d.size());
          M[p + "saturated"] = static_cast<double>(d.saturated);
          bool any_on = false, any_off = false;
          for (auto v : d.laser_on) (v ? any_on : any_off) = true;
          if (any_off) M[p + "off_mean"] = mean_where(d, false);
          if (any_on) M[p + "on_mean"] = mean_where(d, true);
          if (any_on && any_off) M[p + "step"] = M[p + "on_mean"] - M[p + "off_mean"];
          if (any_on) {
            double pw = 0;
            for (std::size_t i = 0; i < d.size(); ++i)
              if (d.laser_on[i]) {
                pw = d.power_pct[i];
                break;
              }
            const double asym = st.cfg.thermal.asymptote(pw);
            M[p + "ramp_1s"] = detail::ramp_fraction(d, 1.0, asym);
            M[p + "ramp_2_5s"] = detail::ramp_fraction(d, 2.5, asym);
          }
          res.series.emplace(step.name, std::move(ses.diff));
        } else if constexpr (std::is_same_v<T, PowerSweepStep>) {
          std::vector<double> steps;
          std::string csv = "power_pct,step\n";
          for (double pw : st.powers) {
            const auto sched = LaserSchedule::toggling(st.toggle_period_s, st.cfg.duration_s, pw);
            const auto ses = run_sensor_session(st.cfg, sched, seed.child(static_cast<std::uint64_t>(std::lround(pw * 1000))));
            const double stp = mean_where(ses.diff, true) - mean_where(ses.diff, false);
            steps.push_back(stp);
            csv += fmt(pw) + "," + fmt(stp) + "\n";
            M[p + "step_at_" + fmt(pw)] = stp;
          }
          const auto fit = stats::fit_through_origin(st.powers, steps);
          M[p + "slope_per_pct"] = fit.slope;
          M[p + "r2"] = fit.r_squared;
          out.put(step.name + ".csv", csv);
        } else if constexpr (std::is_same_v<T, DetectStep>) {
          const auto rep = detect(res.series.at(st.series), st.cfg);
          out.put(step.name + ".alarms.csv", alarms_csv(rep));
          out.put(step.name + ".summary.txt", detection_summary(rep));
          M[p + "alarms"] = static_cast<double>(rep.alarms.size());
          M[p + "false_alarms"] = static_cast<double>(rep.false_alarms);
          if (!rep.latency_s.empty()) M[p + "first_latency_s"] = rep.latency_s.front();
        } else if constexpr (std::is_same_v<T, RocStep>) {
          const auto th = threshold_grid(st.max_threshold, st.threshold_count);
          for (double pw : st.powers) {
            const auto c = roc_at_power(pw, st.runs_per_class, st.sigma_ps, th,
                                        seed.child(static_cast<std::uint64_t>(std::lround(pw * 1000))), st.cfg,
                                        st.cadence_hz);
            out.put(step.name + ".p" + fmt(pw) + ".csv", roc_csv(c));
            M[p + "auc_at_" + fmt(pw)] = c.auc;
          }
        } else if constexpr (std::is_same_v<T, MaskStep>) {
          std::string csv = "experiment,corr_data,corr_transmitted,max_deviation\n";
          int within = 0;
          double worst = 0.0, sum = 0.0;
          for (int e = 0; e < st.experiments; ++e) {
            const SeedTree es = seed.child(static_cast<std::uint64_t>(e));
            StimulusProgram prog(sc.plan, program.ro_frequency_hz());
            MaskedLinkConfig cfg{"mask", st.data_lanes, st.pad_lane,
                                 st.mode == "replayed" ? PadPolicy::replayed : PadPolicy::fresh};
            std::vector<Bits> data(st.data_lanes.size(), Bits(static_cast<std::size_t>(st.bits)));
            Rng drng = es.child("data").rng();
            for (auto& d : data)
              for (auto& b : d) b = static_cast<std::uint8_t>(drng() >> 63);
            if (st.mode == "plain") {
              install_plain_link(prog, cfg, data);
            } else {
              install_masked_link(prog, cfg, data);
              prog.add_link(cfg.link, PadSource::keyed(cfg.policy, es.child("pad").value()));
            }
            Rng rng = es.child("noise").rng();
            const auto rep = evaluate_replay_attack(plan, prog, st.data_lanes.front(), st.attack, rng);
            csv += std::to_string(e) + "," + fmt(rep.corr_data) + "," + fmt(rep.corr_transmitted) + "," +
                   fmt(rep.max_deviation) + "\n";
            within += std::abs(rep.corr_data) <= st.bound;
            worst = std::max(worst, std::abs(rep.corr_data));
            sum += rep.corr_data;
          }
          out.put(step.name + ".csv", csv);
          M[p + "fraction_within_bound"] = static_cast<double>(within) / st.experiments;
          M[p + "max_abs_corr"] = worst;
          M[p + "mean_corr"] = sum / st.experiments;
        }
      },
      step.spec);
}

inline std::string make_manifest(const Scenario& sc, const std::filesystem::path& dir, const std::vector<std::string>& files) {
  std::string m = "chiplab-manifest 1\n";
  m += "version " + std::string(kVersion) + "\n";
  m += "seed " + std::to_string(sc.seed) + "\n";
  m += "scenario_sha256 " + sha256_hex(sc.source_text) + "\n";
  std::vector<std::string> sorted = files;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& f : sorted) {
    const auto bytes = read_file(dir / f);
    m += "file " + f + " " + sha256_hex(bytes) + " " + std::to_string(bytes.size()) + "\n";
  }
  return m;
}

/// Executes every step in order and writes artifacts into `out_dir`. Output
/// is staged in a sibling `.partial` directory that is renamed on success
/// and removed on failure.
inline RunResult run_scenario(Scenario& sc, std::filesystem::path out_dir = {},
                              const std::function<void(const std::string&)>& on_step = {}) {
  namespace fs = std::filesystem;
  if (out_dir.empty()) out_dir = sc.output_dir.empty() ? fs::path("chiplab-out") : fs::path(sc.output_dir);
  const fs::path staging = out_dir.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  RunResult res;
  detail::Artifacts art{staging, &res.files};
  try {
    for (const auto& step : sc.steps) {
      if (on_step) on_step(step.name);
      run_step(step, sc, res, art, sc.schedule);
    }
    if (!res.metrics.empty()) art.put("metrics.csv", detail::metrics_csv(res.metrics));
    res.manifest = make_manifest(sc, staging, res.files);
    write_file(staging / "manifest.txt", res.manifest);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  fs::remove_all(out_dir);
  if (out_dir.has_parent_path()) fs::create_directories(out_dir.parent_path());
  fs::rename(staging, out_dir);
  res.output_dir = out_dir;
  return res;
}

inline RunResult run_scenario_file(const std::filesystem::path& p, std::filesystem::path out_dir = {}) {
  auto sc = load_scenario_file(p);
  return run_scenario(sc, std::move(out_dir));
}

// ---------------------------------------------------------------------------
// Bundled reproductions

struct Check {
  std::string name;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool pass = false;
};

inline Check make_check(std::string name, double value, double lo, double hi) {
  return {std::move(name), value, lo, hi, value >= lo && value <= hi};
}

inline const std::vector<std::string>& repro_targets() {
  static const std::vector<std::string> t{"fig3", "fig5", "fig7", "fig8", "fig9", "fig10", "fig11", "table-numbers"};
  return t;
}

inline std::string bundled_scenario(const std::string& name) {
  for (const auto& [n, text] : kBundledScenarios)
    if (n == name) return std::string(text);
  throw LookupError("no bundled scenario named '" + name + "'");
}

inline std::string repro_scenario_name(const std::string& target) {
  if (target == "table-numbers") return "fig9";
  if (std::find(repro_targets().begin(), repro_targets().end(), target) == repro_targets().end())
    throw ConfigError("unknown repro target '" + target + "'");
  return target;
}

inline std::vector<Check> repro_checks(const std::string& target, const RunResult& r, const Scenario& sc) {
  const auto& m = r.metrics;
  auto g = [&](const std::string& k) {
    auto it = m.find(k);
    if (it == m.end()) throw Error("runtime_error", "scenario did not produce metric " + k);
    return it->second;
  };
  std::vector<Check> c;
  if (target == "fig3") {
    const auto& block = sc.plan->ro_blocks();
    const auto it = std::find_if(block.begin(), block.end(), [](auto& b) { return b.id == 12; });
    const double d = std::hypot(g("diff.centroid_x_um") - it->center.x, g("diff.centroid_y_um") - it->center.y);
    c.push_back(make_check("guidepost centroid offset (um)", d, 0.0, spot_radius_um(Lens::x5)));
  } else if (target == "fig5") {
    c.push_back(make_check("EOFM Laguna:fabric per-node intensity", g("eofm.laguna.per_node") / g("eofm.fabric.per_node"), 3.4, 4.6));
  } else if (target == "fig7") {
    for (int n : {5, 25, 100}) {
      const auto ns = std::to_string(n);
      c.push_back(make_check("SNR Laguna - fabric at N=" + ns, g("eop.laguna.n" + ns + ".snr") - g("eop.fabric.n" + ns + ".snr"), 1e-12, 1e300));
    }
    c.push_back(make_check("SNR(100)/SNR(25)", g("eop.laguna.n100.snr") / g("eop.laguna.n25.snr"), 1.8, 2.2));
    c.push_back(make_check("SNR(25)/SNR(5)", g("eop.laguna.n25.snr") / g("eop.laguna.n5.snr"), 2.0, 2.6));
  } else if (target == "fig8") {
    c.push_back(make_check("laser-off differential (ps)", g("phase.off_mean"), -39.090 - 0.05, -39.090 + 0.05));
    c.push_back(make_check("laser-on differential (ps)", g("phase.on_mean"), -38.298 - 0.05, -38.298 + 0.05));
    c.push_back(make_check("step (ps)", g("phase.step"), 0.792 - 0.05, 0.792 + 0.05));
  } else if (target == "fig9" || target == "table-numbers") {
    const double dip = -g("tdc.step");
    if (target == "table-numbers") {
      c.push_back(make_check("laser-off differential (ps)", g("phase.off_mean"), -39.090 - 0.05, -39.090 + 0.05));
      c.push_back(make_check("laser-on differential (ps)", g("phase.on_mean"), -38.298 - 0.05, -38.298 + 0.05));
      c.push_back(make_check("step (ps)", g("phase.step"), 0.792 - 0.05, 0.792 + 0.05));
    }
    c.push_back(make_check("TDC samples", g("tdc.samples"), 1e4, 1e300));
    c.push_back(make_check("TDC dip (taps)", dip, 0.413 - 0.03, 0.413 + 0.03));
    c.push_back(make_check("derived tap pitch (ps/tap)", g("phase.step") / dip, 1.917 * 0.95, 1.917 * 1.05));
  } else if (target == "fig10") {
    c.push_back(make_check("ramp fraction at 1.0 s", g("ramp.ramp_1s"), 0.95, 1.0 + 1e-9));
    c.push_back(make_check("ramp fraction at 2.5 s", g("ramp.ramp_2_5s"), 0.999, 1.0 + 1e-9));
  } else if (target == "fig11") {
    c.push_back(make_check("step-vs-power R^2 through origin", g("sweep.r2"), 0.99, 1.0));
    c.push_back(make_check("AUC at 100%", g("roc.auc_at_100"), 0.95, 1.0));
    c.push_back(make_check("AUC(50%) - AUC(25%)", g("roc.auc_at_50") - g("roc.auc_at_25"), 0.0, 1.0));
    c.push_back(make_check("AUC(100%) - AUC(50%)", g("roc.auc_at_100") - g("roc.auc_at_50"), 0.0, 1.0));
  }
  return c;
}

inline std::string checks_text(const std::string& target, const std::vector<Check>& checks) {
  std::string s;
  for (const auto& c : checks)
    s += std::string(c.pass ? "PASS " : "FAIL ") + target + ": " + c.name + " = " + fmt(c.value) + " (expected [" +
         fmt(c.lo) + ", " + (c.hi > 1e299 ? std::string("inf") : fmt(c.hi)) + "])\n";
  return s;
}

struct ReproResult {
  RunResult run;
  std::vector<Check> checks;
  bool pass = true;
  std::string report;
};

inline ReproResult repro(const std::string& target, std::filesystem::path out_dir = {}) {
  auto sc = load_scenario(bundled_scenario(repro_scenario_name(target)));
  if (out_dir.empty()) out_dir = std::filesystem::path("repro") / target;
  ReproResult rr;
  rr.run = run_scenario(sc, out_dir);
  rr.checks = repro_checks(target, rr.run, sc);
  for (const auto& c : rr.checks) rr.pass = rr.pass && c.pass;
  rr.report = checks_text(target, rr.checks);
  write_file(out_dir / "checks.txt", rr.report);
  rr.run.files.push_back("checks.txt");
  rr.run.manifest = make_manifest(sc, out_dir, rr.run.files);
  write_file(out_dir / "manifest.txt", rr.run.manifest);
  return rr;
}

}  // namespace chiplab
