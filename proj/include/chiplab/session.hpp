#pragma once

// Live laboratory session: a command-driven state machine over simulated
// time. The HTTP service and the harness `replay` path both drive it, so a
// recorded command log reproduces every artifact of the original session.

#include <chiplab/countermeasure.hpp>
#include <chiplab/detection.hpp>
#include <chiplab/export.hpp>
#include <chiplab/json_reader.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/timing.hpp>
#include <chiplab/version.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace chiplab {

inline constexpr std::string_view kSessionSchema = "chiplab.session/1";

inline json rect_json(const Rect& r) { return {r.x0, r.y0, r.x1, r.y1}; }

/// Geometry summary shared by the service and its clients.
inline json floorplan_geometry(const FloorPlan& p) {
  json chiplets = json::array(), blocks = json::array(), strips = json::array();
  for (const auto& c : p.chiplets()) chiplets.push_back(rect_json(c));
  for (const auto& b : p.ro_blocks())
    blocks.push_back({{"id", b.id}, {"chiplet", b.chiplet}, {"center_um", {b.center.x, b.center.y}}, {"rect_um", rect_json(b.rect)}});
  if (p.config().tiles_per_boundary > 0)
    for (int b = 0; b < p.boundary_count(); ++b) strips.push_back(rect_json(p.laguna_strip(b)));
  return {{"config", floorplan_config_json(p.config())},
          {"package_um", rect_json(p.package_bounds())},
          {"chiplets_um", chiplets},
          {"ro_blocks", blocks},
          {"laguna_strips_um", strips},
          {"boundaries", p.boundary_count()},
          {"sll_drivers", p.sll_driver_count()},
          {"tile_pitch_um", p.config().tiles_per_boundary > 0 ? p.tile_pitch_um() : 0.0},
          {"driver_radius_um", p.driver_radius_um()},
          {"fabric_radius_um", p.config().fabric_radius_um},
          {"fabric_pitch_um", p.config().fabric_pitch_um}};
}

inline json node_json(const NodeRef& n) {
  json j = {{"id", n.id.value},
            {"kind", to_string(n.kind)},
            {"center_um", {n.center.x, n.center.y}},
            {"radius_um", n.radius_um},
            {"chiplet", n.chiplet}};
  if (n.laguna)
    j["laguna"] = {{"boundary", n.laguna->boundary}, {"tile", n.laguna->tile}, {"site", n.laguna->site}, {"lane", n.laguna->lane}};
  return j;
}

inline json map_meta(const OpticalMap& m) {
  return {{"kind", to_string(m.kind)},
          {"region_um", rect_json(m.region)},
          {"pitch_um", m.pitch_um},
          {"cols", m.cols},
          {"rows", m.rows},
          {"lens", lens_spec(m.lens).name},
          {"exposure_s", m.exposure_s},
          {"dwell_s", m.dwell_s},
          {"target_hz", m.target_hz},
          {"power_pct", m.power_pct}};
}

struct Job {
  enum class State { queued, running, done, failed };

  std::string id;
  std::string kind;
  std::atomic<State> state{State::queued};
  std::atomic<double> progress{0.0};
  std::string error;
  std::optional<OpticalMap> map;
  std::optional<EopTrace> trace;

  static std::string_view name(State s) {
    switch (s) {
      case State::queued: return "queued";
      case State::running: return "running";
      case State::done: return "done";
      case State::failed: return "failed";
    }
    return "unknown";
  }

  json status() const {
    json j = {{"id", id}, {"kind", kind}, {"state", name(state.load())}, {"progress", progress.load()}};
    if (state == State::failed) j["error"] = error;
    return j;
  }

  /// Artifact bytes as CSV; identical whichever path produced the job.
  std::string artifact_csv() const {
    if (map) return map_csv(*map);
    if (trace) return trace_csv(*trace);
    throw PreconditionError("job " + id + " has no artifact");
  }
};

enum class ClockMode { manual, realtime };

struct SessionOptions {
  bool async_jobs = true;
};

class LabSession {
 public:
  /// `create` is the creation document: seed, floorplan, sensor, clock.
  explicit LabSession(json create, SessionOptions opts = {}) : create_(std::move(create)), opts_(opts) {
    JsonReader r(create_);
    r.allow({"seed", "floorplan", "sensor", "probe_lane", "clock", "ro_frequency_hz"});
    seed_ = SeedTree(r.has("seed") ? r.at("seed").uinteger() : 0);
    const auto cfg = r.has("floorplan") ? parse_floorplan_config(r.at("floorplan")) : FloorPlanConfig::vu9p();
    plan_ = at_path(r, [&] { return std::make_shared<const FloorPlan>(build_floorplan(cfg)); });
    program_ = std::make_shared<StimulusProgram>(plan_, r.num("ro_frequency_hz", kDefaultRoFrequencyHz));

    SensorConfig sc;
    if (r.has("sensor")) {
      auto s = r.at("sensor");
      s.allow({"kind", "cadence_hz", "jitter_ps", "drift"});
      sc.kind = at_path(s, [&] { return sensor_kind_from_string(s.str("kind", "phase")); });
      sc.cadence_hz = s.positive("cadence_hz", 10.0);
      if (s.has("jitter_ps")) (sc.kind == SensorKind::phase ? sc.phase_jitter_ps : sc.tdc_jitter_ps) = s.num("jitter_ps");
      sc.drift_enabled = s.flag("drift", true);
    }
    if (r.has("probe_lane")) probe_lane_ = parse_nodes(r.at("probe_lane"), *plan_).at(0);
    else if (plan_->boundary_count() > 0 && cfg.tiles_per_boundary > 360) probe_lane_ = plan_->sll_id(0, 360, 0, 0);
    else if (plan_->sll_driver_count() > 0) probe_lane_ = plan_->sll_id(0, 0, 0, 0);

    if (r.has("clock")) {
      auto c = r.at("clock");
      c.allow({"mode", "speed"});
      const auto mode = c.str("mode", "manual");
      if (mode == "realtime") clock_mode_ = ClockMode::realtime;
      else if (mode != "manual") throw ValidationError(c.path_of("mode"), "expected manual or realtime");
      speed_ = c.positive("speed", 1.0);
    }
    runner_.emplace(sc, LaserSchedule{}, seed_.child("sensor"));
    sensor_ = runner_->make_session();
    wall_anchor_ = std::chrono::steady_clock::now();
  }

  ~LabSession() {
    std::vector<std::thread> workers;
    {
      std::lock_guard lk(mu_);
      workers.swap(workers_);
    }
    for (auto& t : workers)
      if (t.joinable()) t.join();
  }

  LabSession(const LabSession&) = delete;
  LabSession& operator=(const LabSession&) = delete;

  const FloorPlan& plan() const noexcept { return *plan_; }
  std::shared_ptr<const FloorPlan> plan_ptr() const noexcept { return plan_; }

  /// Applies one command. Commands are serialised per session and logged in
  /// receipt order.
  json apply(const json& cmd) {
    std::unique_lock lk(mu_);
    sync_clock_locked();
    return apply_locked(cmd, true);
  }

  /// Realtime sessions catch their simulated clock up to wall time.
  void sync_clock() {
    std::lock_guard lk(mu_);
    sync_clock_locked();
  }

  double time_s() const {
    std::lock_guard lk(mu_);
    return time_s_;
  }

  json state() const {
    std::lock_guard lk(mu_);
    json blocks = json::object();
    for (const auto& [id, on] : program_->block_enables()) blocks[std::to_string(id)] = on;
    return {{"time_s", time_s_},
            {"clock", clock_mode_ == ClockMode::manual ? "manual" : "realtime"},
            {"speed", speed_},
            {"laser", laser_json(laser_)},
            {"ro_blocks", blocks},
            {"masking", masking_enabled_},
            {"sensor_samples", sensor_.diff.size()},
            {"log_length", log_.size()},
            {"jobs", jobs_.size()}};
  }

  json floorplan_json() const { return floorplan_geometry(*plan_); }

  std::shared_ptr<Job> job(const std::string& id) const {
    std::lock_guard lk(mu_);
    for (const auto& j : jobs_)
      if (j->id == id) return j;
    throw NotFoundError("unknown job '" + id + "'");
  }
  std::vector<std::shared_ptr<Job>> jobs() const {
    std::lock_guard lk(mu_);
    return jobs_;
  }
  void wait_jobs() const {
    for (const auto& j : jobs()) {
      while (j->state == Job::State::queued || j->state == Job::State::running)
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  }

  /// Sensor readings with index in [from, to).
  SensorSeries sensor_slice(std::size_t from, std::size_t to) const {
    std::lock_guard lk(mu_);
    const auto& d = sensor_.diff;
    to = std::min(to, d.size());
    SensorSeries s;
    s.unit = d.unit;
    for (std::size_t i = from; i < to; ++i) s.push(d.t_s[i], d.readings[i], d.laser_on[i], d.power_pct[i], d.truth_ps[i]);
    return s;
  }
  std::size_t sensor_size() const {
    std::lock_guard lk(mu_);
    return sensor_.diff.size();
  }

  /// Sensor readings with timestamps in [from_s, to_s).
  SensorSeries sensor_window(double from_s, double to_s) const {
    std::lock_guard lk(mu_);
    const auto& d = sensor_.diff;
    SensorSeries s;
    s.unit = d.unit;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.t_s[i] >= from_s - 1e-9 && d.t_s[i] < to_s - 1e-9)
        s.push(d.t_s[i], d.readings[i], d.laser_on[i], d.power_pct[i], d.truth_ps[i]);
    return s;
  }

  json detect(const json& req) const {
    JsonReader r(req);
    r.allow({"from_s", "to_s", "algorithm", "k_ps", "h_ps", "window", "baseline_samples"});
    DetectorConfig cfg;
    cfg.algorithm = at_path(r, [&] { return detector_algorithm_from_string(r.str("algorithm", "cusum")); });
    cfg.k_ps = r.num("k_ps", cfg.k_ps);
    cfg.h_ps = r.num("h_ps", cfg.h_ps);
    cfg.window = r.integer("window", cfg.window);
    cfg.baseline_samples = r.integer("baseline_samples", cfg.baseline_samples);
    at_path(r, [&] {
      cfg.validate();
      return 0;
    });
    const auto s = sensor_window(r.num("from_s", 0.0), r.num("to_s", 1e300));
    if (s.empty()) throw PreconditionError("no sensor readings in the requested window");
    const auto rep = chiplab::detect(s, cfg);
    json alarms = json::array();
    for (const auto& a : rep.alarms) alarms.push_back({{"t_s", a.t_s}, {"statistic", a.statistic}, {"direction", a.direction}});
    return {{"baseline", rep.baseline},
            {"alarms", alarms},
            {"latency_s", rep.latency_s},
            {"false_alarms", rep.false_alarms},
            {"false_alarms_per_hour", rep.false_alarms_per_hour}};
  }

  /// Creation document plus the command log; restoring replays it.
  json checkpoint() const {
    std::lock_guard lk(mu_);
    return {{"schema", kSessionSchema}, {"create", create_}, {"log", log_}};
  }

  static std::unique_ptr<LabSession> restore(const json& doc, SessionOptions opts = {}) {
    JsonReader r(doc);
    r.allow({"schema", "create", "log"});
    if (r.str("schema") != kSessionSchema) throw ValidationError("/schema", "unsupported session schema");
    json create = doc.at("create");
    // Replays run on the recorded clock only.
    create.erase("clock");
    auto s = std::make_unique<LabSession>(create, opts);
    s->create_ = doc.at("create");
    auto log = r.at("log");
    for (std::size_t i = 0; i < log.size(); ++i) {
      std::unique_lock lk(s->mu_);
      try {
        s->apply_locked(log.index(i).raw(), true);
      } catch (const ValidationError& e) {
        throw ValidationError("/log/" + std::to_string(i) + (e.path() == "/" ? "" : e.path()), e.what());
      }
    }
    return s;
  }

 private:
  static json laser_json(const LaserState& l) {
    return {{"position_um", {l.position.x, l.position.y}},
            {"power_pct", l.power_pct},
            {"wavelength_um", l.wavelength_um},
            {"lens", lens_spec(l.lens).name},
            {"on", l.on},
            {"on_since_s", l.on_since_s},
            {"spot_radius_um", l.spot_radius_um()}};
  }

  void sync_clock_locked() {
    if (clock_mode_ != ClockMode::realtime) return;
    const auto now = std::chrono::steady_clock::now();
    const double wall = std::chrono::duration<double>(now - wall_anchor_).count() * speed_;
    const double target = std::floor(wall * 1000.0) / 1000.0;  // millisecond grid keeps logs readable
    if (target > time_s_) apply_locked({{"op", "advance"}, {"to_s", target}}, true);
  }

  void advance_to(double t) {
    if (t < time_s_) throw ConfigError("simulated clock cannot run backwards");
    while (runner_->next_time() <= t + 1e-12) runner_->step(sensor_);
    time_s_ = t;
  }

  double coupling_now() const {
    if (!probe_lane_ || !laser_.on) return 0.0;
    const NodeRef drv = plan_->resolve(*probe_lane_);
    return std::clamp(thermal_coupling(laser_, drv.center, drv.radius_um), 0.0, 1.0);
  }

  void record_laser_event() {
    LaserEvent e{time_s_, laser_.on, laser_.power_pct, laser_.position, coupling_now()};
    if (!events_.empty() && std::abs(events_.back().t_s - e.t_s) < 1e-12) events_.back() = e;
    else events_.push_back(e);
    runner_->set_schedule(LaserSchedule(events_));
  }

  std::shared_ptr<Job> new_job(const std::string& kind) {
    auto j = std::make_shared<Job>();
    j->id = "j" + std::to_string(jobs_.size() + 1);
    j->kind = kind;
    jobs_.push_back(j);
    return j;
  }

  /// Runs `work` against a snapshot, on a worker thread when async.
  template <class F>
  void launch(const std::shared_ptr<Job>& job, F work) {
    auto body = [job, work = std::move(work)]() mutable {
      job->state = Job::State::running;
      try {
        work(*job);
        job->progress = 1.0;
        job->state = Job::State::done;
      } catch (const std::exception& e) {
        job->error = e.what();
        job->state = Job::State::failed;
      }
    };
    if (opts_.async_jobs) workers_.emplace_back(std::move(body));
    else body();
  }

  json apply_locked(const json& cmd, bool log) {
    JsonReader r(cmd);
    r.expect_object();
    const std::string op = r.str("op");
    json result = {{"ok", true}};
    if (op == "advance") {
      r.allow({"op", "dt_s", "to_s"});
      const double t = r.has("to_s") ? r.num("to_s") : time_s_ + r.num("dt_s");
      if (t < time_s_) throw ValidationError(r.has("to_s") ? "/to_s" : "/dt_s", "simulated clock cannot run backwards");
      advance_to(t);
    } else if (op == "set_ro_block") {
      r.allow({"op", "block", "enabled"});
      const int b = r.integer("block");
      const bool on = r.at("enabled").boolean();
      at_path(r.at("block"), [&] {
        program_->set_ro_block(b, on);
        return 0;
      });
    } else if (op == "set_laser") {
      r.allow({"op", "position_um", "at", "power_pct", "lens", "on", "wavelength_um"});
      LaserState next = laser_;
      if (r.has("position_um") || r.has("at")) next.position = parse_position(r, *plan_);
      next.power_pct = r.in_range("power_pct", 0, 100, laser_.power_pct);
      next.lens = parse_lens(r, "lens", laser_.lens);
      next.wavelength_um = r.num("wavelength_um", laser_.wavelength_um);
      next.on = r.flag("on", laser_.on);
      at_path(r, [&] {
        next.validate();
        return 0;
      });
      if (next.on && !laser_.on) next.on_since_s = time_s_;
      laser_ = next;
      record_laser_event();
      result["laser"] = laser_json(laser_);
    } else if (op == "assign") {
      r.allow({"op", "nodes", "activity"});
      const auto ids = parse_nodes(r.at("nodes"), *plan_);
      const auto act = parse_activity(r.at("activity"), seed_.child("bits").child(log_.size()).value());
      at_path(r.at("activity"), [&] {
        for (auto id : ids) program_->assign(id, act);
        return 0;
      });
      result["assigned"] = ids.size();
    } else if (op == "add_link") {
      r.allow({"op", "name", "policy", "debug_seed"});
      const auto name = r.str("name");
      const auto policy = at_path(r, [&] { return pad_policy_from_string(r.str("policy", "fresh")); });
      const std::uint64_t key = r.has("debug_seed") ? r.at("debug_seed").uinteger() : seed_.child("pad").child(name).value();
      program_->add_link(name, PadSource::keyed(policy, key));
    } else if (op == "masking") {
      r.allow({"op", "enabled", "data_lanes", "pad_lane", "bits", "link", "policy"});
      MaskedLinkConfig cfg;
      cfg.link = r.str("link", "demo");
      cfg.policy = at_path(r, [&] { return pad_policy_from_string(r.str("policy", "fresh")); });
      cfg.data_lanes = r.has("data_lanes") ? parse_nodes(r.at("data_lanes"), *plan_) : default_data_lanes();
      cfg.pad_lane = r.has("pad_lane") ? parse_nodes(r.at("pad_lane"), *plan_).at(0) : default_pad_lane();
      const int bits = r.integer("bits", 64);
      if (bits < 2) throw ValidationError("/bits", "must be >= 2");
      std::vector<Bits> data(cfg.data_lanes.size(), Bits(static_cast<std::size_t>(bits)));
      Rng drng = seed_.child("mask-data").child(cfg.link).rng();
      for (auto& d : data)
        for (auto& b : d) b = static_cast<std::uint8_t>(drng() >> 63);
      masking_enabled_ = r.at("enabled").boolean();
      at_path(r, [&] {
        if (masking_enabled_) {
          install_masked_link(*program_, cfg, data);
          program_->add_link(cfg.link, PadSource::keyed(cfg.policy, seed_.child("pad").child(cfg.link).value()));
        } else {
          install_plain_link(*program_, cfg, data);
        }
        return 0;
      });
    } else if (op == "acquire") {
      result = acquire_locked(r);
    } else {
      throw ValidationError("/op", "unknown command '" + op + "'");
    }
    if (log) log_.push_back(cmd);
    result["time_s"] = time_s_;
    return result;
  }

  std::vector<NodeId> default_data_lanes() const {
    if (!probe_lane_) throw PreconditionError("floorplan has no Laguna lanes");
    const auto l = plan_->resolve(*probe_lane_).laguna.value();
    std::vector<NodeId> v;
    for (int lane = 0; lane < kLanesPerSite - 1; ++lane) v.push_back(plan_->sll_id(l.boundary, l.tile, l.site, lane));
    return v;
  }
  NodeId default_pad_lane() const {
    const auto l = plan_->resolve(*probe_lane_).laguna.value();
    return plan_->sll_id(l.boundary, l.tile, l.site, kLanesPerSite - 1);
  }

  json acquire_locked(const JsonReader& r) {
    const std::string kind = r.str("kind");
    const SeedTree seed = seed_.child("acquisition").child(static_cast<std::uint64_t>(jobs_.size()));
    if (kind == "emission") {
      r.allow({"op", "kind", "region", "exposure_s", "lens", "pitch_um"});
      EmissionRequest req;
      req.region = parse_region(r.at("region"), *plan_);
      req.exposure_s = r.positive("exposure_s", 10.0);
      req.lens = parse_lens(r, "lens", Lens::x5);
      req.pitch_um = r.has("pitch_um") ? r.positive("pitch_um") : 0.0;
      at_path(r.at("region"), [&] {
        if (!plan_->package_bounds().expanded(1e-6).contains(req.region)) throw RangeError("region outside package bounds");
        return 0;
      });
      auto job = new_job(kind);
      auto plan = plan_;
      auto snapshot = std::make_shared<StimulusProgram>(*program_);
      launch(job, [plan, snapshot, req, seed](Job& j) { j.map = emission_capture(*plan, *snapshot, req, seed); });
      return {{"job", job->id}};
    }
    if (kind == "eofm" || kind == "eofm_preview") {
      r.allow({"op", "kind", "region", "f_target_hz", "dwell_s", "pitch_um", "lens", "power_pct"});
      EofmRequest req;
      req.region = parse_region(r.at("region"), *plan_);
      req.f_target_hz = r.positive("f_target_hz", 100e6);
      req.dwell_s = r.positive("dwell_s", 10e-6);
      req.pitch_um = r.positive("pitch_um", kind == "eofm" ? 0.25 : 2.0);
      req.lens = parse_lens(r, "lens", laser_.lens);
      req.power_pct = r.in_range("power_pct", 0, 100, laser_.power_pct);
      req.wavelength_um = laser_.wavelength_um;
      at_path(r.at("region"), [&] {
        if (!plan_->package_bounds().expanded(1e-6).contains(req.region)) throw RangeError("region outside package bounds");
        return 0;
      });
      auto job = new_job(kind);
      auto plan = plan_;
      auto snapshot = std::make_shared<StimulusProgram>(*program_);
      launch(job, [plan, snapshot, req, seed](Job& j) {
        j.map = eofm_scan(*plan, *snapshot, req, seed, {}, [&j](double f) { j.progress = f; }, 1);
      });
      return {{"job", job->id}};
    }
    if (kind == "eop") {
      r.allow({"op", "kind", "integrations", "trigger_period_s", "sample_rate_hz"});
      EopRequest req;
      req.integrations = r.integer("integrations", 100);
      req.trigger_period_s = r.positive("trigger_period_s", 40e-9);
      req.sample_rate_hz = r.positive("sample_rate_hz", 10e9);
      auto job = new_job(kind);
      // EOP consumes pad state, so it runs in command order on the live program.
      Rng rng = seed.rng();
      job->state = Job::State::running;
      try {
        job->trace = eop_acquire(*plan_, *program_, laser_, req, rng);
        job->progress = 1.0;
        job->state = Job::State::done;
      } catch (const std::exception& e) {
        job->error = e.what();
        job->state = Job::State::failed;
      }
      return {{"job", job->id}};
    }
    throw ValidationError(r.path_of("kind"), "unknown acquisition kind (expected emission, eofm, eofm_preview or eop)");
  }

  json create_;
  SessionOptions opts_;
  SeedTree seed_;
  std::shared_ptr<const FloorPlan> plan_;
  std::shared_ptr<StimulusProgram> program_;
  std::optional<NodeId> probe_lane_;
  LaserState laser_;
  std::vector<LaserEvent> events_;
  std::optional<SensorRunner> runner_;
  SensorSession sensor_;
  double time_s_ = 0.0;
  ClockMode clock_mode_ = ClockMode::manual;
  double speed_ = 1.0;
  std::chrono::steady_clock::time_point wall_anchor_;
  bool masking_enabled_ = false;
  json log_ = json::array();
  std::vector<std::shared_ptr<Job>> jobs_;
  std::vector<std::thread> workers_;
  mutable std::mutex mu_;
};

/// Replays a checkpoint or exported log and writes each job's artifact as
/// `<job>.csv`, plus the sensor series and a manifest.
inline std::vector<std::string> replay_session(const json& doc, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  auto s = LabSession::restore(doc, {.async_jobs = false});
  const fs::path staging = out_dir.string() + ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  std::vector<std::string> files;
  try {
    for (const auto& j : s->jobs()) {
      if (j->state != Job::State::done) continue;
      write_file(staging / (j->id + ".csv"), j->artifact_csv());
      files.push_back(j->id + ".csv");
    }
    write_file(staging / "sensor.csv", series_csv(s->sensor_slice(0, s->sensor_size())));
    files.push_back("sensor.csv");
    std::string m = "chiplab-manifest 1\nversion " + std::string(kVersion) + "\nsession_sha256 " + sha256_hex(doc.dump()) + "\n";
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto b = read_file(staging / f);
      m += "file " + f + " " + sha256_hex(b) + " " + std::to_string(b.size()) + "\n";
    }
    write_file(staging / "manifest.txt", m);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw;
  }
  fs::remove_all(out_dir);
  fs::rename(staging, out_dir);
  return files;
}

}  // namespace chiplab
