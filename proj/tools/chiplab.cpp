// chiplab: batch runner, figure reproductions and the lab service.

#include <chiplab/chiplab.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace {

using chiplab::json;

enum Exit { ok = 0, config_error = 2, runtime_error = 3, check_failure = 4 };

int classify(const chiplab::Error& e) {
  static const std::set<std::string_view> config = {"validation_error", "config_error", "lookup_error", "range_error",
                                                    "index_error", "type_error", "placement_error", "aliasing_error",
                                                    "not_found"};
  return config.count(e.code()) ? config_error : runtime_error;
}

std::vector<double> numbers(const std::string& s, std::size_t expect, const char* flag) {
  std::string t = s;
  std::replace(t.begin(), t.end(), ':', ',');
  std::vector<double> v;
  std::stringstream ss(t);
  std::string item;
  try {
    while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  } catch (const std::exception&) {
    throw chiplab::ConfigError(std::string(flag) + ": cannot parse '" + s + "'");
  }
  if (expect && v.size() != expect)
    throw chiplab::ConfigError(std::string(flag) + " expects " + std::to_string(expect) + " numbers");
  return v;
}

json sll_selector(const std::string& s) {
  const auto v = numbers(s, 4, "--sll");
  return {{"sll", {{"boundary", int(v[0])}, {"tile", int(v[1])}, {"site", int(v[2])}, {"lane", int(v[3])}}}};
}
json fabric_selector(const std::string& s) {
  const auto v = numbers(s, 3, "--fabric");
  return {{"fabric", {{"chiplet", int(v[0])}, {"col", int(v[1])}, {"row", int(v[2])}}}};
}

/// Shared ad-hoc options: seed, output directory and toggled nodes.
struct Common {
  std::uint64_t seed = 1;
  std::string out;
  std::vector<std::string> toggle_sll, toggle_fabric;
  std::vector<int> enable_blocks;
  double toggle_hz = 100e6;
  bool dry_run = false;

  void add(CLI::App* c) {
    c->add_option("--seed", seed, "Master seed")->capture_default_str();
    c->add_option("-o,--out", out, "Output directory");
    c->add_option("--toggle-sll", toggle_sll, "Toggle an SLL driver b:t:s:l");
    c->add_option("--toggle-fabric", toggle_fabric, "Toggle a fabric register chip:col:row");
    c->add_option("--toggle-hz", toggle_hz, "Toggle frequency")->capture_default_str();
    c->add_option("--enable-blocks", enable_blocks, "Enable ring-oscillator blocks");
    c->add_flag("--dry-run", dry_run, "Print the generated scenario and exit");
  }

  json scenario(const std::string& description, json step) const {
    json assign = json::array();
    for (const auto& s : toggle_sll) assign.push_back({{"nodes", sll_selector(s)}, {"activity", {{"type", "toggle"}, {"frequency_hz", toggle_hz}}}});
    for (const auto& s : toggle_fabric)
      assign.push_back({{"nodes", fabric_selector(s)}, {"activity", {{"type", "toggle"}, {"frequency_hz", toggle_hz}}}});
    json doc = {{"schema", chiplab::kScenarioSchema}, {"description", description}, {"seed", seed}, {"floorplan", {{"preset", "vu9p"}}}};
    json stim = json::object();
    if (!assign.empty()) stim["assign"] = assign;
    if (!enable_blocks.empty()) stim["ro_blocks_enabled"] = enable_blocks;
    if (!stim.empty()) doc["stimulus"] = stim;
    doc["steps"] = json::array({step});
    return doc;
  }
};

int run_doc(const json& doc, const std::string& out, bool dry_run) {
  if (dry_run) {
    std::cout << doc.dump(2) << "\n";
    return ok;
  }
  auto sc = chiplab::load_scenario(doc.dump(2));
  const auto r = chiplab::run_scenario(sc, out.empty() ? std::filesystem::path("chiplab-out") : std::filesystem::path(out));
  for (const auto& [k, v] : r.metrics) std::cout << k << " " << chiplab::fmt(v) << "\n";
  std::cout << "wrote " << r.files.size() << " files to " << r.output_dir.string() << "\n";
  return ok;
}

json region_of(const std::string& rect, const std::string& around_sll, const std::string& around_fabric, int around_block,
               double margin) {
  if (!rect.empty()) return {{"rect_um", numbers(rect, 4, "--region")}};
  json around;
  if (!around_sll.empty()) around = sll_selector(around_sll);
  else if (!around_fabric.empty()) around = fabric_selector(around_fabric);
  else if (around_block >= 0) around = {{"ro", {{"block", around_block}}}};
  else throw chiplab::ConfigError("a region is required (--region, --around-sll, --around-fabric or --around-block)");
  return {{"around", around}, {"margin_um", margin}};
}

chiplab::SensorSeries read_series_csv(const std::string& path) {
  std::istringstream in(chiplab::read_file(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("t_s,reading", 0) != 0)
    throw chiplab::ValidationError(path, "expected a sensor CSV with header t_s,reading,...");
  chiplab::SensorSeries s;
  s.unit = "ps";
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<double> f;
    try {
      f = numbers(line, 0, "series");
    } catch (const chiplab::Error&) {
      throw chiplab::ValidationError(path + ":" + std::to_string(n), "malformed row");
    }
    if (f.size() < 4) throw chiplab::ValidationError(path + ":" + std::to_string(n), "expected at least 4 columns");
    s.push(f[0], f[1], f[2] != 0, f[3], f[1]);
  }
  return s;
}

chiplab::LabServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chiplab: virtual laser-probing lab for multi-chiplet packages"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(chiplab::kVersion));

  std::string scenario_path, out;
  auto* run = app.add_subcommand("run", "Run a scenario document");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("-o,--out", out, "Output directory (default: the scenario's output_dir)");

  std::string target;
  auto* repro = app.add_subcommand("repro", "Regenerate a bundled figure analog and check it");
  repro->add_option("target", target, "fig3|fig5|fig7|fig8|fig9|fig10|fig11|table-numbers|all")->required();
  repro->add_option("-o,--out", out, "Output directory (default: repro/<target>)");

  // emission
  Common em_c;
  std::string em_rect, em_sll, em_fab, em_lens = "5x";
  int em_block = -1;
  double em_margin = 100, em_exposure = 10, em_pitch = 0;
  auto* emission = app.add_subcommand("emission", "Photon-emission capture");
  em_c.add(emission);
  emission->add_option("--region", em_rect, "x0,y0,x1,y1 in um");
  emission->add_option("--around-sll", em_sll, "Centre the region on an SLL driver b:t:s:l");
  emission->add_option("--around-fabric", em_fab, "Centre the region on a fabric register chip:col:row");
  emission->add_option("--around-block", em_block, "Centre the region on a ring-oscillator block");
  emission->add_option("--margin", em_margin, "Margin around the --around target (um)")->capture_default_str();
  emission->add_option("--exposure", em_exposure, "Exposure (s)")->capture_default_str();
  emission->add_option("--lens", em_lens, "Objective")->capture_default_str();
  emission->add_option("--pitch", em_pitch, "Pixel pitch (um); default follows the lens");

  // eofm
  Common eo_c;
  std::string eo_rect, eo_sll, eo_fab, eo_lens = "20x";
  int eo_block = -1;
  double eo_margin = 10, eo_f = 100e6, eo_dwell = 10e-6, eo_pitch = 0.25, eo_power = 100;
  auto* eofm = app.add_subcommand("eofm", "Electro-optical frequency-mapping scan");
  eo_c.add(eofm);
  eofm->add_option("--region", eo_rect, "x0,y0,x1,y1 in um");
  eofm->add_option("--around-sll", eo_sll, "Centre the region on an SLL driver b:t:s:l");
  eofm->add_option("--around-fabric", eo_fab, "Centre the region on a fabric register chip:col:row");
  eofm->add_option("--around-block", eo_block, "Centre the region on a ring-oscillator block");
  eofm->add_option("--margin", eo_margin, "Margin around the --around target (um)")->capture_default_str();
  eofm->add_option("--f-target", eo_f, "Spectrum-analyser frequency (Hz)")->capture_default_str();
  eofm->add_option("--dwell", eo_dwell, "Dwell per pixel (s)")->capture_default_str();
  eofm->add_option("--pitch", eo_pitch, "Scan pitch (um)")->capture_default_str();
  eofm->add_option("--lens", eo_lens, "Objective")->capture_default_str();
  eofm->add_option("--power", eo_power, "Laser power (%)")->capture_default_str();

  // eop
  Common ep_c;
  std::vector<std::string> ep_at_sll, ep_at_fab;
  std::vector<int> ep_n{5, 25, 100};
  int ep_runs = 1;
  double ep_trigger = 40e-9, ep_rate = 10e9, ep_power = 100;
  std::string ep_lens = "71x";
  auto* eop = app.add_subcommand("eop", "Electro-optical probing waveforms");
  ep_c.add(eop);
  eop->add_option("--at-sll", ep_at_sll, "Probe an SLL driver b:t:s:l");
  eop->add_option("--at-fabric", ep_at_fab, "Probe a fabric register chip:col:row");
  eop->add_option("-n,--integrations", ep_n, "Integration counts")->capture_default_str();
  eop->add_option("--runs", ep_runs, "Acquisitions per N for the SNR estimate")->capture_default_str();
  eop->add_option("--trigger-period", ep_trigger, "Trigger period (s)")->capture_default_str();
  eop->add_option("--sample-rate", ep_rate, "Sample rate (Hz)")->capture_default_str();
  eop->add_option("--lens", ep_lens, "Objective")->capture_default_str();
  eop->add_option("--power", ep_power, "Laser power (%)")->capture_default_str();

  // sensor
  Common se_c;
  std::string se_kind = "phase", se_lane;
  double se_duration = 480, se_cadence = 10, se_toggle = 120, se_step_at = -1, se_power = 100;
  bool se_no_drift = false;
  auto* sensor = app.add_subcommand("sensor", "Differential delay-sensor session under a laser schedule");
  se_c.add(sensor);
  sensor->add_option("--sensor", se_kind, "phase|tdc")->capture_default_str();
  sensor->add_option("--duration", se_duration, "Session length (s)")->capture_default_str();
  sensor->add_option("--cadence", se_cadence, "Readings per second")->capture_default_str();
  sensor->add_option("--toggle-period", se_toggle, "Laser toggle period (s)")->capture_default_str();
  sensor->add_option("--step-at", se_step_at, "Turn the laser on once at this time instead of toggling");
  sensor->add_option("--power", se_power, "Laser power (%)")->capture_default_str();
  sensor->add_option("--probe-lane", se_lane, "Probed SLL lane b:t:s:l");
  sensor->add_flag("--no-drift", se_no_drift, "Disable environmental drift");

  // detect
  std::string de_series, de_alg = "cusum";
  double de_k = 0.2, de_h = 5.0;
  int de_window = 50, de_baseline = 100;
  auto* detect = app.add_subcommand("detect", "Run a change-point detector over a sensor CSV");
  detect->add_option("series", de_series, "CSV written by `sensor` or `run`")->required();
  detect->add_option("-o,--out", out, "Output directory");
  detect->add_option("--algorithm", de_alg, "cusum|sliding_window")->capture_default_str();
  detect->add_option("--k-ps", de_k, "CUSUM reference value (ps)")->capture_default_str();
  detect->add_option("--h-ps", de_h, "Alarm threshold (ps)")->capture_default_str();
  detect->add_option("--window", de_window, "Sliding-window length (samples)")->capture_default_str();
  detect->add_option("--baseline", de_baseline, "Baseline samples")->capture_default_str();

  // mask-demo
  Common ma_c;
  std::string ma_mode = "masked", ma_site = "0:360:0";
  int ma_bits = 2048, ma_experiments = 1, ma_reps = 100, ma_n = 1;
  double ma_bound = 0.095;
  auto* mask = app.add_subcommand("mask-demo", "Replay-averaging attack against a masked link");
  ma_c.add(mask);
  mask->add_option("--mode", ma_mode, "masked|plain|replayed")->capture_default_str();
  mask->add_option("--site", ma_site, "Laguna site b:t:s; lanes 0-4 carry data, lane 5 the pad")->capture_default_str();
  mask->add_option("--bits", ma_bits, "Block length")->capture_default_str();
  mask->add_option("--experiments", ma_experiments, "Independent attack experiments")->capture_default_str();
  mask->add_option("--repetitions", ma_reps, "Replayed acquisitions per experiment")->capture_default_str();
  mask->add_option("-n,--integrations", ma_n, "Shots per acquisition")->capture_default_str();
  mask->add_option("--bound", ma_bound, "Correlation bound")->capture_default_str();

  // serve
  std::string addr;
  auto* serve = app.add_subcommand("serve", "Start the lab session service");
  serve->add_option("--addr", addr, "host:port (default: $CHIPLAB_LABD_ADDR or 127.0.0.1:8470)");

  // replay
  std::string log_path;
  auto* replay = app.add_subcommand("replay", "Replay an exported session log and write its artifacts");
  replay->add_option("log", log_path, "Session log or checkpoint JSON")->required();
  replay->add_option("-o,--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto sc = chiplab::load_scenario_file(scenario_path);
      const auto r = chiplab::run_scenario(sc, out, [](const std::string& s) { std::cerr << "step " << s << "\n"; });
      for (const auto& [k, v] : r.metrics) std::cout << k << " " << chiplab::fmt(v) << "\n";
      std::cout << "wrote " << r.files.size() << " files to " << r.output_dir.string() << "\n";
      return ok;
    }
    if (*repro) {
      std::vector<std::string> targets = target == "all" ? chiplab::repro_targets() : std::vector<std::string>{target};
      chiplab::repro_scenario_name(targets.front());
      bool pass = true;
      for (const auto& t : targets) {
        const auto dir = out.empty() ? std::filesystem::path("repro") / t
                                     : (targets.size() > 1 ? std::filesystem::path(out) / t : std::filesystem::path(out));
        const auto rr = chiplab::repro(t, dir);
        std::cout << rr.report;
        pass = pass && rr.pass;
      }
      return pass ? ok : check_failure;
    }
    if (*emission) {
      json step = {{"kind", "emission"}, {"name", "emission"}, {"region", region_of(em_rect, em_sll, em_fab, em_block, em_margin)},
                   {"exposure_s", em_exposure}, {"lens", em_lens}};
      if (em_pitch > 0) step["pitch_um"] = em_pitch;
      return run_doc(em_c.scenario("ad-hoc emission capture", step), em_c.out, em_c.dry_run);
    }
    if (*eofm) {
      json step = {{"kind", "eofm"}, {"name", "eofm"}, {"region", region_of(eo_rect, eo_sll, eo_fab, eo_block, eo_margin)},
                   {"f_target_hz", eo_f}, {"dwell_s", eo_dwell}, {"pitch_um", eo_pitch}, {"lens", eo_lens}, {"power_pct", eo_power}};
      return run_doc(eo_c.scenario("ad-hoc EOFM scan", step), eo_c.out, eo_c.dry_run);
    }
    if (*eop) {
      json probes = json::object();
      for (std::size_t i = 0; i < ep_at_sll.size(); ++i) probes["sll" + std::to_string(i)] = {{"at", sll_selector(ep_at_sll[i])}};
      for (std::size_t i = 0; i < ep_at_fab.size(); ++i) probes["fabric" + std::to_string(i)] = {{"at", fabric_selector(ep_at_fab[i])}};
      if (probes.empty()) throw chiplab::ConfigError("at least one --at-sll or --at-fabric probe is required");
      json step = {{"kind", "eop"}, {"name", "eop"}, {"probes", probes}, {"integrations", ep_n}, {"runs", ep_runs},
                   {"trigger_period_s", ep_trigger}, {"sample_rate_hz", ep_rate}, {"lens", ep_lens}, {"power_pct", ep_power}};
      return run_doc(ep_c.scenario("ad-hoc EOP acquisition", step), ep_c.out, ep_c.dry_run);
    }
    if (*sensor) {
      json step = {{"kind", "sensor"}, {"name", "sensor"}, {"sensor", se_kind}, {"duration_s", se_duration}, {"cadence_hz", se_cadence}};
      if (se_no_drift) step["drift"] = false;
      if (!se_lane.empty()) step["probe_lane"] = sll_selector(se_lane);
      step["laser_schedule"] = se_step_at >= 0 ? json{{"step_at_s", se_step_at}, {"power_pct", se_power}}
                                               : json{{"toggle_period_s", se_toggle}, {"duration_s", se_duration}, {"power_pct", se_power}};
      return run_doc(se_c.scenario("ad-hoc sensor session", step), se_c.out, se_c.dry_run);
    }
    if (*detect) {
      chiplab::DetectorConfig cfg;
      cfg.algorithm = chiplab::detector_algorithm_from_string(de_alg);
      cfg.k_ps = de_k;
      cfg.h_ps = de_h;
      cfg.window = de_window;
      cfg.baseline_samples = de_baseline;
      cfg.validate();
      const auto rep = chiplab::detect(read_series_csv(de_series), cfg);
      const auto summary = chiplab::detection_summary(rep);
      std::cout << summary;
      if (!out.empty()) {
        std::filesystem::create_directories(out);
        chiplab::write_file(std::filesystem::path(out) / "detect.summary.txt", summary);
        chiplab::write_file(std::filesystem::path(out) / "detect.alarms.csv", chiplab::alarms_csv(rep));
      }
      return ok;
    }
    if (*mask) {
      const auto s = numbers(ma_site, 3, "--site");
      json lanes = json::array();
      for (int l = 0; l < chiplab::kLanesPerSite - 1; ++l)
        lanes.push_back({{"sll", {{"boundary", int(s[0])}, {"tile", int(s[1])}, {"site", int(s[2])}, {"lane", l}}}});
      json step = {{"kind", "mask"}, {"name", "mask"}, {"mode", ma_mode}, {"data_lanes", lanes},
                   {"pad_lane", {{"sll", {{"boundary", int(s[0])}, {"tile", int(s[1])}, {"site", int(s[2])}, {"lane", chiplab::kLanesPerSite - 1}}}}},
                   {"bits", ma_bits}, {"experiments", ma_experiments}, {"repetitions", ma_reps}, {"integrations", ma_n}, {"bound", ma_bound}};
      return run_doc(ma_c.scenario("ad-hoc masking demo", step), ma_c.out, ma_c.dry_run);
    }
    if (*serve) {
      const auto a = chiplab::parse_bind_address(addr);
      chiplab::LabServer server;
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::cerr << "labd listening on " << a.host << ":" << a.port << "\n";
      server.listen(a);
      g_server = nullptr;
      return ok;
    }
    if (*replay) {
      json doc;
      try {
        doc = json::parse(chiplab::read_file(log_path));
      } catch (const json::parse_error& e) {
        throw chiplab::ValidationError("/", std::string("malformed JSON: ") + e.what());
      }
      const auto files = chiplab::replay_session(doc, out);
      for (const auto& f : files) std::cout << f << "\n";
      return ok;
    }
  } catch (const chiplab::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return config_error;
  } catch (const chiplab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return classify(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return runtime_error;
  }
  return ok;
}
