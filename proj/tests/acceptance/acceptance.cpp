// Acceptance run: one PASS/FAIL line per headline requirement.

#include <chiplab/harness.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "oracles.hpp"

using namespace chiplab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

void info(const std::string& name, const std::string& detail) {
  std::printf("INFO %s: %s\n", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string num(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

bool within(double v, double centre, double tol) { return std::abs(v - centre) <= tol; }

double metric(const RunResult& r, const std::string& key) {
  auto it = r.metrics.find(key);
  if (it == r.metrics.end()) throw std::runtime_error("missing metric " + key);
  return it->second;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<double> csv_column(const std::string& text, const std::string& column) {
  std::istringstream in(text);
  std::string line, cell;
  std::getline(in, line);
  std::istringstream head(line);
  int idx = -1;
  for (int i = 0; std::getline(head, cell, ','); ++i)
    if (cell == column) idx = i;
  if (idx < 0) throw std::runtime_error("no column " + column);
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    for (int i = 0; std::getline(row, cell, ','); ++i)
      if (i == idx) out.push_back(std::stod(cell));
  }
  return out;
}

const char* kMaskScenario = R"({
  "schema": "chiplab.scenario/1",
  "seed": 64,
  "floorplan": {"preset": "vu9p"},
  "steps": [
    {"kind": "mask", "name": "plain", "mode": "plain", "experiments": 20, "repetitions": 100,
     "data_lanes": {"sll": {"boundary": 0, "tile": 360, "site": 1, "lane": [0, 1]}},
     "pad_lane": {"sll": {"boundary": 0, "tile": 360, "site": 1, "lane": 5}}},
    {"kind": "mask", "name": "masked", "mode": "masked", "experiments": 100, "repetitions": 1000, "bound": 0.095,
     "data_lanes": {"sll": {"boundary": 0, "tile": 360, "site": 1, "lane": [0, 1]}},
     "pad_lane": {"sll": {"boundary": 0, "tile": 360, "site": 1, "lane": 5}}}
  ]
})";

void phase_jump() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rr = repro("fig8", oracle::scratch("acc_fig8"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& r = rr.run;
  const double off = metric(r, "phase.off_mean"), on = metric(r, "phase.on_mean"), step = metric(r, "phase.step");
  const bool ok = within(off, -39.090, 0.05) && within(on, -38.298, 0.05) && within(step, 0.792, 0.05) &&
                  metric(r, "phase.samples") == 4800 && secs < 30;
  verdict("phase-sensor jump", ok,
          "off " + num(off) + " ps, on " + num(on) + " ps, step " + num(step) + " ps, " +
              num(metric(r, "phase.samples"), 0) + " samples, " + num(secs, 2) + " s");
}

void tdc_dip() {
  const auto r = repro("fig9", oracle::scratch("acc_fig9")).run;
  const double dip = -metric(r, "tdc.step");
  const double pitch = metric(r, "phase.step") / dip;
  const double n = metric(r, "tdc.samples");
  verdict("TDC dip", within(dip, 0.413, 0.03) && within(pitch, 1.917, 1.917 * 0.05) && n >= 1e4,
          "dip " + num(dip) + " taps over " + num(n, 0) + " samples, pitch " + num(pitch) + " ps/tap");
}

void power_linearity(const RunResult& r) {
  // Least squares through the origin, recomputed from the per-power steps.
  const std::vector<double> p{25, 50, 75, 100};
  std::vector<double> y;
  for (double x : p) y.push_back(metric(r, "sweep.step_at_" + num(x, 0)));
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sxy += p[i] * y[i];
    sxx += p[i] * p[i];
    syy += y[i] * y[i];
  }
  const double slope = sxy / sxx;
  double sse = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sse += std::pow(y[i] - slope * p[i], 2);
  const double r2 = 1 - sse / syy;
  verdict("power linearity", r2 >= 0.99,
          "steps " + num(y[0]) + " / " + num(y[1]) + " / " + num(y[2]) + " / " + num(y[3]) + " ps, R^2 " + num(r2, 5));
}

void roc(const RunResult& r) {
  const double a25 = metric(r, "roc.auc_at_25"), a50 = metric(r, "roc.auc_at_50"), a100 = metric(r, "roc.auc_at_100");
  verdict("CUSUM ROC", a100 >= 0.95 && a25 <= a50 && a50 <= a100,
          "AUC 25% " + num(a25) + ", 50% " + num(a50) + ", 100% " + num(a100) + " (500 runs/class)");
}

void thermal_ramp() {
  const auto r = repro("fig10", oracle::scratch("acc_fig10")).run;
  const double f1 = metric(r, "ramp.ramp_1s"), f25 = metric(r, "ramp.ramp_2_5s");
  verdict("thermal ramp", f1 >= 0.95 && f25 >= 0.999,
          "fraction of asymptote " + num(f1) + " at 1.0 s, " + num(f25, 5) + " at 2.5 s");
}

void eop_scaling(const RunResult& r) {
  const double l5 = metric(r, "eop.laguna.n5.snr"), l25 = metric(r, "eop.laguna.n25.snr"), l100 = metric(r, "eop.laguna.n100.snr");
  const double q1 = l100 / l25, q2 = l25 / l5;
  verdict("EOP root-N law", q1 >= 1.8 && q1 <= 2.2 && q2 >= 2.0 && q2 <= 2.6,
          "SNR(100)/SNR(25) " + num(q1) + ", SNR(25)/SNR(5) " + num(q2) + " (200 runs)");
}

void visibility(const RunResult& eop) {
  bool snr_ok = true;
  std::string detail;
  for (const std::string n : {"5", "25", "100"}) {
    const double l = metric(eop, "eop.laguna.n" + n + ".snr"), f = metric(eop, "eop.fabric.n" + n + ".snr");
    snr_ok &= l > f;
    detail += "N=" + n + " " + num(l, 2) + ">" + num(f, 2) + ", ";
  }
  const auto eofm = repro("fig5", oracle::scratch("acc_fig5")).run;
  const double ratio = metric(eofm, "eofm.laguna.per_node") / metric(eofm, "eofm.fabric.per_node");
  verdict("Laguna vs fabric visibility", snr_ok && within(ratio, 4.0, 0.6), detail + "EOFM per-node ratio " + num(ratio, 3));
}

void probit() {
  // Capture model against an independently integrated normal CDF.
  double worst = 0;
  for (double phi = 900; phi <= 1100; phi += 0.37)
    worst = std::max(worst, std::abs(capture_probability(phi, 1000.0, 5.0) - oracle::phi((phi - 1000.0) / 5.0)));

  PhaseSensorConfig cfg;
  cfg.trials_per_step = 1000;
  int hits = 0;
  double sum = 0, max_err = 0;
  std::mt19937_64 truth(2024);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    WireTiming wire;
    wire.nominal_ps = std::uniform_real_distribution<double>(800.0, 1200.0)(truth);
    wire.jitter_sigma_ps = 5.0;
    Rng rng(seed);
    const double err = phase_sweep_measure(wire, cfg, rng) - wire.effective_ps();
    sum += err;
    hits += std::abs(err) <= 0.2;
    max_err = std::max(max_err, std::abs(err));
  }
  const double mean = sum / 100;
  verdict("probit estimator", worst < 1e-6 && std::abs(mean) <= 0.2,
          "capture model vs Phi oracle max diff " + sci(worst) + ", mean error over 100 seeds " + num(mean) + " ps");
  info("probit estimator", std::to_string(hits) + "/100 single seeds within 0.2 ps (max |error| " + num(max_err) +
                               " ps); see the estimator notes in the README");
}

void masking(RunResult& r) {
  const auto plain = csv_column(slurp(r.output_dir / "plain.csv"), "corr_data");
  const double plain_min = *std::min_element(plain.begin(), plain.end());
  const double frac = metric(r, "masked.fraction_within_bound");
  verdict("masking efficacy", plain_min > 0.99 && frac >= 0.99,
          "unmasked min corr " + num(plain_min) + " at R=100 over " + std::to_string(plain.size()) +
              " runs, masked |corr| <= 0.095 in " + num(frac * 100, 1) + "% of 100 runs at R=1000 (max " +
              num(metric(r, "masked.max_abs_corr")) + ")");
}

void determinism() {
  std::vector<std::pair<std::string, std::string>> texts;
  for (const std::string name : {"minimal", "fig3", "fig5", "fig7", "fig8", "fig9", "fig10", "fig11"})
    texts.emplace_back(name, bundled_scenario(name));
  texts.emplace_back("mask", kMaskScenario);
  int files = 0;
  std::string bad;
  for (const auto& [name, text] : texts) {
    const auto a = oracle::scratch("acc_det_" + name + "_a"), b = oracle::scratch("acc_det_" + name + "_b");
    auto s1 = load_scenario(text), s2 = load_scenario(text);
    const auto r1 = run_scenario(s1, a), r2 = run_scenario(s2, b);
    if (r1.files != r2.files) bad += name + " (file list) ";
    for (const auto& f : r1.files) {
      ++files;
      if (slurp(a / f) != slurp(b / f)) bad += name + "/" + f + " ";
    }
    if (slurp(a / "manifest.txt") != slurp(b / "manifest.txt")) bad += name + "/manifest.txt ";
  }
  verdict("determinism", bad.empty(),
          bad.empty() ? std::to_string(files) + " files across " + std::to_string(texts.size()) + " scenarios byte-identical"
                      : "differs: " + bad);
}

template <class F>
void guarded(const std::string& name, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    verdict(name, false, std::string("error: ") + e.what());
  }
}

}  // namespace

int main() {
  guarded("phase-sensor jump", phase_jump);
  guarded("TDC dip", tdc_dip);
  guarded("power linearity / CUSUM ROC", [] {
    const auto r = repro("fig11", oracle::scratch("acc_fig11")).run;
    power_linearity(r);
    roc(r);
  });
  guarded("thermal ramp", thermal_ramp);
  guarded("EOP / visibility", [] {
    const auto r = repro("fig7", oracle::scratch("acc_fig7")).run;
    eop_scaling(r);
    visibility(r);
  });
  guarded("probit estimator", probit);
  guarded("masking efficacy", [] {
    auto sc = load_scenario(kMaskScenario);
    auto r = run_scenario(sc, oracle::scratch("acc_mask"));
    masking(r);
  });
  guarded("determinism", determinism);
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
