#pragma once

// Per-wire propagation delays and the two delay sensors: the phase-sweeping
// sensor (probit fit over a receive-clock phase sweep) and the carry-chain
// TDC (Hamming weight of a thermometer code).

#include <chiplab/errors.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/rng.hpp>
#include <chiplab/stats.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace chiplab {

struct WireTiming {
  double nominal_ps = 0.0;
  double thermal_ps = 0.0;
  double env_ps = 0.0;
  double jitter_sigma_ps = 5.0;

  double effective_ps() const noexcept { return nominal_ps + thermal_ps + env_ps; }
};

/// Ornstein-Uhlenbeck environmental drift, advanced with its exact
/// discretisation. One realisation is shared by the probe and control wires.
class DriftProcess {
 public:
  struct Params {
    double mean_ps = 0.0;
    double reversion_per_s = 1.0 / 60.0;
    double sigma_ps = 2.0;  // stationary standard deviation
  };

  DriftProcess(Params p, SeedTree seed) : p_(p), rng_(seed.rng()) {
    if (p_.reversion_per_s <= 0 || p_.sigma_ps < 0) throw ConfigError("drift needs reversion > 0 and sigma >= 0");
    x_ = p_.mean_ps + p_.sigma_ps * std::normal_distribution<double>()(rng_);
  }

  double value() const noexcept { return x_; }
  const Params& params() const noexcept { return p_; }

  double step(double dt_s) {
    const double a = std::exp(-p_.reversion_per_s * dt_s);
    const double s = p_.sigma_ps * std::sqrt(1.0 - a * a);
    x_ = p_.mean_ps + (x_ - p_.mean_ps) * a + s * std::normal_distribution<double>()(rng_);
    return x_;
  }

 private:
  Params p_;
  Rng rng_;
  double x_ = 0.0;
};

// ---------------------------------------------------------------------------
// Phase-sweeping sensor

struct PhaseSensorConfig {
  double clock_period_ps = 2000.0;
  double step_ps = 14.286;
  int trials_per_step = 1000;
  // Fraction of link time spent measuring; the line carries no data meanwhile.
  double duty_cycle = 0.01;
  // Each sweep starts at a uniform random offset within one step.
  bool random_start = true;
};

struct PhaseSweep {
  std::vector<double> phase_ps;
  std::vector<int> successes;
  int trials = 0;
};

/// Probability that a sample at phase `phi` captures the new value.
inline double capture_probability(double phi_ps, double delay_ps, double sigma_ps) noexcept {
  if (sigma_ps <= 0) return phi_ps > delay_ps ? 1.0 : (phi_ps < delay_ps ? 0.0 : 0.5);
  return stats::normal_cdf((phi_ps - delay_ps) / sigma_ps);
}

inline PhaseSweep phase_sweep(const WireTiming& wire, const PhaseSensorConfig& cfg, Rng& rng) {
  if (cfg.trials_per_step < 1) throw ConfigError("trials per step must be >= 1");
  if (!(cfg.step_ps > 0)) throw ConfigError("phase step must be > 0");
  if (!(cfg.clock_period_ps > cfg.step_ps)) throw ConfigError("clock period must exceed the phase step");
  const double d = wire.effective_ps();
  if (d < 0 || d >= cfg.clock_period_ps) throw RangeError("wire delay outside the clock period");
  PhaseSweep s;
  s.trials = cfg.trials_per_step;
  const double start = cfg.random_start ? std::uniform_real_distribution<double>(0.0, cfg.step_ps)(rng) : 0.0;
  const int steps = static_cast<int>(std::floor((cfg.clock_period_ps - start) / cfg.step_ps));
  s.phase_ps.reserve(steps);
  s.successes.reserve(steps);
  const double m = cfg.trials_per_step;
  for (int k = 0; k < steps; ++k) {
    const double phi = start + k * cfg.step_ps;
    const double p = capture_probability(phi, d, wire.jitter_sigma_ps);
    int hits;
    if (p * m < 1e-9) hits = 0;
    else if ((1 - p) * m < 1e-9) hits = cfg.trials_per_step;
    else hits = std::binomial_distribution<int>(cfg.trials_per_step, p)(rng);
    s.phase_ps.push_back(phi);
    s.successes.push_back(hits);
  }
  return s;
}

namespace detail {

// log Phi(z) and the inverse Mills ratio phi(z)/Phi(z), stable in the far tail.
inline double log_ncdf(double z) {
  if (z > -35) return std::log(stats::normal_cdf(z));
  return -0.5 * z * z - std::log(-z) - 0.5 * std::log(2 * std::numbers::pi) + std::log1p(-1.0 / (z * z));
}
inline double mills(double z) {
  if (z > -35) return stats::normal_pdf(z) / stats::normal_cdf(z);
  return -z / (1.0 - 1.0 / (z * z));
}

}  // namespace detail

/// Maximum-likelihood probit fit of success fraction against phase; returns
/// the 50 % crossing. Raises RangeError when the sweep never brackets it.
inline double probit_crossing(std::span<const double> x, std::span<const int> k, int trials) {
  if (x.size() != k.size() || x.empty()) throw ConfigError("probit fit needs matching, non-empty inputs");
  const bool any_fail = std::any_of(k.begin(), k.end(), [&](int v) { return v < trials; });
  const bool any_hit = std::any_of(k.begin(), k.end(), [](int v) { return v > 0; });
  if (!any_fail) throw RangeError("all samples succeeded: delay outside the swept window");
  if (!any_hit) throw RangeError("all samples failed: delay outside the swept window");

  std::vector<std::size_t> mid;
  for (std::size_t i = 0; i < k.size(); ++i)
    if (k[i] > 0 && k[i] < trials) mid.push_back(i);

  // Bracket: last all-fail before the first success and first all-success after it.
  std::size_t lo = 0, hi = x.size() - 1;
  for (std::size_t i = 0; i < k.size(); ++i)
    if (k[i] == 0) lo = i;
    else break;
  for (std::size_t i = k.size(); i-- > 0;)
    if (k[i] == trials) hi = i;
    else break;

  if (mid.empty()) return 0.5 * (x[lo] + x[hi]);
  if (mid.size() == 1) {
    // The likelihood has no interior maximum; the limit of vanishing slope
    // places the crossing on the single partial point.
    return x[mid.front()];
  }

  // Newton iterations on the concave log-likelihood in (a, b), with x
  // centred and scaled for conditioning.
  const double x0 = x[mid.front()], scale = std::max(1e-12, x[mid.back()] - x[mid.front()]);
  std::vector<double> u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) u[i] = (x[i] - x0) / scale;

  auto loglik = [&](double a, double b) {
    double ll = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double z = a + b * u[i];
      if (k[i] > 0) ll += k[i] * detail::log_ncdf(z);
      if (k[i] < trials) ll += (trials - k[i]) * detail::log_ncdf(-z);
    }
    return ll;
  };

  // Start from a least-squares fit of the probit-transformed partial points.
  double a = 0.0, b = 4.0;
  {
    std::vector<double> uu, zz;
    for (std::size_t i : mid) {
      const double p = static_cast<double>(k[i]) / trials;
      // Inverse normal CDF by bisection is ample here.
      double lo_z = -10, hi_z = 10;
      for (int it = 0; it < 80; ++it) {
        const double m = 0.5 * (lo_z + hi_z);
        (stats::normal_cdf(m) < p ? lo_z : hi_z) = m;
      }
      uu.push_back(u[i]);
      zz.push_back(0.5 * (lo_z + hi_z));
    }
    const auto f = stats::fit_line(uu, zz);
    if (f.slope > 0) {
      a = f.intercept;
      b = f.slope;
    }
  }

  double ll = loglik(a, b);
  for (int iter = 0; iter < 200; ++iter) {
    double ga = 0, gb = 0, haa = 0, hab = 0, hbb = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double z = a + b * u[i];
      double g = 0.0, h = 0.0;  // d/dz and -d2/dz2 of the per-point log-likelihood
      if (k[i] > 0) {
        const double r = detail::mills(z);
        g += k[i] * r;
        h += k[i] * r * (r + z);
      }
      if (k[i] < trials) {
        const double r = detail::mills(-z);
        g -= (trials - k[i]) * r;
        h += (trials - k[i]) * r * (r - z);
      }
      ga += g;
      gb += g * u[i];
      haa += h;
      hab += h * u[i];
      hbb += h * u[i] * u[i];
    }
    const double det = haa * hbb - hab * hab;
    if (!(det > 0)) break;
    double da = (hbb * ga - hab * gb) / det;
    double db = (haa * gb - hab * ga) / det;
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      const double na = a + t * da, nb = b + t * db;
      if (nb <= 0) continue;
      const double nll = loglik(na, nb);
      if (nll >= ll) {
        a = na;
        b = nb;
        improved = nll - ll > 1e-13 * std::abs(ll) || std::abs(t * da) + std::abs(t * db) > 1e-12;
        ll = nll;
        break;
      }
    }
    if (!improved) break;
  }
  return x0 + scale * (-a / b);
}

inline double probit_crossing(const PhaseSweep& s) { return probit_crossing(s.phase_ps, s.successes, s.trials); }

/// One phase-sensor reading of the wire's delay (ps).
inline double phase_sweep_measure(const WireTiming& wire, const PhaseSensorConfig& cfg, Rng& rng) {
  return probit_crossing(phase_sweep(wire, cfg, rng));
}

// ---------------------------------------------------------------------------
// TDC

struct TdcConfig {
  int taps = 240;
  double pitch_ps = 1.917;
  double t_ref_ps = 1090.0;

  static TdcConfig calibrated() { return {}; }
  /// Vendor datasheet estimate of the carry-chain tap delay.
  static TdcConfig vendor_estimate() { return {240, 2.75, 1090.0}; }
};

struct TdcReading {
  int hamming_weight = 0;
  bool saturated = false;
};

/// The thermometer code is all ones up to the arrival position, so its
/// Hamming weight equals the clamped code length.
inline TdcReading tdc_measure(const WireTiming& wire, const TdcConfig& tdc, Rng& rng) {
  if (tdc.taps < 1 || !(tdc.pitch_ps > 0)) throw ConfigError("TDC needs taps >= 1 and pitch > 0");
  const double j = wire.jitter_sigma_ps > 0 ? std::normal_distribution<double>(0.0, wire.jitter_sigma_ps)(rng) : 0.0;
  const double len = std::floor((tdc.t_ref_ps - wire.effective_ps() - j) / tdc.pitch_ps);
  TdcReading r;
  if (len < 0) {
    r.hamming_weight = 0;
    r.saturated = true;
  } else if (len > tdc.taps) {
    r.hamming_weight = tdc.taps;
    r.saturated = true;
  } else {
    r.hamming_weight = static_cast<int>(len);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Sensor series

struct SensorSeries {
  std::string unit = "ps";
  std::vector<double> t_s;
  std::vector<double> readings;
  std::vector<std::uint8_t> laser_on;
  std::vector<double> power_pct;
  // Noise-free differential (ps) behind each reading; not visible to a detector.
  std::vector<double> truth_ps;
  double duty_cycle = 1.0;
  std::size_t saturated = 0;

  std::size_t size() const noexcept { return t_s.size(); }
  bool empty() const noexcept { return t_s.empty(); }
  double cadence_hz() const noexcept { return t_s.size() > 1 ? 1.0 / (t_s[1] - t_s[0]) : 0.0; }

  void push(double t, double reading, bool on, double power, double truth) {
    t_s.push_back(t);
    readings.push_back(reading);
    laser_on.push_back(on ? 1 : 0);
    power_pct.push_back(power);
    truth_ps.push_back(truth);
  }
};

/// Pointwise probe - control. Annotations come from the probe series.
inline SensorSeries differential(const SensorSeries& probe, const SensorSeries& control) {
  if (probe.size() != control.size()) throw ConfigError("differential: series lengths differ");
  for (std::size_t i = 0; i < probe.size(); ++i)
    if (std::abs(probe.t_s[i] - control.t_s[i]) > 1e-9) throw ConfigError("differential: timestamps differ");
  SensorSeries d = probe;
  for (std::size_t i = 0; i < d.size(); ++i) {
    d.readings[i] = probe.readings[i] - control.readings[i];
    d.truth_ps[i] = probe.truth_ps[i] - control.truth_ps[i];
  }
  d.saturated = probe.saturated + control.saturated;
  return d;
}

/// Trailing moving average over `window_s` (the plotting view).
inline std::vector<double> moving_average(const SensorSeries& s, double window_s = 2.0) {
  std::vector<double> out(s.size());
  double sum = 0.0;
  std::size_t first = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sum += s.readings[i];
    while (s.t_s[i] - s.t_s[first] >= window_s - 1e-9) sum -= s.readings[first++];
    out[i] = sum / static_cast<double>(i - first + 1);
  }
  return out;
}

/// Mean reading over samples with the given laser state.
inline double mean_where(const SensorSeries& s, bool laser_on) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (static_cast<bool>(s.laser_on[i]) == laser_on) {
      sum += s.readings[i];
      ++n;
    }
  if (n == 0) throw RangeError(std::string("no samples with laser ") + (laser_on ? "on" : "off"));
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Laser schedule and thermal state

struct LaserEvent {
  double t_s = 0.0;
  bool on = false;
  double power_pct = 100.0;
  std::optional<Point> position;
  double coupling = 1.0;  // fraction of the probed driver under the spot
};

class LaserSchedule {
 public:
  LaserSchedule() = default;
  explicit LaserSchedule(std::vector<LaserEvent> events) : events_(std::move(events)) {
    for (std::size_t i = 0; i < events_.size(); ++i) {
      if (events_[i].t_s < 0) throw ConfigError("laser schedule times must be >= 0");
      if (i > 0 && !(events_[i].t_s > events_[i - 1].t_s)) throw ConfigError("laser schedule times must be increasing");
      if (!(events_[i].power_pct >= 0 && events_[i].power_pct <= 100)) throw ConfigError("laser power must be in [0, 100]");
      if (!(events_[i].coupling >= 0 && events_[i].coupling <= 1)) throw ConfigError("laser coupling must be in [0, 1]");
    }
  }

  /// Off from t = 0, toggled every `period_s`.
  static LaserSchedule toggling(double period_s, double duration_s, double power_pct, bool start_on = false) {
    std::vector<LaserEvent> ev;
    bool on = start_on;
    if (!(period_s > 0)) throw ConfigError("toggle period must be > 0");
    for (double t = 0.0; t < duration_s - 1e-9; t += period_s, on = !on) ev.push_back({t, on, power_pct, {}, 1.0});
    return LaserSchedule(std::move(ev));
  }
  /// Off, then on at `t_on` and never off again.
  static LaserSchedule step(double t_on, double power_pct) {
    return LaserSchedule({{0.0, false, power_pct, {}, 1.0}, {t_on, true, power_pct, {}, 1.0}});
  }

  const std::vector<LaserEvent>& events() const noexcept { return events_; }

  /// Event in force at time t (laser off before the first event).
  LaserEvent at(double t) const {
    LaserEvent cur{0.0, false, 0.0, {}, 1.0};
    for (const auto& e : events_) {
      if (e.t_s > t + 1e-12) break;
      cur = e;
    }
    return cur;
  }

 private:
  std::vector<LaserEvent> events_;
};

/// First-order thermal response of the probed wire: relaxes toward
/// coupling * asymptote(P) while the laser is on and toward 0 while off.
class ThermalState {
 public:
  ThermalState(ThermalModel model = {}, double coupling = 1.0) : model_(model), coupling_(coupling) {}

  double delta_ps() const noexcept { return delta_; }
  double time_s() const noexcept { return t_; }

  void advance(double t_to, const LaserSchedule& schedule) {
    if (t_to < t_) throw ConfigError("thermal state cannot run backwards");
    const auto& ev = schedule.events();
    while (t_ < t_to) {
      double next = t_to;
      for (const auto& e : ev)
        if (e.t_s > t_ + 1e-12) {
          next = std::min(next, e.t_s);
          break;
        }
      const LaserEvent cur = schedule.at(t_);
      const double target = cur.on ? coupling_ * cur.coupling * model_.asymptote(cur.power_pct) : 0.0;
      delta_ = target + (delta_ - target) * std::exp(-(next - t_) / model_.tau_s);
      t_ = next;
    }
  }

 private:
  ThermalModel model_;
  double coupling_;
  double delta_ = 0.0;
  double t_ = 0.0;
};

// ---------------------------------------------------------------------------
// Sensor sessions

enum class SensorKind { phase, tdc };

inline std::string_view to_string(SensorKind k) noexcept { return k == SensorKind::phase ? "phase" : "tdc"; }
inline SensorKind sensor_kind_from_string(std::string_view s) {
  if (s == "phase") return SensorKind::phase;
  if (s == "tdc") return SensorKind::tdc;
  throw ConfigError("unknown sensor kind '" + std::string(s) + "'");
}

struct SensorConfig {
  SensorKind kind = SensorKind::phase;
  double probe_nominal_ps = 860.000;
  double control_nominal_ps = 899.090;
  double phase_jitter_ps = 5.0;
  double tdc_jitter_ps = 2.0;
  double cadence_hz = 10.0;
  double duration_s = 480.0;
  double coupling = 1.0;  // fraction of the probe driver under the spot
  bool drift_enabled = true;
  DriftProcess::Params drift{};
  PhaseSensorConfig phase{};
  TdcConfig tdc{};
  ThermalModel thermal{};

  double jitter_ps() const noexcept { return kind == SensorKind::phase ? phase_jitter_ps : tdc_jitter_ps; }
};

struct SensorSession {
  SensorSeries probe;
  SensorSeries control;
  SensorSeries diff;
};

/// Streaming form of a sensor session so that a service can produce readings
/// incrementally; `run_sensor_session` drives it to completion.
class SensorRunner {
 public:
  SensorRunner(SensorConfig cfg, LaserSchedule schedule, SeedTree seed)
      : cfg_(std::move(cfg)),
        schedule_(std::move(schedule)),
        drift_(cfg_.drift, seed.child("drift")),
        thermal_(cfg_.thermal, cfg_.coupling),
        probe_rng_(seed.child("probe").rng()),
        control_rng_(seed.child("control").rng()) {
    if (!(cfg_.cadence_hz > 0)) throw ConfigError("sensor cadence must be > 0");
    if (cfg_.duration_s < 0) throw ConfigError("sensor duration must be >= 0");
  }

  const SensorConfig& config() const noexcept { return cfg_; }
  const LaserSchedule& schedule() const noexcept { return schedule_; }
  void set_schedule(LaserSchedule s) { schedule_ = std::move(s); }
  std::size_t index() const noexcept { return k_; }
  double next_time() const noexcept { return static_cast<double>(k_) / cfg_.cadence_hz; }

  /// Produces the reading at the next cadence tick.
  void step(SensorSession& out) {
    const double t = next_time();
    if (k_ > 0 && cfg_.drift_enabled) drift_.step(1.0 / cfg_.cadence_hz);
    thermal_.advance(t, schedule_);
    const double env = cfg_.drift_enabled ? drift_.value() : 0.0;
    const LaserEvent laser = schedule_.at(t);

    WireTiming probe{cfg_.probe_nominal_ps, thermal_.delta_ps(), env, cfg_.jitter_ps()};
    WireTiming control{cfg_.control_nominal_ps, 0.0, env, cfg_.jitter_ps()};
    double rp, rc;
    if (cfg_.kind == SensorKind::phase) {
      rp = phase_sweep_measure(probe, cfg_.phase, probe_rng_);
      rc = phase_sweep_measure(control, cfg_.phase, control_rng_);
    } else {
      const auto a = tdc_measure(probe, cfg_.tdc, probe_rng_);
      const auto b = tdc_measure(control, cfg_.tdc, control_rng_);
      rp = a.hamming_weight;
      rc = b.hamming_weight;
      out.probe.saturated += a.saturated;
      out.control.saturated += b.saturated;
    }
    out.probe.push(t, rp, laser.on, laser.on ? laser.power_pct : 0.0, probe.effective_ps());
    out.control.push(t, rc, laser.on, laser.on ? laser.power_pct : 0.0, control.effective_ps());
    out.diff.push(t, rp - rc, laser.on, laser.on ? laser.power_pct : 0.0, probe.effective_ps() - control.effective_ps());
    ++k_;
  }

  SensorSession make_session() const {
    SensorSession s;
    const std::string unit = cfg_.kind == SensorKind::phase ? "ps" : "taps";
    const double duty = cfg_.kind == SensorKind::phase ? cfg_.phase.duty_cycle : 1.0;
    for (auto* series : {&s.probe, &s.control, &s.diff}) {
      series->unit = unit;
      series->duty_cycle = duty;
    }
    return s;
  }

 private:
  SensorConfig cfg_;
  LaserSchedule schedule_;
  DriftProcess drift_;
  ThermalState thermal_;
  Rng probe_rng_;
  Rng control_rng_;
  std::size_t k_ = 0;
};

inline SensorSession run_sensor_session(const SensorConfig& cfg, const LaserSchedule& schedule, SeedTree seed) {
  SensorRunner runner(cfg, schedule, seed);
  SensorSession out = runner.make_session();
  const auto n = static_cast<std::size_t>(std::floor(cfg.duration_s * cfg.cadence_hz + 1e-9));
  for (auto* s : {&out.probe, &out.control, &out.diff}) {
    s->t_s.reserve(n);
    s->readings.reserve(n);
  }
  for (std::size_t i = 0; i < n; ++i) runner.step(out);
  out.diff.saturated = out.probe.saturated + out.control.saturated;
  return out;
}

/// Fast surrogate of a differential phase-sensor series for detector Monte
/// Carlo: baseline plus the thermal response to `schedule` plus white
/// Gaussian noise of `sigma_ps`.
inline SensorSeries synthesize_differential(const LaserSchedule& schedule, double duration_s, double cadence_hz,
                                            double sigma_ps, Rng& rng, double baseline_ps = -39.090,
                                            const ThermalModel& model = {}) {
  if (!(cadence_hz > 0)) throw ConfigError("cadence must be > 0");
  SensorSeries s;
  ThermalState th(model);
  const auto n = static_cast<std::size_t>(std::floor(duration_s * cadence_hz + 1e-9));
  std::normal_distribution<double> g(0.0, sigma_ps);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / cadence_hz;
    th.advance(t, schedule);
    const auto ev = schedule.at(t);
    const double truth = baseline_ps + th.delta_ps();
    s.push(t, truth + (sigma_ps > 0 ? g(rng) : 0.0), ev.on, ev.on ? ev.power_pct : 0.0, truth);
  }
  return s;
}

}  // namespace chiplab
