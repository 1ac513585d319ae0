#pragma once

// Change detection on differential sensor series: two-sided CUSUM, a
// sliding-window mean-shift baseline, threshold calibration and ROC sweeps.

#include <chiplab/errors.hpp>
#include <chiplab/rng.hpp>
#include <chiplab/stats.hpp>
#include <chiplab/timing.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace chiplab {

enum class DetectorAlgorithm { cusum, sliding_window };

inline std::string_view to_string(DetectorAlgorithm a) noexcept {
  return a == DetectorAlgorithm::cusum ? "cusum" : "sliding_window";
}
inline DetectorAlgorithm detector_algorithm_from_string(std::string_view s) {
  if (s == "cusum") return DetectorAlgorithm::cusum;
  if (s == "sliding_window") return DetectorAlgorithm::sliding_window;
  throw ConfigError("unknown detector algorithm '" + std::string(s) + "'");
}

struct DetectorConfig {
  DetectorAlgorithm algorithm = DetectorAlgorithm::cusum;
  double k_ps = 0.2;
  double h_ps = 5.0;
  int window = 50;             // sliding-window length in samples
  int baseline_samples = 100;  // readings used to estimate the in-control mean

  void validate() const {
    if (!(h_ps > 0)) throw ConfigError("detector threshold h must be > 0");
    if (!(k_ps >= 0)) throw ConfigError("detector reference value k must be >= 0");
    if (window < 1) throw ConfigError("detector window must be >= 1");
    if (baseline_samples < 1) throw ConfigError("detector baseline must be >= 1 sample");
  }
};

struct Alarm {
  std::size_t index = 0;
  double t_s = 0.0;
  double statistic = 0.0;
  int direction = +1;  // +1 upward shift, -1 downward
};

struct DetectionReport {
  std::vector<Alarm> alarms;
  double baseline = 0.0;
  std::vector<double> onset_s;
  std::vector<double> latency_s;  // per onset; negative means missed
  std::size_t false_alarms = 0;
  double false_alarms_per_hour = 0.0;
  struct PowerSummary {
    std::size_t onsets = 0;
    std::size_t detected = 0;
    double median_latency_s = 0.0;
  };
  std::map<double, PowerSummary> per_power;
};

/// Two-sided CUSUM over readings minus `baseline`. Returns alarm indices;
/// both statistics restart from zero after each alarm.
inline std::vector<Alarm> cusum_alarms(std::span<const double> x, std::span<const double> t, double baseline,
                                       double k, double h, std::size_t start = 0) {
  std::vector<Alarm> out;
  double hi = 0.0, lo = 0.0;
  for (std::size_t i = start; i < x.size(); ++i) {
    const double d = x[i] - baseline;
    hi = std::max(0.0, hi + d - k);
    lo = std::max(0.0, lo - d - k);
    if (hi > h || lo > h) {
      const bool up = hi > h;
      out.push_back({i, t.empty() ? static_cast<double>(i) : t[i], up ? hi : lo, up ? +1 : -1});
      hi = lo = 0.0;
    }
  }
  return out;
}

/// Largest of the two CUSUM statistics over [begin, end), started at
/// `begin` and never reset.
inline double cusum_peak(std::span<const double> x, double baseline, double k, std::size_t begin, std::size_t end) {
  double hi = 0.0, lo = 0.0, peak = 0.0;
  for (std::size_t i = begin; i < std::min(end, x.size()); ++i) {
    const double d = x[i] - baseline;
    hi = std::max(0.0, hi + d - k);
    lo = std::max(0.0, lo - d - k);
    peak = std::max({peak, hi, lo});
  }
  return peak;
}

/// Alarms when the mean of the last `window` readings departs from the
/// baseline by more than h; the window restarts after an alarm.
inline std::vector<Alarm> sliding_window_alarms(std::span<const double> x, std::span<const double> t, double baseline,
                                                int window, double h, std::size_t start = 0) {
  std::vector<Alarm> out;
  double sum = 0.0;
  std::size_t first = start;
  for (std::size_t i = start; i < x.size(); ++i) {
    sum += x[i] - baseline;
    if (i - first + 1 > static_cast<std::size_t>(window)) sum -= x[first++] - baseline;
    if (i - first + 1 == static_cast<std::size_t>(window)) {
      const double m = sum / window;
      if (std::abs(m) > h) {
        out.push_back({i, t.empty() ? static_cast<double>(i) : t[i], std::abs(m), m > 0 ? +1 : -1});
        sum = 0.0;
        first = i + 1;
      }
    }
  }
  return out;
}

namespace detail {

// Laser-on onsets annotated in the series, as (index, power).
inline std::vector<std::pair<std::size_t, double>> onsets(const SensorSeries& s) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.laser_on[i] && (i == 0 || !s.laser_on[i - 1])) out.emplace_back(i, s.power_pct[i]);
  return out;
}

}  // namespace detail

/// Runs the configured detector and attributes alarms to laser onsets.
/// An alarm is a false alarm when it fires with the laser off and no laser
/// exposure in the preceding `settle_s` seconds.
inline DetectionReport detect(const SensorSeries& series, const DetectorConfig& cfg, double settle_s = 2.5) {
  cfg.validate();
  if (series.empty()) throw ConfigError("cannot run a detector on an empty series");
  DetectionReport r;
  const std::size_t nb = std::min<std::size_t>(cfg.baseline_samples, series.size());
  r.baseline = stats::mean(std::span<const double>(series.readings.data(), nb));
  r.alarms = cfg.algorithm == DetectorAlgorithm::cusum
                 ? cusum_alarms(series.readings, series.t_s, r.baseline, cfg.k_ps, cfg.h_ps, nb)
                 : sliding_window_alarms(series.readings, series.t_s, r.baseline, cfg.window, cfg.h_ps, nb);

  const auto on = detail::onsets(series);
  std::map<double, std::vector<double>> latencies_by_power;
  for (std::size_t j = 0; j < on.size(); ++j) {
    const auto [idx, power] = on[j];
    // Detection must happen before the laser goes off again.
    std::size_t end = idx;
    while (end < series.size() && series.laser_on[end]) ++end;
    double lat = -1.0;
    for (const auto& a : r.alarms)
      if (a.index >= idx && a.index < end) {
        lat = series.t_s[a.index] - series.t_s[idx];
        break;
      }
    r.onset_s.push_back(series.t_s[idx]);
    r.latency_s.push_back(lat);
    auto& ps = r.per_power[power];
    ++ps.onsets;
    if (lat >= 0) {
      ++ps.detected;
      latencies_by_power[power].push_back(lat);
    }
  }
  for (auto& [p, v] : latencies_by_power) r.per_power[p].median_latency_s = stats::median(v);

  double last_on_t = -1e300;
  std::size_t ai = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.laser_on[i]) last_on_t = series.t_s[i];
    while (ai < r.alarms.size() && r.alarms[ai].index == i) {
      if (!series.laser_on[i] && series.t_s[i] - last_on_t > settle_s) ++r.false_alarms;
      ++ai;
    }
  }
  const double hours = series.size() / std::max(series.cadence_hz(), 1e-300) / 3600.0;
  r.false_alarms_per_hour = series.size() > 1 ? r.false_alarms / hours : 0.0;
  return r;
}

inline DetectionReport cusum_detect(const SensorSeries& series, DetectorConfig cfg) {
  cfg.algorithm = DetectorAlgorithm::cusum;
  return detect(series, cfg);
}

/// Threshold h giving an in-control average run length of `target_arl`
/// samples for N(0, sigma^2) readings, found by bisection on a Monte Carlo
/// estimate with common random numbers across candidate thresholds.
inline double calibrate_cusum_threshold(double k, double sigma, double target_arl, SeedTree seed, int runs = 200) {
  if (!(target_arl > 1) || !(sigma > 0) || runs < 1) throw ConfigError("calibration needs arl > 1, sigma > 0, runs >= 1");
  const auto cap = static_cast<std::size_t>(20 * target_arl);
  auto arl = [&](double h) {
    double total = 0.0;
    for (int r = 0; r < runs; ++r) {
      Rng rng = seed.child(static_cast<std::uint64_t>(r)).rng();
      std::normal_distribution<double> g(0.0, sigma);
      double hi = 0, lo = 0;
      std::size_t n = 0;
      while (n < cap) {
        const double d = g(rng);
        ++n;
        hi = std::max(0.0, hi + d - k);
        lo = std::max(0.0, lo - d - k);
        if (hi > h || lo > h) break;
      }
      total += static_cast<double>(n);
    }
    return total / runs;
  };
  double lo = 0.0, hi = sigma;
  while (arl(hi) < target_arl) {
    lo = hi;
    hi *= 2;
    if (hi > 1e3 * sigma) throw RangeError("calibration did not bracket the target run length");
  }
  for (int it = 0; it < 40 && hi - lo > 1e-4 * sigma; ++it) {
    const double mid = 0.5 * (lo + hi);
    (arl(mid) < target_arl ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

struct RocConfig {
  double k_ps = 0.2;
  double onset_s = 20.0;     // monitoring start; readings before it form the baseline
  double deadline_s = 60.0;  // alarms count only within [onset, onset + deadline)
};

/// Peak CUSUM statistic inside the monitoring window of one run.
inline double monitored_peak(const SensorSeries& s, const RocConfig& cfg) {
  std::size_t begin = 0;
  while (begin < s.size() && s.t_s[begin] < cfg.onset_s - 1e-9) ++begin;
  if (begin == 0) throw ConfigError("ROC run has no baseline samples before the onset");
  std::size_t end = begin;
  while (end < s.size() && s.t_s[end] < cfg.onset_s + cfg.deadline_s - 1e-9) ++end;
  const double base = stats::mean(std::span<const double>(s.readings.data(), begin));
  return cusum_peak(s.readings, base, cfg.k_ps, begin, end);
}

/// TPR over laser-on runs and FPR over laser-off runs for each threshold.
/// Both rates are non-increasing in the threshold by construction.
inline RocCurve roc_sweep(const std::vector<SensorSeries>& on_runs, const std::vector<SensorSeries>& off_runs,
                          const std::vector<double>& thresholds, const RocConfig& cfg = {}) {
  if (on_runs.empty() || off_runs.empty()) throw ConfigError("ROC sweep needs at least one run of each class");
  if (thresholds.empty()) throw ConfigError("ROC sweep needs thresholds");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw ConfigError("ROC thresholds must be strictly increasing");
  std::vector<double> on_peak, off_peak;
  for (const auto& s : on_runs) on_peak.push_back(monitored_peak(s, cfg));
  for (const auto& s : off_runs) off_peak.push_back(monitored_peak(s, cfg));
  RocCurve c;
  std::vector<std::pair<double, double>> pts;
  for (double h : thresholds) {
    auto rate = [h](const std::vector<double>& v) {
      return static_cast<double>(std::count_if(v.begin(), v.end(), [h](double p) { return p > h; })) / v.size();
    };
    c.points.push_back({h, rate(off_peak), rate(on_peak)});
    pts.emplace_back(c.points.back().fpr, c.points.back().tpr);
  }
  c.auc = stats::auc(std::move(pts));
  return c;
}

/// Thresholds spanning every distinct peak so the curve reaches both corners.
inline std::vector<double> threshold_grid(double max_h, int count) {
  if (count < 2 || !(max_h > 0)) throw ConfigError("threshold grid needs count >= 2 and max > 0");
  std::vector<double> v(count);
  for (int i = 0; i < count; ++i) v[i] = max_h * i / (count - 1);
  return v;
}

/// Monte Carlo ROC at one laser power using synthetic differential series.
inline RocCurve roc_at_power(double power_pct, int runs_per_class, double sigma_ps, const std::vector<double>& thresholds,
                             SeedTree seed, const RocConfig& cfg = {}, double cadence_hz = 10.0) {
  std::vector<SensorSeries> on, off;
  const double duration = cfg.onset_s + cfg.deadline_s;
  const auto on_sched = LaserSchedule::step(cfg.onset_s, power_pct);
  const LaserSchedule off_sched;
  for (int r = 0; r < runs_per_class; ++r) {
    Rng a = seed.child("on").child(static_cast<std::uint64_t>(r)).rng();
    Rng b = seed.child("off").child(static_cast<std::uint64_t>(r)).rng();
    on.push_back(synthesize_differential(on_sched, duration, cadence_hz, sigma_ps, a));
    off.push_back(synthesize_differential(off_sched, duration, cadence_hz, sigma_ps, b));
  }
  return roc_sweep(on, off, thresholds, cfg);
}

}  // namespace chiplab
