#pragma once

// Phenomenological optical engine: photon-emission capture, EOFM scans, EOP
// trace acquisition and the thermal delay side effect of a parked laser.
// All optical quantities are in arbitrary calibrated units; only ratios and
// signal-to-noise figures are meaningful.

#include <chiplab/errors.hpp>
#include <chiplab/floorplan.hpp>
#include <chiplab/rng.hpp>
#include <chiplab/stats.hpp>
#include <chiplab/stimulus.hpp>

#include <atomic>
#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace chiplab {

enum class Lens { x5, x20, x50, x71 };

struct LensSpec {
  std::string_view name;
  double magnification;
  double numerical_aperture;
};

inline constexpr LensSpec lens_spec(Lens l) noexcept {
  switch (l) {
    case Lens::x5: return {"5x", 5.0, 0.14};
    case Lens::x20: return {"20x", 20.0, 0.40};
    case Lens::x50: return {"50x", 50.0, 0.76};
    case Lens::x71: return {"71x", 71.0, 0.86};
  }
  return {"71x", 71.0, 0.86};
}

inline Lens lens_from_string(std::string_view s) {
  for (Lens l : {Lens::x5, Lens::x20, Lens::x50, Lens::x71})
    if (lens_spec(l).name == s) return l;
  throw ConfigError("unknown lens '" + std::string(s) + "' (expected 5x, 20x, 50x or 71x)");
}

inline constexpr double kProbeWavelengthUm = 1.3;
inline constexpr double kPhotoelectricThresholdUm = 1.1;

/// Rayleigh radius of the focused spot, 0.61 lambda / NA.
inline double spot_radius_um(Lens lens, double wavelength_um = kProbeWavelengthUm) noexcept {
  return 0.61 * wavelength_um / lens_spec(lens).numerical_aperture;
}

struct LaserState {
  Point position;
  double power_pct = 100.0;
  double wavelength_um = kProbeWavelengthUm;
  Lens lens = Lens::x71;
  bool on = false;
  double on_since_s = 0.0;

  void validate() const {
    if (!(power_pct >= 0.0 && power_pct <= 100.0)) throw ConfigError("laser power must be within [0, 100] %");
    if (!(wavelength_um >= kPhotoelectricThresholdUm))
      throw ConfigError("fault injection not modeled: wavelength below the 1.1 um photoelectric threshold");
  }
  double spot_radius_um() const noexcept { return chiplab::spot_radius_um(lens, wavelength_um); }
};

struct OpticsParams {
  double emission_rate = 1e-7;          // counts per (Hz * um^2 * s)
  double dark_rate_per_s = 0.5;         // per pixel
  double emission_wavelength_um = 1.3;
  double camera_pixel_um = 20.0;        // default emission pitch is this over magnification
  double eofm_amplitude_per_um2 = 0.65;
  double eofm_noise_sigma = 0.02;       // Rayleigh scale of the EOFM noise floor
  double eop_depth_per_um2 = 0.65;
  double eop_noise_sigma = 0.5;         // single-shot white noise
  double eop_baseline = 10.0;           // reflected intensity at 100 % power
};

enum class MapKind { emission, eofm };

inline std::string_view to_string(MapKind k) noexcept { return k == MapKind::emission ? "emission" : "eofm"; }

struct OpticalMap {
  MapKind kind = MapKind::emission;
  Rect region;
  double pitch_um = 1.0;
  int cols = 0;
  int rows = 0;
  std::vector<double> values;  // row-major, row 0 at region.y0
  Lens lens = Lens::x5;
  double exposure_s = 0.0;     // emission
  double dwell_s = 0.0;        // eofm
  double target_hz = 0.0;      // eofm
  double power_pct = 0.0;      // eofm

  double& at(int col, int row) { return values[static_cast<std::size_t>(row) * cols + col]; }
  double at(int col, int row) const { return values[static_cast<std::size_t>(row) * cols + col]; }
  Point pixel_center(int col, int row) const noexcept {
    return {region.x0 + (col + 0.5) * pitch_um, region.y0 + (row + 0.5) * pitch_um};
  }
  double pixel_area() const noexcept { return pitch_um * pitch_um; }
};

struct EopTrace {
  std::vector<double> samples;
  std::vector<double> expected;  // noise-free averaged signal
  int integrations = 1;
  Point probe;
  double sample_rate_hz = 0.0;
  double trigger_period_s = 0.0;
  double power_pct = 0.0;

  double time_at(std::size_t k) const noexcept { return static_cast<double>(k) / sample_rate_hz; }
};

namespace detail {

inline OpticalMap make_grid(MapKind kind, const Rect& region, double pitch, const FloorPlan& plan) {
  if (!(pitch > 0)) throw ConfigError("pixel pitch must be > 0");
  if (!(region.x1 > region.x0 && region.y1 > region.y0)) throw ConfigError("region must have positive extent");
  if (!plan.package_bounds().expanded(1e-6).contains(region)) throw RangeError("region outside package bounds");
  OpticalMap m;
  m.kind = kind;
  m.region = region;
  m.pitch_um = pitch;
  m.cols = static_cast<int>(std::floor(region.width() / pitch + 1e-9));
  m.rows = static_cast<int>(std::floor(region.height() / pitch + 1e-9));
  if (m.cols < 1 || m.rows < 1) throw ConfigError("region smaller than one pixel");
  m.values.assign(static_cast<std::size_t>(m.cols) * m.rows, 0.0);
  return m;
}

/// Cycle-equivalent switching frequency used by the emission model: a
/// toggle at f makes 2f transitions per second.
inline double switching_frequency(const Activity& a) {
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Off>) return 0.0;
        else if constexpr (std::is_same_v<T, Toggle>) return v.frequency_hz;
        else if constexpr (std::is_same_v<T, Pattern>) {
          std::size_t t = 0;
          for (std::size_t i = 0; i < v.bits.size(); ++i) t += v.bits[i] != v.bits[(i + 1) % v.bits.size()];
          return t * v.bit_rate_hz / (2.0 * v.bits.size());
        } else {
          return v.bit_rate_hz / 4.0;
        }
      },
      a);
}

}  // namespace detail

/// |sin(pi x) / (pi x)| with x = frequency offset * dwell: response of a
/// rectangular dwell window to a tone detuned by `df_hz`.
inline double dwell_leakage(double df_hz, double dwell_s) noexcept {
  const double x = std::numbers::pi * df_hz * dwell_s;
  if (std::abs(x) < 1e-12) return 1.0;
  return std::abs(std::sin(x) / x);
}

/// Relative EOFM amplitude of a node's activity at `f_target`, normalised so
/// that a square wave exactly at the target frequency responds with 1.
/// Harmonics of the activity's repetition frequency are weighted by their
/// Fourier magnitude; those more than 64 dwell bins away are ignored.
inline double spectral_response(const Activity& a, double f_target, double dwell_s, const Bits* masked_bits = nullptr) {
  Bits bits;
  double bit_rate = 0.0;
  if (std::holds_alternative<Off>(a)) return 0.0;
  if (const auto* t = std::get_if<Toggle>(&a)) {
    bits = {0, 1};
    bit_rate = 2 * t->frequency_hz;
  } else if (const auto* p = std::get_if<Pattern>(&a)) {
    bits = p->bits;
    bit_rate = p->bit_rate_hz;
  } else {
    const auto& m = std::get<MaskedStream>(a);
    bits = masked_bits ? *masked_bits : m.data;
    bit_rate = m.bit_rate_hz;
  }
  const double len = static_cast<double>(bits.size());
  const double f0 = bit_rate / len;
  const double window = 64.0 / dwell_s;
  const long long m_lo = std::max(1LL, static_cast<long long>(std::ceil((f_target - window) / f0)));
  const long long m_hi = static_cast<long long>(std::floor((f_target + window) / f0));
  double response = 0.0;
  for (long long m = m_lo; m <= m_hi; ++m) {
    std::complex<double> c{0.0, 0.0};
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) c += std::polar(1.0, -2 * std::numbers::pi * double(m) * double(i) / len);
    const double x = std::numbers::pi * double(m) / len;
    const double nrz = std::abs(std::sin(x) / x);
    const double line = std::abs(c) / len * nrz * std::numbers::pi;
    response += line * dwell_leakage(double(m) * f0 - f_target, dwell_s);
  }
  return response;
}

// ---------------------------------------------------------------------------
// Photon emission

struct EmissionRequest {
  Rect region;
  double exposure_s = 10.0;
  Lens lens = Lens::x5;
  double pitch_um = 0.0;  // 0 selects camera_pixel_um / magnification
};

/// Expected counts per pixel (dark counts plus blurred emission).
inline OpticalMap emission_expected(const FloorPlan& plan, const StimulusProgram& program, const EmissionRequest& req,
                                    const OpticsParams& op = {}) {
  if (!(req.exposure_s > 0)) throw ConfigError("exposure must be > 0");
  const double pitch = req.pitch_um > 0 ? req.pitch_um : op.camera_pixel_um / lens_spec(req.lens).magnification;
  OpticalMap m = detail::make_grid(MapKind::emission, req.region, pitch, plan);
  m.lens = req.lens;
  m.exposure_s = req.exposure_s;
  std::fill(m.values.begin(), m.values.end(), op.dark_rate_per_s * req.exposure_s);

  // Gaussian approximation of the Airy core.
  const double sigma = 0.21 * op.emission_wavelength_um / lens_spec(req.lens).numerical_aperture;
  const double reach = 5 * sigma;
  std::vector<double> fx, fy;
  for (const auto& an : program.active_nodes()) {
    const double counts = op.emission_rate * detail::switching_frequency(an.activity) * disc_area(an.node.radius_um) *
                          req.exposure_s;
    if (counts <= 0) continue;
    const Point c = an.node.center;
    const int i0 = std::max(0, static_cast<int>(std::floor((c.x - reach - m.region.x0) / pitch)));
    const int i1 = std::min(m.cols - 1, static_cast<int>(std::floor((c.x + reach - m.region.x0) / pitch)));
    const int j0 = std::max(0, static_cast<int>(std::floor((c.y - reach - m.region.y0) / pitch)));
    const int j1 = std::min(m.rows - 1, static_cast<int>(std::floor((c.y + reach - m.region.y0) / pitch)));
    if (i0 > i1 || j0 > j1) continue;
    auto frac = [&](double lo, double hi, double mu) {
      return stats::normal_cdf((hi - mu) / sigma) - stats::normal_cdf((lo - mu) / sigma);
    };
    fx.resize(i1 - i0 + 1);
    fy.resize(j1 - j0 + 1);
    for (int i = i0; i <= i1; ++i) fx[i - i0] = frac(m.region.x0 + i * pitch, m.region.x0 + (i + 1) * pitch, c.x);
    for (int j = j0; j <= j1; ++j) fy[j - j0] = frac(m.region.y0 + j * pitch, m.region.y0 + (j + 1) * pitch, c.y);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) m.at(i, j) += counts * fx[i - i0] * fy[j - j0];
  }
  return m;
}

/// Poisson realisation of `emission_expected`; pixel p draws from substream
/// `noise.child(p)`.
inline OpticalMap emission_capture(const FloorPlan& plan, const StimulusProgram& program, const EmissionRequest& req,
                                   SeedTree noise, const OpticsParams& op = {}) {
  OpticalMap m = emission_expected(plan, program, req, op);
  for (std::size_t p = 0; p < m.values.size(); ++p) {
    const double mu = m.values[p];
    if (mu <= 0) {
      m.values[p] = 0;
      continue;
    }
    Rng rng = noise.child(p).rng();
    m.values[p] = static_cast<double>(std::poisson_distribution<long long>(mu)(rng));
  }
  return m;
}

// ---------------------------------------------------------------------------
// EOFM

struct EofmRequest {
  Rect region;
  double f_target_hz = 100e6;
  double dwell_s = 10e-6;
  double pitch_um = 0.25;
  Lens lens = Lens::x20;
  double power_pct = 100.0;
  double wavelength_um = kProbeWavelengthUm;
};

/// Noise-free EOFM magnitude at one laser position.
inline double eofm_signal_at(const FloorPlan& plan, Point spot, double spot_radius,
                             const std::map<NodeId, double>& node_response, const EofmRequest& req,
                             const OpticsParams& op) {
  double s = 0.0;
  for (const auto& hit : plan.nodes_in_spot(spot, spot_radius)) {
    auto it = node_response.find(hit.node.id);
    if (it == node_response.end()) continue;
    s += op.eofm_amplitude_per_um2 * disc_area(hit.node.radius_um) * (req.power_pct / 100.0) * hit.weight * it->second;
  }
  return std::abs(s);
}

/// Per-node spectral response at the request's target frequency.
inline std::map<NodeId, double> eofm_node_responses(const StimulusProgram& program, const EofmRequest& req) {
  std::map<NodeId, double> resp;
  std::map<std::string, Bits> masked_cache;
  for (const auto& an : program.active_nodes()) {
    const Bits* bits = nullptr;
    Bits masked;
    if (const auto* m = std::get_if<MaskedStream>(&an.activity)) {
      masked = program.pad(m->link).bits_at(0, m->data.size());
      for (std::size_t i = 0; i < masked.size(); ++i) masked[i] ^= m->data[i];
      bits = &masked;
    }
    const double r = spectral_response(an.activity, req.f_target_hz, req.dwell_s, bits);
    if (r > 0) resp.emplace(an.node.id, r);
  }
  return resp;
}

/// Pixel values are independent given the program and the per-pixel noise
/// substream, so rows may be evaluated in any order or in parallel.
inline OpticalMap eofm_scan(const FloorPlan& plan, const StimulusProgram& program, const EofmRequest& req,
                            SeedTree noise, const OpticsParams& op = {},
                            const std::function<void(double)>& progress = {}, unsigned threads = 0) {
  if (!(req.dwell_s > 0)) throw ConfigError("dwell must be > 0");
  if (!(req.f_target_hz > 0)) throw ConfigError("target frequency must be > 0");
  LaserState probe{{}, req.power_pct, req.wavelength_um, req.lens, true, 0.0};
  probe.validate();
  OpticalMap m = detail::make_grid(MapKind::eofm, req.region, req.pitch_um, plan);
  m.lens = req.lens;
  m.dwell_s = req.dwell_s;
  m.target_hz = req.f_target_hz;
  m.power_pct = req.power_pct;

  const auto responses = eofm_node_responses(program, req);
  const double r_spot = probe.spot_radius_um();

  std::atomic<int> rows_done{0};
  auto do_rows = [&](int first, int stride) {
    for (int j = first; j < m.rows; j += stride) {
      for (int i = 0; i < m.cols; ++i) {
        const double s = eofm_signal_at(plan, m.pixel_center(i, j), r_spot, responses, req, op);
        Rng rng = noise.child(static_cast<std::uint64_t>(j) * m.cols + i).rng();
        std::normal_distribution<double> g(0.0, op.eofm_noise_sigma);
        const double a = g(rng), b = g(rng);
        m.at(i, j) = s + std::hypot(a, b);
      }
      const int done = ++rows_done;
      if (progress) progress(static_cast<double>(done) / m.rows);
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(m.rows));
  if (threads <= 1 || progress) {
    // Progress callbacks are not required to be thread-safe.
    do_rows(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(do_rows, static_cast<int>(t), static_cast<int>(threads));
  }
  return m;
}

/// Noise-free mean of the EOFM noise floor (Rayleigh mean).
inline double eofm_noise_mean(const OpticsParams& op = {}) {
  return op.eofm_noise_sigma * std::sqrt(std::numbers::pi / 2);
}

/// Noise-subtracted integrated intensity of the map over `area` (um^2 units).
inline double integrated_intensity(const OpticalMap& m, const Rect& area, double floor_level) {
  double sum = 0.0;
  for (int j = 0; j < m.rows; ++j)
    for (int i = 0; i < m.cols; ++i)
      if (area.contains(m.pixel_center(i, j))) sum += (m.at(i, j) - floor_level) * m.pixel_area();
  return sum;
}

// ---------------------------------------------------------------------------
// EOP

struct EopRequest {
  int integrations = 100;
  double trigger_period_s = 40e-9;
  double sample_rate_hz = 10e9;
};

struct EopContributor {
  NodeRef node;
  Activity activity;
  double depth = 0.0;
};

/// Nodes modulating the reflected beam at the laser position, with their
/// modulation depths.
inline std::vector<EopContributor> eop_contributors(const FloorPlan& plan, const StimulusProgram& program,
                                                    const LaserState& laser, const OpticsParams& op = {}) {
  std::vector<EopContributor> out;
  for (const auto& hit : plan.nodes_in_spot(laser.position, laser.spot_radius_um())) {
    Activity act = program.activity_of(hit.node.id);
    if (std::holds_alternative<Off>(act)) continue;
    const double depth = op.eop_depth_per_um2 * disc_area(hit.node.radius_um) * hit.weight * (laser.power_pct / 100.0);
    out.push_back({hit.node, std::move(act), depth});
  }
  return out;
}

/// Expected single-trace SNR, depth * sqrt(N) / sigma, of the strongest
/// contributor under the spot.
inline double eop_expected_snr(const FloorPlan& plan, const StimulusProgram& program, const LaserState& laser,
                               int integrations, const OpticsParams& op = {}) {
  double depth = 0.0;
  for (const auto& c : eop_contributors(plan, program, laser, op)) depth = std::max(depth, c.depth);
  return depth * std::sqrt(static_cast<double>(integrations)) / op.eop_noise_sigma;
}

/// Averages N triggered repetitions. Each repetition replays the stimulus;
/// masked links draw a fresh pad segment per repetition. The mean of N
/// independent N(0, s^2) noise records is drawn directly as N(0, s^2 / N).
inline EopTrace eop_acquire(const FloorPlan& plan, StimulusProgram& program, const LaserState& laser,
                            const EopRequest& req, Rng& rng, const OpticsParams& op = {}) {
  laser.validate();
  if (!laser.on) throw AcquisitionError("laser is off");
  if (req.integrations < 1) throw ConfigError("integrations must be >= 1");
  if (!(req.trigger_period_s > 0) || !(req.sample_rate_hz > 0))
    throw ConfigError("trigger period and sample rate must be > 0");

  const auto contributors = eop_contributors(plan, program, laser, op);
  for (const auto& c : contributors) {
    const double ratio = req.trigger_period_s / activity_period(c.activity);
    if (std::abs(ratio - std::round(ratio)) > 1e-6 * std::max(1.0, ratio) || std::round(ratio) < 1)
      throw PreconditionError("trigger period is not a multiple of the probed pattern period");
    if (req.sample_rate_hz < 2 * highest_frequency(c.activity) * (1 - 1e-12))
      throw AliasingError("sample rate below twice the probed node frequency");
  }

  const std::size_t len = sample_count(req.trigger_period_s, req.sample_rate_hz);
  std::vector<double> acc(len, 0.0);
  const double n = req.integrations;

  std::vector<const EopContributor*> masked;
  for (const auto& c : contributors) {
    if (std::holds_alternative<MaskedStream>(c.activity)) {
      masked.push_back(&c);
      continue;
    }
    for (std::size_t k = 0; k < len; ++k)
      acc[k] += c.depth * activity_level(c.activity, 0.0, static_cast<long long>(k), req.sample_rate_hz);
  }
  if (!masked.empty()) {
    const auto bits_per_shot = static_cast<std::size_t>(
        std::ceil(req.trigger_period_s * std::get<MaskedStream>(masked.front()->activity).bit_rate_hz - 1e-9));
    std::vector<double> shot_acc(len, 0.0);
    for (int shot = 0; shot < req.integrations; ++shot) {
      program.begin_replay();
      std::map<std::string, Bits> pads;
      for (const auto* c : masked) {
        const auto& ms = std::get<MaskedStream>(c->activity);
        auto it = pads.find(ms.link);
        if (it == pads.end()) {
          const std::size_t nb = static_cast<std::size_t>(std::ceil(req.trigger_period_s * ms.bit_rate_hz - 1e-9));
          it = pads.emplace(ms.link, program.pad(ms.link).advance(std::max(nb, bits_per_shot))).first;
        }
        for (std::size_t k = 0; k < len; ++k)
          shot_acc[k] += c->depth * activity_level(c->activity, 0.0, static_cast<long long>(k), req.sample_rate_hz,
                                                   &it->second, 0);
      }
    }
    for (std::size_t k = 0; k < len; ++k) acc[k] += shot_acc[k] / n;
  }

  EopTrace t;
  t.integrations = req.integrations;
  t.probe = laser.position;
  t.sample_rate_hz = req.sample_rate_hz;
  t.trigger_period_s = req.trigger_period_s;
  t.power_pct = laser.power_pct;
  t.samples.resize(len);
  t.expected.resize(len);
  std::normal_distribution<double> noise(0.0, op.eop_noise_sigma / std::sqrt(n));
  const double baseline = op.eop_baseline * laser.power_pct / 100.0;
  for (std::size_t k = 0; k < len; ++k) {
    t.expected[k] = baseline + acc[k];
    t.samples[k] = t.expected[k] + noise(rng);
  }
  return t;
}

/// SNR of a trace against a reference waveform: regress trace = a + b * ref
/// and divide |b| by the residual standard deviation.
inline double trace_snr(std::span<const double> trace, std::span<const double> reference) {
  const auto fit = stats::fit_line(reference, trace);
  std::vector<double> resid(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) resid[i] = trace[i] - fit.intercept - fit.slope * reference[i];
  const double sd = stats::stddev(resid);
  return sd > 0 ? std::abs(fit.slope) / sd : 0.0;
}

/// SNR of an acquired trace: the reference is its expected waveform scaled
/// to [0, 1], so the slope is the peak-to-peak modulation depth.
inline double trace_snr(const EopTrace& t) {
  const auto [lo, hi] = std::minmax_element(t.expected.begin(), t.expected.end());
  if (t.expected.empty() || !(*hi > *lo)) return 0.0;
  std::vector<double> ref(t.expected.size());
  for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = (t.expected[i] - *lo) / (*hi - *lo);
  return trace_snr(t.samples, ref);
}

// ---------------------------------------------------------------------------
// Thermal side effect

struct ThermalModel {
  double full_power_delta_ps = 0.792;
  double tau_s = 0.25;

  double asymptote(double power_pct) const noexcept { return full_power_delta_ps * power_pct / 100.0; }
};

/// Extra propagation delay of a wire whose driver sits under the spot, after
/// the laser has been on for `t_since_on_s` at `power_pct`.
inline double thermal_delay_delta(double power_pct, double t_since_on_s, const ThermalModel& model = {}) {
  const double p = std::clamp(power_pct, 0.0, 100.0);
  const double t = std::max(0.0, t_since_on_s);
  return model.asymptote(p) * (1.0 - std::exp(-t / model.tau_s));
}

/// Fraction of a driver footprint covered by the laser spot.
inline double thermal_coupling(const LaserState& laser, Point driver, double driver_radius_um) {
  const double d = distance(laser.position, driver);
  return disc_intersection_area(d, laser.spot_radius_um(), driver_radius_um) / disc_area(driver_radius_um);
}

}  // namespace chiplab
