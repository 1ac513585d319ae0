#include <catch_amalgamated.hpp>

#include <chiplab/optics.hpp>

#include "oracles.hpp"

using namespace chiplab;
using Catch::Approx;

namespace {

std::shared_ptr<const FloorPlan> vu9p() {
  static const auto plan = std::make_shared<const FloorPlan>(build_floorplan(FloorPlanConfig::vu9p()));
  return plan;
}

Rect around(Point c, double half) { return {c.x - half, c.y - half, c.x + half, c.y + half}; }

std::vector<double> residuals(const EopTrace& t) {
  std::vector<double> r(t.samples.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = t.samples[i] - t.expected[i];
  return r;
}

}  // namespace

TEST_CASE("spot radius of the 71x lens at 1.3 um") {
  CHECK(spot_radius_um(Lens::x71, 1.3) == Approx(0.9221).margin(5e-5));
  CHECK(spot_radius_um(Lens::x5, 1.3) == Approx(0.61 * 1.3 / 0.14));
  CHECK_THROWS_AS(lens_from_string("10x"), ConfigError);
}

TEST_CASE("dark counts of an idle region have the configured mean") {
  StimulusProgram prog(vu9p());
  EmissionRequest req{around({3000, 3000}, 200), 10.0, Lens::x5, 0.0};
  const auto m = emission_capture(*vu9p(), prog, req, SeedTree(1));
  REQUIRE(m.values.size() == 100u * 100u);
  const auto [mu, sd] = oracle::mean_sd(m.values);
  const double expect = OpticsParams{}.dark_rate_per_s * 10.0;
  CHECK(std::abs(mu - expect) < 4 * std::sqrt(expect / m.values.size()));
  CHECK(sd == Approx(std::sqrt(expect)).epsilon(0.05));
}

TEST_CASE("doubling exposure doubles the mean and shrinks relative spread by sqrt 2") {
  StimulusProgram prog(vu9p());
  const Rect r = around({3000, 3000}, 200);
  const auto a = emission_capture(*vu9p(), prog, {r, 10.0, Lens::x5, 0.0}, SeedTree(2));
  const auto b = emission_capture(*vu9p(), prog, {r, 20.0, Lens::x5, 0.0}, SeedTree(3));
  const auto [ma, sa] = oracle::mean_sd(a.values);
  const auto [mb, sb] = oracle::mean_sd(b.values);
  CHECK(mb / ma == Approx(2.0).epsilon(0.03));
  CHECK((sb / mb) / (sa / ma) == Approx(1 / std::sqrt(2.0)).epsilon(0.05));
}

TEST_CASE("expected emission of one node matches a pixel-integrated Gaussian") {
  StimulusProgram prog(vu9p());
  const NodeId id = vu9p()->fabric_id(0, 1500, 1500);
  prog.assign(id, Toggle{100e6});
  const auto node = vu9p()->resolve(id);
  OpticsParams op;
  op.dark_rate_per_s = 0.0;
  const EmissionRequest req{around(node.center, 20), 5.0, Lens::x20, 1.0};
  const auto m = emission_expected(*vu9p(), prog, req, op);
  const double counts = op.emission_rate * 100e6 * oracle::kPi * node.radius_um * node.radius_um * 5.0;
  const double sigma = 0.21 * op.emission_wavelength_um / 0.40;
  double total = 0;
  for (int j = 0; j < m.rows; ++j)
    for (int i = 0; i < m.cols; ++i) {
      total += m.at(i, j);
      const Point c = m.pixel_center(i, j);
      const double f = oracle::gaussian_box(sigma, c.x - 0.5 - node.center.x, c.x + 0.5 - node.center.x,
                                            c.y - 0.5 - node.center.y, c.y + 0.5 - node.center.y);
      CHECK(m.at(i, j) == Approx(counts * f).margin(1e-9 * counts));
    }
  CHECK(total == Approx(counts).epsilon(1e-6));
}

TEST_CASE("differencing block captures isolates the enabled block") {
  StimulusProgram prog(vu9p());
  const auto& blk = vu9p()->ro_blocks().at(12);
  const EmissionRequest req{around(blk.center, 120), 10.0, Lens::x5, 0.0};
  const auto off = emission_capture(*vu9p(), prog, req, SeedTree(10));
  prog.set_ro_block(blk.id, true);
  const auto on = emission_capture(*vu9p(), prog, req, SeedTree(11));
  double sx = 0, sy = 0, w = 0;
  for (int j = 0; j < on.rows; ++j)
    for (int i = 0; i < on.cols; ++i) {
      const double d = on.at(i, j) - off.at(i, j);
      if (d <= 0) continue;
      const Point c = on.pixel_center(i, j);
      sx += d * c.x;
      sy += d * c.y;
      w += d;
    }
  REQUIRE(w > 0);
  CHECK(distance({sx / w, sy / w}, blk.center) <= spot_radius_um(Lens::x5));
}

TEST_CASE("dwell leakage follows the sinc of detuning times dwell") {
  CHECK(dwell_leakage(50e3, 10e-6) == Approx(2 / oracle::kPi).epsilon(1e-12));
  CHECK(dwell_leakage(0.0, 10e-6) == 1.0);
  CHECK(dwell_leakage(100e3, 10e-6) == Approx(0.0).margin(1e-12));
}

TEST_CASE("EOFM response away from the target frequency is sinc-weighted") {
  const double dwell = 10e-6;
  const double on = spectral_response(Toggle{100e6}, 100e6, dwell);
  CHECK(on == Approx(1.0).epsilon(1e-9));
  for (double df : {10e3, 25e3, 50e3, 75e3}) {
    const double off = spectral_response(Toggle{100e6 + df}, 100e6, dwell);
    CHECK(off == Approx(on * std::abs(std::sin(oracle::kPi * df * dwell) / (oracle::kPi * df * dwell))).margin(1e-3));
  }
  CHECK(spectral_response(Off{}, 100e6, dwell) == 0.0);
}

TEST_CASE("integrated EOFM intensity scales with node footprint") {
  StimulusProgram prog(vu9p());
  const NodeId drv = vu9p()->sll_id(0, 200, 1, 2);
  const NodeId fab = vu9p()->fabric_id(0, 2000, 3000);
  prog.assign(drv, Toggle{100e6});
  prog.assign(fab, Toggle{100e6});
  OpticsParams op;
  op.eofm_noise_sigma = 1e-12;
  auto integrate = [&](NodeId id) {
    const Point c = vu9p()->resolve(id).center;
    EofmRequest req;
    req.region = around(c, 4.0);
    req.pitch_um = 0.05;
    const auto m = eofm_scan(*vu9p(), prog, req, SeedTree(1), op);
    return integrated_intensity(m, req.region, 0.0);
  };
  const double i_drv = integrate(drv), i_fab = integrate(fab);
  CHECK(i_drv / i_fab == Approx(4.0).epsilon(0.02));
  // Spot-weighted overlap integrates to footprint area times spot area.
  const double rs = spot_radius_um(Lens::x20), rf = vu9p()->config().fabric_radius_um;
  CHECK(i_fab == Approx(op.eofm_amplitude_per_um2 * oracle::kPi * rf * rf * oracle::kPi * rs * rs).epsilon(0.02));
}

TEST_CASE("EOFM over an idle band stays at the noise floor") {
  StimulusProgram prog(vu9p());
  EofmRequest req;
  req.region = {3000, 3000, 3020, 3005};
  const auto m = eofm_scan(*vu9p(), prog, req, SeedTree(4));
  const OpticsParams op;
  const double floor_mean = op.eofm_noise_sigma * std::sqrt(oracle::kPi / 2);
  const double floor_sd = op.eofm_noise_sigma * std::sqrt((4 - oracle::kPi) / 2);
  const auto [mu, sd] = oracle::mean_sd(m.values);
  CHECK(mu <= floor_mean + 3 * floor_sd / std::sqrt(static_cast<double>(m.values.size())));
  CHECK(sd == Approx(floor_sd).epsilon(0.1));
  CHECK(eofm_noise_mean(op) == Approx(floor_mean));
}

TEST_CASE("EOFM scan is independent of evaluation order") {
  StimulusProgram prog(vu9p());
  prog.set_ro_block(0, true);
  EofmRequest req;
  req.region = around(vu9p()->ro_blocks().at(0).center, 6);
  req.pitch_um = 0.5;
  const auto serial = eofm_scan(*vu9p(), prog, req, SeedTree(5), {}, {}, 1);
  const auto parallel = eofm_scan(*vu9p(), prog, req, SeedTree(5), {}, {}, 4);
  CHECK(serial.values == parallel.values);
}

TEST_CASE("EOP trace of a driver tracks its waveform at 100 integrations") {
  StimulusProgram prog(vu9p());
  const NodeId drv = vu9p()->sll_id(0, 360, 0, 0);
  prog.assign(drv, Toggle{100e6});
  LaserState laser;
  laser.position = vu9p()->resolve(drv).center;
  laser.on = true;
  Rng rng(9);
  const auto t = eop_acquire(*vu9p(), prog, laser, {100, 40e-9, 10e9}, rng);
  REQUIRE(t.samples.size() == 400);
  std::vector<double> wave(400);
  for (std::size_t k = 0; k < 400; ++k) wave[k] = activity_level(Toggle{100e6}, 0.0, static_cast<long long>(k), 10e9);
  CHECK(oracle::correlation(t.samples, wave) > 0.99);
}

TEST_CASE("EOP over an idle area is zero-mean noise about the baseline") {
  StimulusProgram prog(vu9p());
  LaserState laser;
  laser.position = vu9p()->resolve(vu9p()->fabric_id(0, 3000, 3000)).center;
  laser.on = true;
  REQUIRE(eop_contributors(*vu9p(), prog, laser).empty());
  Rng rng(10);
  const auto t = eop_acquire(*vu9p(), prog, laser, {4, 1e-6, 10e9}, rng);
  const OpticsParams op;
  std::vector<double> d(t.samples.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = t.samples[i] - op.eop_baseline;
  const auto [mu, sd] = oracle::mean_sd(d);
  CHECK(std::abs(mu) < 4 * sd / std::sqrt(static_cast<double>(d.size())));
  CHECK(sd == Approx(op.eop_noise_sigma / 2).epsilon(0.05));
}

TEST_CASE("EOP noise after N integrations is the single-shot sigma over sqrt N") {
  StimulusProgram prog(vu9p());
  const NodeId drv = vu9p()->sll_id(0, 10, 0, 0);
  prog.assign(drv, Toggle{100e6});
  LaserState laser;
  laser.position = vu9p()->resolve(drv).center;
  laser.on = true;
  const OpticsParams op;
  for (int n : {5, 25, 100}) {
    std::vector<double> all;
    for (int r = 0; r < 50; ++r) {
      Rng rng(1000 * n + r);
      const auto res = residuals(eop_acquire(*vu9p(), prog, laser, {n, 40e-9, 10e9}, rng));
      all.insert(all.end(), res.begin(), res.end());
    }
    CHECK(oracle::mean_sd(all).second == Approx(op.eop_noise_sigma / std::sqrt(double(n))).epsilon(0.10));
  }
}

TEST_CASE("Laguna driver SNR is four times a fabric register's") {
  StimulusProgram prog(vu9p());
  const NodeId drv = vu9p()->sll_id(0, 360, 0, 0);
  const NodeId fab = vu9p()->fabric_id(0, 5780, 6503);
  prog.assign(drv, Toggle{100e6});
  prog.assign(fab, Toggle{100e6});
  LaserState a, b;
  a.position = vu9p()->resolve(drv).center;
  b.position = vu9p()->resolve(fab).center;
  a.on = b.on = true;
  CHECK(eop_expected_snr(*vu9p(), prog, a, 25) / eop_expected_snr(*vu9p(), prog, b, 25) == Approx(4.0).epsilon(1e-9));
  double sa = 0, sb = 0;
  for (int r = 0; r < 100; ++r) {
    Rng ra(r), rb(r + 5000);
    sa += trace_snr(eop_acquire(*vu9p(), prog, a, {25, 40e-9, 10e9}, ra));
    sb += trace_snr(eop_acquire(*vu9p(), prog, b, {25, 40e-9, 10e9}, rb));
  }
  CHECK(sa / sb == Approx(4.0).epsilon(0.15));
}

TEST_CASE("EOP preconditions") {
  StimulusProgram prog(vu9p());
  const NodeId drv = vu9p()->sll_id(0, 360, 0, 0);
  prog.assign(drv, Toggle{100e6});
  LaserState laser;
  laser.position = vu9p()->resolve(drv).center;
  Rng rng(1);
  CHECK_THROWS_AS(eop_acquire(*vu9p(), prog, laser, {}, rng), AcquisitionError);
  laser.on = true;
  CHECK_THROWS_AS(eop_acquire(*vu9p(), prog, laser, {10, 35e-9, 10e9}, rng), PreconditionError);
  CHECK_THROWS_AS(eop_acquire(*vu9p(), prog, laser, {10, 40e-9, 150e6}, rng), AliasingError);
  laser.wavelength_um = 1.064;
  CHECK_THROWS_AS(eop_acquire(*vu9p(), prog, laser, {}, rng), ConfigError);
}

TEST_CASE("thermal delay model closed form") {
  CHECK(thermal_delay_delta(0, 10) == 0.0);
  CHECK(thermal_delay_delta(100, 1e9) == Approx(0.792));
  CHECK(thermal_delay_delta(100, 0.25) == Approx(oracle::thermal(100, 0.25)).epsilon(1e-12));
  CHECK(thermal_delay_delta(100, 0.25) == Approx(0.5007).margin(1e-4));
  CHECK(thermal_delay_delta(50, 1e9) == Approx(0.396));
  for (double p : {1.0, 25.0, 50.0, 75.0, 100.0}) {
    CHECK(thermal_delay_delta(p, 2.0) >= 0.98 * thermal_delay_delta(p, 1e9));
    for (double t : {0.1, 0.5, 1.0, 3.0}) CHECK(thermal_delay_delta(p, t) == Approx(oracle::thermal(p, t)).epsilon(1e-12));
  }
}

TEST_CASE("thermal coupling is the covered fraction of the driver") {
  LaserState l;
  l.position = {0, 0};
  const double rd = 0.7, rs = l.spot_radius_um();
  CHECK(thermal_coupling(l, {0, 0}, rd) == Approx(1.0));
  CHECK(thermal_coupling(l, {5, 0}, rd) == 0.0);
  const double d = 1.0;
  CHECK(thermal_coupling(l, {d, 0}, rd) == Approx(oracle::disc_overlap(d, rs, rd) / (oracle::kPi * rd * rd)).epsilon(2e-3));
}
