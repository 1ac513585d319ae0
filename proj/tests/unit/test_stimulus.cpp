#include <catch_amalgamated.hpp>

#include <chiplab/stimulus.hpp>

#include "oracles.hpp"

using namespace chiplab;

namespace {

std::shared_ptr<const FloorPlan> vu9p() {
  static const auto plan = std::make_shared<const FloorPlan>(build_floorplan(FloorPlanConfig::vu9p()));
  return plan;
}

}  // namespace

TEST_CASE("100 MHz toggle sampled at 10 GHz repeats every 10 ns") {
  StimulusProgram prog(vu9p());
  const NodeId n = vu9p()->sll_id(0, 360, 0, 0);
  prog.assign(n, Toggle{100e6});
  const auto w = node_waveform(prog, n, 0.0, 20e-9, 10e9);
  REQUIRE(w.samples.size() == 200);
  for (std::size_t k = 0; k < 100; ++k) CHECK(w.samples[k] == w.samples[k + 100]);
  for (std::size_t k = 0; k < 50; ++k) {
    CHECK(w.samples[k] == 0);
    CHECK(w.samples[k + 50] == 1);
  }
  CHECK(activity_period(Toggle{100e6}) == Catch::Approx(10e-9));
}

TEST_CASE("unassigned node is all zeros") {
  StimulusProgram prog(vu9p());
  const auto w = node_waveform(prog, vu9p()->fabric_id(1, 10, 10), 0.0, 1e-6, 1e9);
  CHECK(std::all_of(w.samples.begin(), w.samples.end(), [](auto b) { return b == 0; }));
}

TEST_CASE("masked stream with an all-zero pad equals its data") {
  const Bits data{1, 0, 1, 1, 0, 0, 1, 0};
  const MaskedStream m{data, "l", 100e6};
  const Bits zero(64, 0);
  for (long long k = 0; k < 64; ++k) CHECK(activity_level(m, 0.0, k, 100e6, &zero, 0) == data[k % 8]);
}

TEST_CASE("masked waveform XOR pad recovers the data at every index") {
  StimulusProgram prog(vu9p());
  prog.add_link("l", PadSource(PadPolicy::seeded, 99));
  Bits data(256);
  std::mt19937_64 rng(3);
  for (auto& b : data) b = static_cast<std::uint8_t>(rng() & 1);
  const NodeId n = vu9p()->sll_id(0, 5, 1, 2);
  prog.assign(n, MaskedStream{data, "l", 100e6});
  const auto w = node_waveform(prog, n, 0.0, 256 / 100e6, 100e6);
  const Bits pad = prog.pad("l").bits_at(0, 256);
  REQUIRE(w.samples.size() == 256);
  for (std::size_t i = 0; i < 256; ++i) CHECK((w.samples[i] ^ pad[i]) == data[i]);
}

TEST_CASE("successive pad draws are disjoint stream segments") {
  PadSource p(PadPolicy::seeded, 7);
  const Bits a = p.advance(1000);
  const Bits b = p.advance(1000);
  CHECK(a != b);
  CHECK(a == p.bits_at(0, 1000));
  CHECK(b == p.bits_at(1000, 1000));
  CHECK(p.position() == 2000);
  // Random access across a keystream block boundary agrees with a long read.
  const Bits whole = p.bits_at(0, 2000);
  CHECK(Bits(whole.begin() + 500, whole.begin() + 1300) == p.bits_at(500, 800));
}

TEST_CASE("seeded pad is identical across runs and differs across seeds") {
  CHECK(PadSource(PadPolicy::seeded, 42).bits_at(0, 4096) == PadSource(PadPolicy::seeded, 42).bits_at(0, 4096));
  CHECK(PadSource(PadPolicy::seeded, 42).bits_at(0, 4096) != PadSource(PadPolicy::seeded, 43).bits_at(0, 4096));
  CHECK(PadSource(PadPolicy::fresh, 0).bits_at(0, 256) != PadSource(PadPolicy::fresh, 0).bits_at(0, 256));
}

TEST_CASE("pad bits are balanced") {
  PadSource p(PadPolicy::fresh, 0);
  const Bits b = p.advance(1000000);
  double ones = 0;
  for (auto x : b) ones += x;
  CHECK(std::abs(ones / 1e6 - 0.5) <= 0.002);
}

TEST_CASE("replayed policy restarts the pad on every replay") {
  PadSource p(PadPolicy::replayed, 5);
  const Bits a = p.advance(128);
  p.begin_replay();
  CHECK(p.advance(128) == a);
  PadSource q(PadPolicy::seeded, 5);
  const Bits c = q.advance(128);
  q.begin_replay();
  CHECK(q.advance(128) != c);
}

TEST_CASE("two replays of masked data agree on about half the bits") {
  StimulusProgram prog(vu9p());
  prog.add_link("l", PadSource(PadPolicy::seeded, 11));
  const std::size_t n = 20000;
  Bits data(n, 1);
  const NodeId lane = vu9p()->sll_id(1, 3, 0, 0);
  prog.assign(lane, MaskedStream{data, "l", 100e6});
  const Bits p1 = advance_pad(prog, lane, n), p2 = advance_pad(prog, lane, n);
  double agree = 0;
  for (std::size_t i = 0; i < n; ++i) agree += ((data[i] ^ p1[i]) == (data[i] ^ p2[i]));
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(agree / n - 0.5) <= 5 * sigma);
}

TEST_CASE("waveforms are deterministic") {
  StimulusProgram prog(vu9p());
  prog.add_link("l", PadSource(PadPolicy::seeded, 1));
  const NodeId a = vu9p()->sll_id(0, 0, 0, 0), b = vu9p()->sll_id(0, 0, 0, 1);
  prog.assign(a, Pattern{{1, 1, 0, 1, 0}, 100e6});
  prog.assign(b, MaskedStream{{1, 0, 0, 1}, "l", 100e6});
  for (NodeId n : {a, b}) CHECK(node_waveform(prog, n, 3e-9, 400e-9, 1e9).samples == node_waveform(prog, n, 3e-9, 400e-9, 1e9).samples);
}

TEST_CASE("sampling below twice the node frequency is rejected") {
  StimulusProgram prog(vu9p());
  const NodeId n = vu9p()->sll_id(0, 0, 0, 0);
  prog.assign(n, Toggle{100e6});
  CHECK_THROWS_AS(node_waveform(prog, n, 0.0, 1e-6, 150e6), AliasingError);
  CHECK_NOTHROW(node_waveform(prog, n, 0.0, 1e-6, 200e6));
}

TEST_CASE("invalid assignments are rejected") {
  StimulusProgram prog(vu9p());
  const NodeId n = vu9p()->sll_id(0, 0, 0, 0);
  CHECK_THROWS_AS(prog.assign(n, MaskedStream{{1}, "nope", 100e6}), LookupError);
  CHECK_THROWS_AS(prog.assign(n, Toggle{0.0}), ConfigError);
  CHECK_THROWS_AS(prog.assign(n, Pattern{{}, 100e6}), ConfigError);
  CHECK_THROWS_AS(prog.assign(n, Pattern{{2}, 100e6}), ConfigError);
  CHECK_THROWS_AS(prog.assign(NodeId{12345678901234ULL}, Toggle{1e6}), LookupError);
  CHECK_THROWS_AS(advance_pad(prog, n, 8), TypeError);
  CHECK_THROWS_AS(prog.set_ro_block(99, true), LookupError);
}

TEST_CASE("enabled oscillator blocks switch every oscillator at the block frequency") {
  StimulusProgram prog(vu9p(), 250e6);
  CHECK(prog.active_nodes().empty());
  set_ro_block(prog, 3, true);
  const auto active = prog.active_nodes();
  CHECK(active.size() == 256);
  for (const auto& a : active) CHECK(std::get<Toggle>(a.activity).frequency_hz == 250e6);
  set_ro_block(prog, 3, false);
  CHECK(prog.active_nodes().empty());
}

TEST_CASE("pattern activity cycles through its bits") {
  const Pattern p{{1, 0, 0}, 100e6};
  CHECK(highest_frequency(p) == Catch::Approx(50e6));
  CHECK(activity_period(p) == Catch::Approx(30e-9));
  for (long long k = 0; k < 12; ++k) CHECK(activity_level(p, 0.0, k, 100e6) == p.bits[k % 3]);
}
