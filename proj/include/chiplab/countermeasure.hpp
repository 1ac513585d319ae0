#pragma once

// One-time-pad masking of die-to-die links and the replay-averaging attack
// evaluator.

#include <chiplab/errors.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/stats.hpp>
#include <chiplab/stimulus.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace chiplab {

struct MaskedLinkConfig {
  std::string link = "link0";
  std::vector<NodeId> data_lanes;
  NodeId pad_lane;
  PadPolicy policy = PadPolicy::fresh;
  std::uint64_t debug_seed = 0;
  double bit_rate_hz = kDefaultBitRateHz;

  void validate(const FloorPlan* plan = nullptr) const {
    if (data_lanes.empty()) throw ConfigError("masked link needs at least one data lane");
    if (!(bit_rate_hz > 0)) throw ConfigError("masked link bit rate must be > 0");
    std::set<NodeId> seen;
    for (auto l : data_lanes)
      if (!seen.insert(l).second) throw ConfigError("lane collision: data lane listed twice");
    if (seen.count(pad_lane)) throw ConfigError("lane collision: pad lane is also a data lane");
    if (plan) {
      for (auto l : data_lanes)
        if (!plan->contains(l)) throw LookupError("data lane " + std::to_string(l.value) + " is not in the floorplan");
      if (!plan->contains(pad_lane)) throw LookupError("pad lane is not in the floorplan");
    }
  }
};

struct LinkTransmission {
  std::vector<Bits> data_lanes;  // data XOR pad
  Bits pad_lane;                 // the pad itself
};

inline Bits xor_bits(const Bits& a, const Bits& b) {
  if (a.size() != b.size()) throw ConfigError("xor: length mismatch");
  Bits out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ^ b[i];
  return out;
}

/// Masks one block of data per lane with a single pad shared by all lanes.
inline LinkTransmission mask_link(const MaskedLinkConfig& cfg, const std::vector<Bits>& data, const Bits& pad) {
  cfg.validate();
  if (data.size() != cfg.data_lanes.size()) throw ConfigError("one data stream per data lane is required");
  LinkTransmission t;
  for (const auto& d : data) t.data_lanes.push_back(xor_bits(d, pad));
  t.pad_lane = pad;
  return t;
}

/// Receiver side: XOR with the pad lane recovers every data lane.
inline std::vector<Bits> demask_link(const LinkTransmission& t) {
  std::vector<Bits> out;
  for (const auto& l : t.data_lanes) out.push_back(xor_bits(l, t.pad_lane));
  return out;
}

/// Installs the link in the program: each data lane carries data XOR pad and
/// the pad lane carries the pad (a masked stream of zeros).
inline void install_masked_link(StimulusProgram& program, const MaskedLinkConfig& cfg, const std::vector<Bits>& data) {
  cfg.validate(&program.plan());
  if (data.size() != cfg.data_lanes.size()) throw ConfigError("one data stream per data lane is required");
  for (const auto& d : data)
    if (d.size() != data.front().size()) throw ConfigError("all data lanes must carry equal-length blocks");
  program.add_link(cfg.link, PadSource(cfg.policy, cfg.debug_seed));
  for (std::size_t i = 0; i < data.size(); ++i)
    program.assign(cfg.data_lanes[i], MaskedStream{data[i], cfg.link, cfg.bit_rate_hz});
  program.assign(cfg.pad_lane, MaskedStream{Bits(data.front().size(), 0), cfg.link, cfg.bit_rate_hz});
}

/// Drives every lane with its plain data, i.e. the link without masking.
inline void install_plain_link(StimulusProgram& program, const MaskedLinkConfig& cfg, const std::vector<Bits>& data) {
  cfg.validate(&program.plan());
  for (std::size_t i = 0; i < data.size(); ++i)
    program.assign(cfg.data_lanes[i], Pattern{data[i], cfg.bit_rate_hz});
  program.assign(cfg.pad_lane, Off{});
}

struct ReplayAttackConfig {
  int repetitions = 100;  // R replayed acquisitions
  int integrations = 1;   // N shots per acquisition
  Lens lens = Lens::x71;
  double power_pct = 100.0;
  double samples_per_bit = 1.0;
};

struct MaskingReport {
  int repetitions = 0;
  int integrations = 0;
  double corr_data = 0.0;        // averaged trace vs true data waveform
  double corr_transmitted = 0.0; // averaged trace vs mean transmitted (masked) waveform
  double max_deviation = 0.0;    // max |trace - mean(trace)|
  std::vector<double> averaged;
  std::vector<double> data_waveform;
};

namespace detail {

inline const Bits& carried_data(const Activity& a) {
  if (const auto* p = std::get_if<Pattern>(&a)) return p->bits;
  if (const auto* m = std::get_if<MaskedStream>(&a)) return m->data;
  throw PreconditionError("lane carries neither a pattern nor a masked stream");
}

inline double carried_bit_rate(const Activity& a) {
  if (const auto* p = std::get_if<Pattern>(&a)) return p->bit_rate_hz;
  return std::get<MaskedStream>(a).bit_rate_hz;
}

}  // namespace detail

/// Replay-averaging attack: R acquisitions of N shots each with the laser
/// parked on `lane`, averaged, then correlated against the lane's data.
inline MaskingReport evaluate_replay_attack(const FloorPlan& plan, StimulusProgram& program, NodeId lane,
                                            const ReplayAttackConfig& cfg, Rng& rng, const OpticsParams& op = {}) {
  if (cfg.repetitions < 1 || cfg.integrations < 1) throw ConfigError("repetitions and integrations must be >= 1");
  const Activity act = program.activity_of(lane);
  const Bits& data = detail::carried_data(act);
  const double br = detail::carried_bit_rate(act);

  LaserState laser;
  laser.position = plan.resolve(lane).center;
  laser.power_pct = cfg.power_pct;
  laser.lens = cfg.lens;
  laser.on = true;
  EopRequest req;
  req.integrations = cfg.integrations;
  req.trigger_period_s = data.size() / br;
  req.sample_rate_hz = br * cfg.samples_per_bit;

  MaskingReport r;
  r.repetitions = cfg.repetitions;
  r.integrations = cfg.integrations;
  std::vector<double> expected;
  for (int i = 0; i < cfg.repetitions; ++i) {
    const EopTrace t = eop_acquire(plan, program, laser, req, rng, op);
    if (r.averaged.empty()) {
      r.averaged.assign(t.samples.size(), 0.0);
      expected.assign(t.samples.size(), 0.0);
    }
    for (std::size_t k = 0; k < t.samples.size(); ++k) {
      r.averaged[k] += t.samples[k] / cfg.repetitions;
      expected[k] += t.expected[k] / cfg.repetitions;
    }
  }
  const Pattern plain{data, br};
  r.data_waveform.resize(r.averaged.size());
  for (std::size_t k = 0; k < r.averaged.size(); ++k)
    r.data_waveform[k] = activity_level(plain, 0.0, static_cast<long long>(k), req.sample_rate_hz);
  r.corr_data = stats::pearson(r.averaged, r.data_waveform);
  r.corr_transmitted = stats::pearson(r.averaged, expected);
  const double m = stats::mean(r.averaged);
  for (double v : r.averaged) r.max_deviation = std::max(r.max_deviation, std::abs(v - m));
  return r;
}

/// As `evaluate_replay_attack`, restricted to lanes carrying a masked stream.
inline MaskingReport evaluate_masking(const FloorPlan& plan, StimulusProgram& program, NodeId lane,
                                      const ReplayAttackConfig& cfg, Rng& rng, const OpticsParams& op = {}) {
  if (!std::holds_alternative<MaskedStream>(program.activity_of(lane)))
    throw PreconditionError("lane does not carry a masked stream; use eop_acquire for plain lanes");
  return evaluate_replay_attack(plan, program, lane, cfg, rng, op);
}

/// Attacker who averages both a data lane and the pad lane, slices each
/// trace at its midpoint and XORs them. Returns the correlation of the
/// recovered bits with the true data. This only succeeds when the pad
/// repeats across replays.
inline double pad_lane_recovery(const FloorPlan& plan, StimulusProgram& program, NodeId data_lane, NodeId pad_lane,
                                const ReplayAttackConfig& cfg, Rng& rng, const OpticsParams& op = {}) {
  const auto d = evaluate_masking(plan, program, data_lane, cfg, rng, op);
  const auto p = evaluate_masking(plan, program, pad_lane, cfg, rng, op);
  auto slice = [](const std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double mid = 0.5 * (*lo + *hi);
    Bits b(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) b[i] = v[i] > mid;
    return b;
  };
  const Bits rec = xor_bits(slice(d.averaged), slice(p.averaged));
  std::vector<double> rv(rec.begin(), rec.end());
  return stats::pearson(rv, d.data_waveform);
}

}  // namespace chiplab
