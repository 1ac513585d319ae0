#pragma once

// Digital activity of every node over simulated time.

#include <chiplab/errors.hpp>
#include <chiplab/floorplan.hpp>
#include <chiplab/pad_source.hpp>

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace chiplab {

struct Off {
  friend bool operator==(const Off&, const Off&) = default;
};
struct Toggle {
  double frequency_hz = 0.0;
  friend bool operator==(const Toggle&, const Toggle&) = default;
};
/// Repeating NRZ bit sequence.
struct Pattern {
  Bits bits;
  double bit_rate_hz = 100e6;
  friend bool operator==(const Pattern&, const Pattern&) = default;
};
/// Data XOR pad, with the pad drawn from the named link's pad source.
struct MaskedStream {
  Bits data;
  std::string link;
  double bit_rate_hz = 100e6;
  friend bool operator==(const MaskedStream&, const MaskedStream&) = default;
};

using Activity = std::variant<Off, Toggle, Pattern, MaskedStream>;

inline constexpr double kDefaultRoFrequencyHz = 500e6;
inline constexpr double kDefaultBitRateHz = 100e6;

/// Highest fundamental the activity can produce (Hz).
inline double highest_frequency(const Activity& a) {
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Off>) return 0.0;
        else if constexpr (std::is_same_v<T, Toggle>) return v.frequency_hz;
        else return v.bit_rate_hz / 2;
      },
      a);
}

/// Repetition period of the activity in seconds; 0 for quiescent nodes.
inline double activity_period(const Activity& a) {
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Off>) return 0.0;
        else if constexpr (std::is_same_v<T, Toggle>) return 1.0 / v.frequency_hz;
        else if constexpr (std::is_same_v<T, Pattern>) return v.bits.size() / v.bit_rate_hz;
        else return v.data.size() / v.bit_rate_hz;
      },
      a);
}

struct BitWaveform {
  Bits samples;
  double sample_rate_hz = 0.0;
  double t0_s = 0.0;
  double duration_s = 0.0;
};

struct ActiveNode {
  NodeRef node;
  Activity activity;
};

class StimulusProgram {
 public:
  explicit StimulusProgram(std::shared_ptr<const FloorPlan> plan, double ro_frequency_hz = kDefaultRoFrequencyHz)
      : plan_(std::move(plan)), ro_frequency_hz_(ro_frequency_hz) {
    if (!plan_) throw ConfigError("stimulus program needs a floorplan");
    if (!(ro_frequency_hz_ > 0)) throw ConfigError("ring-oscillator frequency must be > 0");
    for (const auto& b : plan_->ro_blocks()) block_enables_[b.id] = false;
  }

  const FloorPlan& plan() const noexcept { return *plan_; }
  std::shared_ptr<const FloorPlan> plan_ptr() const noexcept { return plan_; }
  double ro_frequency_hz() const noexcept { return ro_frequency_hz_; }

  void add_link(const std::string& name, PadSource pad) { pads_.insert_or_assign(name, std::move(pad)); }
  bool has_link(const std::string& name) const { return pads_.count(name) != 0; }
  PadSource& pad(const std::string& link) {
    auto it = pads_.find(link);
    if (it == pads_.end()) throw LookupError("unknown masked link '" + link + "'");
    return it->second;
  }
  const PadSource& pad(const std::string& link) const { return const_cast<StimulusProgram*>(this)->pad(link); }

  void assign(NodeId node, Activity activity) {
    if (!plan_->contains(node)) throw LookupError("node " + std::to_string(node.value) + " is not in the floorplan");
    std::visit(
        [this](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, Toggle>) {
            if (!(v.frequency_hz > 0)) throw ConfigError("toggle frequency must be > 0");
          } else if constexpr (std::is_same_v<T, Pattern>) {
            if (v.bits.empty()) throw ConfigError("pattern must be non-empty");
            if (!(v.bit_rate_hz > 0)) throw ConfigError("pattern bit rate must be > 0");
            for (auto b : v.bits)
              if (b > 1) throw ConfigError("pattern bits must be 0 or 1");
          } else if constexpr (std::is_same_v<T, MaskedStream>) {
            if (v.data.empty()) throw ConfigError("masked stream data must be non-empty");
            if (!(v.bit_rate_hz > 0)) throw ConfigError("masked stream bit rate must be > 0");
            if (!has_link(v.link)) throw LookupError("unknown masked link '" + v.link + "'");
          }
        },
        activity);
    if (std::holds_alternative<Off>(activity)) assignments_.erase(node);
    else assignments_[node] = std::move(activity);
  }

  void set_ro_block(int block_id, bool enabled) {
    auto it = block_enables_.find(block_id);
    if (it == block_enables_.end()) throw LookupError("unknown ring-oscillator block " + std::to_string(block_id));
    it->second = enabled;
  }
  bool ro_block_enabled(int block_id) const {
    auto it = block_enables_.find(block_id);
    if (it == block_enables_.end()) throw LookupError("unknown ring-oscillator block " + std::to_string(block_id));
    return it->second;
  }
  const std::map<int, bool>& block_enables() const noexcept { return block_enables_; }
  const std::map<NodeId, Activity>& assignments() const noexcept { return assignments_; }

  Activity activity_of(NodeId node) const {
    if (auto it = assignments_.find(node); it != assignments_.end()) return it->second;
    if (node.kind() == NodeKind::ring_oscillator) {
      const int block = static_cast<int>((node.value >> 20) & 0xFFFFFFFFFF);
      if (auto it = block_enables_.find(block); it != block_enables_.end() && it->second)
        return Toggle{ro_frequency_hz_};
    }
    return Off{};
  }

  /// Every switching node: explicit assignments plus the oscillators of
  /// enabled blocks.
  std::vector<ActiveNode> active_nodes() const {
    std::vector<ActiveNode> out;
    for (const auto& [id, act] : assignments_) out.push_back({plan_->resolve(id), act});
    const int n = plan_->config().ro_grid * plan_->config().ro_grid;
    for (const auto& b : plan_->ro_blocks()) {
      if (!block_enables_.at(b.id)) continue;
      for (int i = 0; i < n; ++i) {
        const NodeId id = plan_->ro_id(b.id, i);
        if (assignments_.count(id)) continue;
        out.push_back({plan_->resolve(id), Toggle{ro_frequency_hz_}});
      }
    }
    return out;
  }

  void begin_replay() {
    for (auto& [name, pad] : pads_) pad.begin_replay();
  }

 private:
  std::shared_ptr<const FloorPlan> plan_;
  double ro_frequency_hz_;
  std::map<NodeId, Activity> assignments_;
  std::map<int, bool> block_enables_;
  std::map<std::string, PadSource> pads_;
};

namespace detail {

inline long long floor_index(double x) { return static_cast<long long>(std::floor(x + 1e-9)); }

}  // namespace detail

/// Logic level of an activity at sample k of a grid starting at t0 with the
/// given rate. For masked streams `pad` holds the pad bits starting at bit
/// index `pad_offset`.
inline std::uint8_t activity_level(const Activity& a, double t0, long long k, double rate, const Bits* pad = nullptr,
                                   long long pad_offset = 0) {
  return std::visit(
      [&](const auto& v) -> std::uint8_t {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Off>) {
          return 0;
        } else if constexpr (std::is_same_v<T, Toggle>) {
          const double half_periods = 2 * v.frequency_hz * t0 + k * (2 * v.frequency_hz / rate);
          return static_cast<std::uint8_t>(detail::floor_index(half_periods) & 1);
        } else {
          const double bits = v.bit_rate_hz * t0 + k * (v.bit_rate_hz / rate);
          const long long i = detail::floor_index(bits);
          if constexpr (std::is_same_v<T, Pattern>) {
            const long long n = static_cast<long long>(v.bits.size());
            return v.bits[static_cast<std::size_t>(((i % n) + n) % n)];
          } else {
            const long long n = static_cast<long long>(v.data.size());
            const std::uint8_t d = v.data[static_cast<std::size_t>(((i % n) + n) % n)];
            const std::uint8_t p = pad ? (*pad)[static_cast<std::size_t>(i - pad_offset)] : 0;
            return d ^ p;
          }
        }
      },
      a);
}

inline std::size_t sample_count(double duration_s, double rate_hz) {
  return static_cast<std::size_t>(std::floor(duration_s * rate_hz + 1e-9));
}

/// Samples the node's logic waveform over [t0, t1). Masked streams use the
/// link keystream at absolute bit positions, i.e. the first transmission.
inline BitWaveform node_waveform(const StimulusProgram& program, NodeId node, double t0, double t1, double rate_hz) {
  if (!program.plan().contains(node)) throw LookupError("node " + std::to_string(node.value) + " is not in the floorplan");
  if (!(t1 > t0)) throw ConfigError("waveform window must satisfy t1 > t0");
  const Activity act = program.activity_of(node);
  const double f = highest_frequency(act);
  if (!(rate_hz > 0) || rate_hz < 2 * f * (1 - 1e-12))
    throw AliasingError("sample rate " + std::to_string(rate_hz) + " Hz is below twice the node frequency " +
                        std::to_string(f) + " Hz");
  BitWaveform w{Bits(sample_count(t1 - t0, rate_hz)), rate_hz, t0, t1 - t0};
  Bits pad;
  long long pad_offset = 0;
  if (const auto* m = std::get_if<MaskedStream>(&act); m && !w.samples.empty()) {
    pad_offset = detail::floor_index(m->bit_rate_hz * t0);
    const long long last = detail::floor_index(m->bit_rate_hz * t0 + (w.samples.size() - 1) * (m->bit_rate_hz / rate_hz));
    if (pad_offset < 0) throw ConfigError("masked stream waveform window must start at t >= 0");
    pad = program.pad(m->link).bits_at(static_cast<std::uint64_t>(pad_offset), static_cast<std::size_t>(last - pad_offset + 1));
  }
  for (std::size_t k = 0; k < w.samples.size(); ++k)
    w.samples[k] = activity_level(act, t0, static_cast<long long>(k), rate_hz, &pad, pad_offset);
  return w;
}

inline void set_ro_block(StimulusProgram& program, int block_id, bool enabled) {
  program.set_ro_block(block_id, enabled);
}

/// Next n pad bits of the masked link carried by `node`.
inline Bits advance_pad(StimulusProgram& program, NodeId node, std::size_t n_bits) {
  const Activity act = program.activity_of(node);
  const auto* m = std::get_if<MaskedStream>(&act);
  if (!m) throw TypeError("node " + std::to_string(node.value) + " does not carry a masked stream");
  return program.pad(m->link).advance(n_bits);
}

}  // namespace chiplab
