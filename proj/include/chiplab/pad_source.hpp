#pragma once

// Keystream standing in for the transmitter's TRNG. Bits come from ChaCha20
// under a 256-bit key; the key is either drawn from the OS entropy pool or
// derived from an explicit debug seed.

#include <chiplab/errors.hpp>

#include <sodium.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace chiplab {

using Bits = std::vector<std::uint8_t>;

enum class PadPolicy {
  fresh,     // OS entropy key; never repeats
  seeded,    // key derived from a debug seed; reproducible, never repeats within a run
  replayed,  // debug: every replay restarts the pad, which defeats the masking
};

inline std::string_view to_string(PadPolicy p) noexcept {
  switch (p) {
    case PadPolicy::fresh: return "fresh";
    case PadPolicy::seeded: return "seeded";
    case PadPolicy::replayed: return "replayed";
  }
  return "unknown";
}

inline PadPolicy pad_policy_from_string(std::string_view s) {
  if (s == "fresh") return PadPolicy::fresh;
  if (s == "seeded") return PadPolicy::seeded;
  if (s == "replayed") return PadPolicy::replayed;
  throw ConfigError("unknown pad policy '" + std::string(s) + "'");
}

inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw Error("crypto_error", "libsodium initialisation failed");
}

class PadSource {
 public:
  using Key = std::array<unsigned char, crypto_stream_chacha20_ietf_KEYBYTES>;

  PadSource() : PadSource(PadPolicy::seeded, 0) {}

  PadSource(PadPolicy policy, std::uint64_t debug_seed) : policy_(policy) {
    ensure_sodium();
    if (policy == PadPolicy::fresh) {
      randombytes_buf(key_.data(), key_.size());
    } else {
      unsigned char seed_bytes[8];
      for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<unsigned char>(debug_seed >> (8 * i));
      crypto_generichash(key_.data(), key_.size(), seed_bytes, sizeof seed_bytes, nullptr, 0);
    }
  }

  /// Any policy with a key derived from `key_seed`, for runs that must be
  /// reproducible from a master seed.
  static PadSource keyed(PadPolicy policy, std::uint64_t key_seed) {
    PadSource p(PadPolicy::seeded, key_seed);
    p.policy_ = policy;
    return p;
  }

  PadPolicy policy() const noexcept { return policy_; }
  std::uint64_t position() const noexcept { return cursor_; }

  /// Random access into the keystream: bits [offset, offset + n).
  Bits bits_at(std::uint64_t offset, std::size_t n) const {
    Bits out(n);
    if (n == 0) return out;
    constexpr std::uint64_t kBlockBits = 512;
    const std::uint64_t first_block = offset / kBlockBits;
    const std::uint64_t last_block = (offset + n - 1) / kBlockBits;
    if (last_block >= (std::uint64_t{1} << 32)) throw RangeError("pad keystream exhausted");
    std::vector<unsigned char> stream((last_block - first_block + 1) * 64);
    const std::array<unsigned char, crypto_stream_chacha20_ietf_NONCEBYTES> nonce{};
    crypto_stream_chacha20_ietf_xor_ic(stream.data(), stream.data(), stream.size(), nonce.data(),
                                       static_cast<std::uint32_t>(first_block), key_.data());
    const std::uint64_t base = first_block * kBlockBits;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t bit = offset + i - base;
      out[i] = (stream[bit / 8] >> (bit % 8)) & 1u;
    }
    return out;
  }

  /// Next n pad bits. Successive calls return disjoint stream segments.
  Bits advance(std::size_t n) {
    Bits out = bits_at(cursor_, n);
    cursor_ += n;
    return out;
  }

  /// Called at the start of each replayed transmission.
  void begin_replay() noexcept {
    if (policy_ == PadPolicy::replayed) cursor_ = 0;
  }

 private:
  PadPolicy policy_;
  Key key_{};
  std::uint64_t cursor_ = 0;
};

}  // namespace chiplab
