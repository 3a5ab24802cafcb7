#pragma once

#include <cstdint>
#include <string_view>

namespace grimgep {

// SplitMix64 generator. Every random draw in the project flows through one of
// these streams so runs reproduce bit-for-bit regardless of platform or
// standard-library version (std::uniform_real_distribution and friends are
// implementation-defined and would break byte-stable outputs).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

  // Uniform in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire reduction, no modulo bias worth caring
  // about at 64 bits of input entropy.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

inline std::uint64_t hash_label(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

// Expands one master seed into independent, label-addressed streams. Streams
// with distinct (label, a, b) never share state, which keeps ablations
// identical everywhere except where they intentionally differ.
inline Rng derive_stream(std::uint64_t master, std::string_view label,
                         std::uint64_t a = 0, std::uint64_t b = 0) {
  Rng mix(master ^ (hash_label(label) * 0x9e3779b97f4a7c15ull));
  std::uint64_t s = mix.next_u64();
  s ^= 0xd1342543de82ef95ull * (a + 1);
  s ^= 0xaf251af3b0f025b5ull * (b + 1);
  Rng out(s);
  out.next_u64();
  return out;
}

}  // namespace grimgep
