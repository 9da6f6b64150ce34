#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace fcvae {

// Counter-based splittable RNG. Every draw is a pure function of
// (seed, stream label, counter), so adding draws on one stream never
// perturbs another stream and repeat runs are bit-identical. Labels in
// use across the project: "datagen", "init", "posterior-sampling",
// "shuffling", "validation", plus numeric per-row/per-seed substreams.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::string_view label)
      : seed_(seed), label_(label), key_(mix(seed, fnv1a(label))) {}

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t counter() const { return counter_; }
  void reset() { counter_ = 0; }

  std::uint64_t next_u64() { return scramble(key_, counter_++); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal, Box-Muller. Always consumes exactly two uniforms so
  // the counter advance per call is fixed.
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
  }

  // value in {0,...,n-1}
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Independent child stream; child draws never overlap the parent's.
  NoiseStream substream(std::string_view sublabel) const {
    return NoiseStream(key_, sublabel);
  }
  NoiseStream substream(std::uint64_t index) const {
    NoiseStream s(*this);
    s.key_ = scramble(key_ ^ 0x6a09e667f3bcc909ull, index);
    s.counter_ = 0;
    return s;
  }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return scramble(a ^ 0x9e3779b97f4a7c15ull, b);
  }
  // splitmix64 step keyed at `key`, evaluated at position `ctr`.
  static std::uint64_t scramble(std::uint64_t key, std::uint64_t ctr) {
    std::uint64_t z = key + 0x9e3779b97f4a7c15ull * (ctr + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace fcvae
