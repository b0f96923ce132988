#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace st {

// splitmix64 step. Small, well-dispersed, and bit-reproducible across
// platforms, which std::uniform_real_distribution is not.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream id from (seed, stream). Used to give every
// example / epoch / parameter its own substream so results do not depend on
// batch sharding or iteration order.
inline uint64_t derive_stream(uint64_t seed, uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream ^ 0x5bf03635a61a3c1dULL));
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 24 bits of mantissa, exact in float.
  float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; the spare value is cached so a stream of
  // gaussians consumes exactly one uniform pair per two draws.
  float gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    float u1 = 0.0f;
    do {
      u1 = uniform();
    } while (u1 <= 0.0f);
    const float u2 = uniform();
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float theta = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

}  // namespace st
