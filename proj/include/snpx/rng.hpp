#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace snpx {

// Deterministic seeded RNG. Every consumer of randomness derives its own
// substream from (root seed, component name, index), so reordering one
// component's draws never perturbs another's.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  static uint64_t mix(uint64_t seed, std::string_view component, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the component tag
    for (char c : component) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return splitmix(splitmix(seed ^ h) + index * 0x9e3779b97f4a7c15ull);
  }

  static Rng substream(uint64_t seed, std::string_view component, uint64_t index = 0) {
    return Rng(mix(seed, component, index));
  }

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 24 bits of mantissa, identical on every platform.
  float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

  // Box-Muller; draws exactly two uniforms per call.
  float normal() {
    float u1 = uniform();
    float u2 = uniform();
    if (u1 < 1e-12f) u1 = 1e-12f;
    return std::sqrt(-2.0f * std::log(u1)) * std::cos(6.28318530717958647692f * u2);
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace snpx
