#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <sstream>

namespace mogo {

// xoshiro256** seeded via splitmix64. Small serializable state so training
// runs can checkpoint and resume bit-identically.
class Rng {
 public:
  Rng() : Rng(0x9e3779b97f4a7c15ull) {}

  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  int below_int(int n) { return static_cast<int>(below(static_cast<uint64_t>(n))); }

  // Box-Muller without a cached spare so the state stays 4 words.
  float normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                              std::cos(2.0 * 3.14159265358979323846 * u2));
  }

  float normal(float mean, float stddev) { return mean + stddev * normal(); }

  std::string state_string() const {
    std::ostringstream os;
    os << s_[0] << ' ' << s_[1] << ' ' << s_[2] << ' ' << s_[3];
    return os.str();
  }

  bool restore_state(const std::string& text) {
    std::istringstream is(text);
    uint64_t w[4];
    if (!(is >> w[0] >> w[1] >> w[2] >> w[3])) return false;
    for (int i = 0; i < 4; ++i) s_[i] = w[i];
    return true;
  }

  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // 64-bit FNV-1a, used for hashing text tokens and checkpoint bytes.
  static uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

}  // namespace mogo
