#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace adaptlab {

// splitmix64: tiny, well-mixed, and trivially portable. <random> distributions
// are implementation-defined, which would break bitwise replay of runs.
inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }
  std::uint64_t state() const { return state_; }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased uniform integer in [0, n)
  int below(int n) {
    const std::uint64_t un = std::uint64_t(n);
    const std::uint64_t lim = ~0ull - ~0ull % un;
    for (;;) {
      std::uint64_t x = next_u64();
      if (x < lim) return int(x % un);
    }
  }

  // standard normal via Box-Muller; pairs cached
  double gauss() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // independent child stream; does not advance this stream
  Rng fork(std::string_view tag) const {
    std::uint64_t s = state_ ^ (0x9E3779B97F4A7C15ull + fnv1a(tag));
    splitmix64(s);
    return Rng(s);
  }
  Rng fork(std::string_view tag, std::uint64_t index) const {
    std::uint64_t s = state_ ^ (0x9E3779B97F4A7C15ull + fnv1a(tag));
    s += 0xD1B54A32D192ED03ull * (index + 1);
    splitmix64(s);
    return Rng(s);
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace adaptlab
