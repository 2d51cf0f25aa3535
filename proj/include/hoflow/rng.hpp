#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "hoflow/core.hpp"

namespace hoflow {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Counter-based generator: the i-th draw is a pure function of (key, i), so
// streams are reproducible regardless of how work is split across threads.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view stream)
      : key_(splitmix64(seed ^ splitmix64(fnv1a(stream)))) {}

  // Child stream, independent of the parent's counter.
  Rng split(std::string_view name) const {
    Rng r(*this);
    r.key_ = splitmix64(key_ ^ fnv1a(name));
    r.counter_ = 0;
    r.has_spare_ = false;
    return r;
  }
  Rng split(std::uint64_t index) const {
    Rng r(*this);
    r.key_ = splitmix64(key_ + splitmix64(index + 0x632be59bd9b4e019ULL));
    r.counter_ = 0;
    r.has_spare_ = false;
    return r;
  }

  std::uint64_t next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

  // Uniform in (0, 1).
  double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * n) % n; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0;
};

}  // namespace hoflow
