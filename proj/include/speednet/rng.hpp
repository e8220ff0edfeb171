#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

namespace speednet {

// Counter-based splittable generator. State is (key, counter); every draw
// mixes the pair through splitmix64-style finalizers, so streams derived via
// split() are independent of draw order and bit-reproducible across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : key_(mix(seed ^ 0x9e3779b97f4a7c15ull) ^ mix(stream)), counter_(0) {}

  // Child stream independent of this one; does not advance the parent.
  Rng split(uint64_t child_id) const {
    Rng r(0);
    r.key_ = mix(key_ ^ mix(child_id + 0x632be59bd9b4e019ull));
    r.counter_ = 0;
    return r;
  }

  uint64_t next_u64() {
    uint64_t z = key_ + counter_ * 0x9e3779b97f4a7c15ull;
    ++counter_;
    return mix(z);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Box-Muller; draws two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Integer in [0, n).
  uint64_t next_below(uint64_t n) { return n ? next_u64() % n : 0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  uint64_t key_;
  uint64_t counter_;
};

}  // namespace speednet
