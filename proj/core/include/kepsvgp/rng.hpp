#pragma once

#include <cmath>
#include <cstdint>

#include "kepsvgp/tensor.hpp"

namespace kepsvgp {

/// Deterministic splitmix64 stream. The whole generator state is one 64-bit
/// word, so checkpoints can store and replay it exactly. Normal deviates use
/// Box-Muller on two uniforms and deliberately discard the sine branch to
/// keep the state a single counter.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]; safe as a log argument.
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny against 2^64 in all uses.
    return next_u64() % n;
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Derives an independent stream for a named purpose from one master seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0x5851f42d4c957f2dULL * (stream + 1)));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
};

/// Standard-normal tensor of the given shape; deterministic in the rng state.
inline Tensor sample_standard_normal(std::vector<std::size_t> shape, Rng& rng,
                                     Precision precision = Precision::Double) {
  Tensor t(std::move(shape), precision);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  t.quantize();
  return t;
}

}  // namespace kepsvgp
