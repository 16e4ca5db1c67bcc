#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace curesimex {

// splitmix64 finalizer; used to mix stream tags into substream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic substream: the seed is a pure function of (master seed, tags),
// never of thread identity or call order across streams. Each logical unit of
// work (replicate, perturbation draw, calibration pass) owns one stream, so
// scheduling cannot change any drawn value.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  static RngStream from_tags(std::uint64_t master, std::uint64_t t1, std::uint64_t t2 = 0,
                             std::uint64_t t3 = 0, std::uint64_t t4 = 0) {
    std::uint64_t s = mix64(master);
    s = mix64(s ^ t1);
    s = mix64(s ^ t2);
    s = mix64(s ^ t3);
    s = mix64(s ^ t4);
    return RngStream(s);
  }

  // Uniform on (0,1): 53-bit mantissa, never exactly 0 or 1.
  double uniform() {
    std::uint64_t u = engine_();
    return (static_cast<double>(u >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, both values used; avoids library-specific normal_distribution state.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double exponential(double mean) { return -mean * std::log(uniform()); }

  bool bernoulli(double p) { return uniform() < p; }

private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable tag constants for stream derivation. Values are arbitrary but frozen:
// changing them changes every stream.
namespace stream_tag {
constexpr std::uint64_t generator = 0x67656e;       // data generation
constexpr std::uint64_t perturb = 0x706572;         // SIMEX noise draws
constexpr std::uint64_t calibrate = 0x63616c;       // censoring calibration
constexpr std::uint64_t mc_cell = 0x6d63;           // study cell
}  // namespace stream_tag

}  // namespace curesimex
