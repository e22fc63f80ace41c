#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace varcomp::rng {

// All randomness in the library flows through keyed counter-based streams:
// a stream is identified by (seed, kind, a, b) and its draws do not depend
// on scheduling or worker count. Re-keying with the same tuple replays the
// same sequence.

enum class StreamKind : std::uint64_t {
  mc_draw = 1,     // Monte-Carlo likelihood draws, a = individual, b = draw index
  sim_phi = 2,     // random-effect vectors in data generation, a = replication, b = individual
  sim_eps = 3,     // residual noise in data generation, a = replication, b = individual
  weight_draw = 4, // cone-projection weight estimation, a = draw index
  tail_draw = 5,   // direct tail sampling of the limit distribution, a = draw index
  jitter = 6,      // multi-start perturbations, a = restart index
  generic = 7,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Stream {
 public:
  Stream(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0, std::uint64_t b = 0) {
    state_ = seed;
    (void)splitmix64(state_);
    state_ ^= static_cast<std::uint64_t>(kind) * 0xD1342543DE82EF95ULL;
    (void)splitmix64(state_);
    state_ ^= a * 0xAF251AF3B0F025B5ULL;
    (void)splitmix64(state_);
    state_ ^= b * 0x9E6C63D0876A9A99ULL;
    (void)splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform on (0, 1]; never returns 0 so log() is safe.
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = next_normal();
    return v;
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace varcomp::rng
