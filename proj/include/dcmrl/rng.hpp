#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dcmrl {

// Seeded random stream. Named sub-streams are derived from (seed, name) by a
// counter-free hash split, so each component's draws are independent of the
// order in which other components consume theirs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(engine_); }
  double normal() { return normal_(engine_); }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::vector<double> normal_vector(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);

}  // namespace dcmrl
