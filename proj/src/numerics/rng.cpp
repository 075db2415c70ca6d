#include "dcmrl/rng.hpp"

#include "dcmrl/error.hpp"

namespace dcmrl {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Rng Rng::stream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  return Rng(splitmix64(splitmix64(seed) ^ fnv1a(name) ^ splitmix64(index + 0x51ed270b27ULL)));
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) fail(ErrorKind::invalid_argument, "Rng::index on empty range");
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return d(engine_);
}

std::vector<double> Rng::normal_vector(std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = normal();
  return v;
}

}  // namespace dcmrl
