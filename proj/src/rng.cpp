#include "msel/rng.hpp"

#include <cmath>
#include <numbers>

namespace msel {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view name,
                          std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // FNV-1a over the name, then splitmix64 passes folding in each tag.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ull;
  }
  std::uint64_t s = base;
  std::uint64_t out = splitmix64(s);
  s ^= h;
  out ^= splitmix64(s);
  s ^= a;
  out ^= splitmix64(s);
  s ^= b;
  out ^= splitmix64(s);
  s ^= c;
  out ^= splitmix64(s);
  return out;
}

double Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform_open();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gumbel() { return -std::log(-std::log(uniform_open())); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

}  // namespace msel
