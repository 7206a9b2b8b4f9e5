#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace msel {

// Deterministic random streams. Every consumer derives its own named
// substream from the base seed so that adding or removing one consumer
// never shifts the draws seen by another.

std::uint64_t splitmix64(std::uint64_t& state);

// Stable seed for a named substream; extra integer tags (fold, epoch,
// space index, ...) keep per-context streams independent.
std::uint64_t derive_seed(std::uint64_t base, std::string_view name,
                          std::uint64_t a = 0, std::uint64_t b = 0,
                          std::uint64_t c = 0);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on the open interval (0,1); safe to feed into log().
  double uniform_open() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Uniform on [0,1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; two draws per call, no cached spare.
  double normal();

  // Standard Gumbel: -log(-log u), u in (0,1).
  double gumbel();

  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t uniform_int(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

inline Rng make_stream(std::uint64_t base, std::string_view name,
                       std::uint64_t a = 0, std::uint64_t b = 0,
                       std::uint64_t c = 0) {
  return Rng(derive_seed(base, name, a, b, c));
}

}  // namespace msel
