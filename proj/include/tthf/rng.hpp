#pragma once

#include <cstdint>
#include <random>

namespace tthf {

using Rng = std::mt19937_64;

/// Stream tags; every consumer of randomness draws from its own substream so
/// results never depend on evaluation order or thread count.
enum class Stream : std::uint64_t {
  data = 1,
  partition = 2,
  placement = 3,
  device_sgd = 4,
  outage = 5,
  server = 6,
  init = 7,
  estimator = 8,
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives a seed for substream (tag, a, b) of a master seed.
std::uint64_t derive_seed(std::uint64_t master, Stream tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

inline Rng make_rng(std::uint64_t master, Stream tag, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(derive_seed(master, tag, a, b));
}

/// Uniform double in [0, 1) with a fixed, library-independent construction.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on uniform01; avoids implementation-defined
/// std::normal_distribution so datasets are identical across standard libraries.
double standard_normal(Rng& rng);

/// Uniform integer in [0, n) by rejection; n > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

}  // namespace tthf
