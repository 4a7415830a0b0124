#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace hsr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a mask selects no foreground pixels where at least one is required.
class DegenerateMaskError : public Error {
public:
    using Error::Error;
};

/// The single generator type threaded through every stochastic step.
using Rng = std::mt19937_64;

/// Derives an independent, order-free seed for item `index` of a stream seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace hsr
