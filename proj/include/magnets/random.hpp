#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace magnets {

using Rng = std::mt19937_64;

// Independent stream keyed by (seed, stream, index); used so that each sample
// or component draws from its own generator regardless of evaluation order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

// Uniform on the open interval (0, 1) from the top 53 bits.
inline double uniform_open(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform_open(rng); }

// Box-Muller, one draw per call.
inline double normal(Rng& rng, double mean, double stddev) {
    const double u1 = uniform_open(rng);
    const double u2 = uniform_open(rng);
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace magnets
