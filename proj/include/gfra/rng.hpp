#pragma once

#include <cstdint>
#include <random>

#include "gfra/types.hpp"

namespace gfra {

/// SplitMix64 finalizer. Used to derive independent child seeds.
constexpr uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed-splitting rule: child = mix64(mix64(parent) ^ mix64(index + 1)).
/// Child streams depend only on (parent, index), never on evaluation order,
/// so trials can be distributed over any number of workers.
constexpr uint64_t split_seed(uint64_t parent, uint64_t index) {
    return mix64(mix64(parent) ^ mix64(index + 1));
}

using Rng = std::mt19937_64;

/// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
inline cplx complex_gaussian(Rng& rng, double variance = 1.0) {
    std::normal_distribution<double> nd(0.0, 1.0);
    const double s = std::sqrt(variance / 2.0);
    const double re = nd(rng);
    const double im = nd(rng);
    return {s * re, s * im};
}

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace gfra
