#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sim2real {

// Normal(0, stddev) resampled until it falls within ±2·stddev.
inline double truncated_normal(std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (;;) {
        const double z = dist(rng);
        if (std::abs(z) <= 2.0) {
            return z * stddev;
        }
    }
}

// Derives a decorrelated child seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace sim2real
