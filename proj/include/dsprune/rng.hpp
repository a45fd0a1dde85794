#pragma once

#include <cstdint>
#include <string_view>

namespace dsprune {

// Counter-based pseudo-random generator (splitmix64). The standard <random>
// distributions are not bit-stable across library implementations, so every
// seeded draw in the project goes through this generator to keep datasets,
// parameter initialization and shuffles reproducible on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

/// Mixes two seeds into one; used to derive independent per-index streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    Rng r(a ^ (0x51f0e9b5c2a3d476ULL + (b << 1)));
    r.next_u64();
    return r.next_u64() ^ b;
}

/// Stable 64-bit FNV-1a hash, used to give each layer id its own RNG stream.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace dsprune
