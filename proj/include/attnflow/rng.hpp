// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace attnflow {

// Counter-free splitmix64 generator (Steele, Lea, Flood 2014 constants).
// The exact algorithm is pinned here so another implementation, in any
// language, reproduces the same streams bit for bit:
//
//   state += 0x9e3779b97f4a7c15
//   z = state
//   z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//   z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//   return z ^ (z >> 31)
//
// Uniform doubles take the top 53 bits; each Gaussian consumes exactly two
// raw draws through Box-Muller and keeps only the cosine branch, so the
// stream position after k Gaussians is always 2k.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform on (0, 1]: ((u >> 11) + 1) * 2^-53. Never zero, so it is safe
    // under log().
    double next_unit_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Uniform on [0, 1): (u >> 11) * 2^-53.
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal draw, Box-Muller cosine branch.
    double next_gaussian() {
        const double u1 = next_unit_open();
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_;
};

namespace detail {
inline std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic sub-stream seed for (a, b) under a master seed, e.g.
// (instance id, run id). Two finalizer rounds, golden-ratio stride.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = master;
    h = detail::splitmix_finalize(h + 0x9e3779b97f4a7c15ULL * (a + 1));
    h = detail::splitmix_finalize(h + 0x9e3779b97f4a7c15ULL * (b + 1));
    return h;
}

}  // namespace attnflow
