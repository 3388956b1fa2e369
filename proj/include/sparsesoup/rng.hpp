#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace sparsesoup {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Order-sensitive mix of seed components; used to derive independent
/// streams, e.g. seed_mix(base_seed, phase, replica).
inline uint64_t seed_mix(uint64_t a) { return splitmix64(a); }

template <typename... Rest>
uint64_t seed_mix(uint64_t a, uint64_t b, Rest... rest) {
    return seed_mix(splitmix64(a) ^ (splitmix64(b + 0x632be59bd9b4e019ull)), rest...);
}

// Small deterministic PRNG (splitmix64 core). Distribution code is written
// out explicitly so that streams are bit-reproducible across platforms;
// std::uniform_real_distribution et al. are implementation-defined.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    /// Standard normal via Box-Muller (one value per call).
    double gaussian() {
        double u1 = unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Integer in [0, n), n >= 1.
    uint64_t below(uint64_t n) {
        // Lemire's multiply-shift; bias is negligible for the sizes used here.
        return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<uint32_t> permutation(uint32_t n) {
        std::vector<uint32_t> p(n);
        for (uint32_t i = 0; i < n; ++i) p[i] = i;
        for (uint32_t i = n; i > 1; --i) {
            const auto j = static_cast<uint32_t>(below(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

  private:
    uint64_t state_;
};

}  // namespace sparsesoup
