#pragma once

#include <cmath>
#include <cstdint>

namespace cwm {

// Deterministic PRNG used everywhere randomness is needed (weight init,
// synthetic data, random mask schedules). The algorithm is splitmix64 so
// that schedules and datasets are reproducible from a seed across
// implementations; the exact update is documented in the README.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, bound), bound > 0. Plain modulo; the bias is
    // irrelevant at the bounds used here and keeps the rule portable.
    uint64_t next_below(uint64_t bound) { return next() % bound; }

    // Uniform integer in [lo, hi] inclusive.
    int next_int(int lo, int hi) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; two uniforms per draw, no caching,
    // so the stream position is a simple function of the draw count.
    double next_normal() {
        double u1 = 1.0 - next_unit();  // (0, 1]
        double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    uint64_t state_;
};

// Derives an independent per-item seed from a master seed. Used for
// per-sequence dataset generation; documented in the README so datasets
// can be regenerated piecewise.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
    SplitMix64 g(master ^ (0x9E3779B97F4A7C15ULL * (index + 1)));
    return g.next();
}

}  // namespace cwm
