#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace deepfidelity {

// SplitMix64 generator. Every source of randomness in the project goes
// through this class so a single seed yields bitwise reproducible runs.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) with 53 bits of entropy.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Lemire multiply-shift; n must be > 0.
    uint64_t next_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Standard normal via Box-Muller. Consumes exactly two draws.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Normal(0, std) resampled until within [-2*std, 2*std].
    double next_trunc_normal(double std_dev) {
        for (;;) {
            double z = next_normal() * std_dev;
            if (std::abs(z) <= 2.0 * std_dev) return z;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

// Mixes a stream id into a seed so that derived generators are independent.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) {
    SplitMix64 g(seed ^ (0x6a09e667f3bcc909ULL + stream * 0x9e3779b97f4a7c15ULL));
    return g.next_u64();
}

} // namespace deepfidelity
