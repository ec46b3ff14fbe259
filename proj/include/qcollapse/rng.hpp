#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "errors.hpp"

namespace qcollapse {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seed of trajectory k: splitmix64(master_seed XOR k). Trajectory k can be
/// reproduced without running the others.
inline std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t trajectory) {
    return splitmix64(master_seed ^ trajectory);
}

// The samplers below avoid the std distributions so that streams are
// identical across standard library implementations.

/// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double standard_normal(Rng& rng) {
    // Box-Muller; one variate per call keeps the stream position simple.
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double exponential(Rng& rng, double rate) {
    if (!(rate > 0.0)) throw DomainError("exponential rate must be positive");
    return -std::log1p(-uniform01(rng)) / rate;
}

/// Cumulative table over nonnegative weights for repeated inverse-CDF draws.
class DiscreteSampler {
public:
    explicit DiscreteSampler(std::span<const double> weights) : cdf_(weights.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] < 0.0 || !std::isfinite(weights[i])) throw DomainError("sampling weights must be finite and nonnegative");
            acc += weights[i];
            cdf_[i] = acc;
        }
        if (!(acc > 0.0)) throw DomainError("sampling weights sum to zero");
    }

    std::size_t operator()(Rng& rng) const {
        const double u = uniform01(rng) * cdf_.back();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        auto i = static_cast<std::size_t>(it - cdf_.begin());
        if (i >= cdf_.size()) i = cdf_.size() - 1;
        return i;
    }

    double total() const { return cdf_.back(); }

private:
    std::vector<double> cdf_;
};

}  // namespace qcollapse
