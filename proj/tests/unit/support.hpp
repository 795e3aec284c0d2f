#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "diffc/diffusion.hpp"

namespace diffc::test {

/// Independent RNG for test inputs, so fixtures never share streams with the codec.
inline std::mt19937_64& rng() {
    static std::mt19937_64 g(20240611);
    return g;
}

inline Vector gaussian_vector(std::mt19937_64& g, int dim, double sd = 1.0) {
    std::normal_distribution<double> n(0.0, sd);
    Vector v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = static_cast<float>(n(g));
    return v;
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
    std::size_t n = 0;

    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        var += d * (x - mean);
    }
    double variance() const { return n > 1 ? var / static_cast<double>(n - 1) : 0.0; }
    double se() const { return std::sqrt(variance() / static_cast<double>(n)); }
};

}  // namespace diffc::test
