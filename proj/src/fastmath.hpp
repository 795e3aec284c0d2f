#pragma once

// Branch-free approximations used only to rank PFR candidates. Absolute error
// of the resulting normals is below 1e-9; the encoder rescores anything close
// to the running best with the exact libm path, so these never reach the wire.

#include <bit>
#include <cstdint>
#include <numbers>

namespace diffc::fastmath {

/// Natural log for positive normal doubles (relative error ~1e-15 plus rounding).
inline double log(double x) noexcept {
    // Split x = m 2^e with m in [sqrt(1/2), sqrt(2)) using integer ops only, so
    // loops calling this stay vectorizable.
    const auto bits = std::bit_cast<std::uint64_t>(x);
    const std::uint64_t ix = bits - 0x3FE6A09E667F3BCDull;
    const double e = static_cast<double>(static_cast<std::int64_t>(ix) >> 52);
    const double m = std::bit_cast<double>(bits - (ix & 0xFFF0000000000000ull));
    const double f = (m - 1.0) / (m + 1.0);
    const double f2 = f * f;
    double p = 1.0 / 17;
    p = p * f2 + 1.0 / 15;
    p = p * f2 + 1.0 / 13;
    p = p * f2 + 1.0 / 11;
    p = p * f2 + 1.0 / 9;
    p = p * f2 + 1.0 / 7;
    p = p * f2 + 1.0 / 5;
    p = p * f2 + 1.0 / 3;
    p = p * f2 + 1.0;
    return 2.0 * f * p + e * std::numbers::ln2;
}

/// cos and sin of 2 pi u for u in [0, 1].
inline void sincos_2pi(double u, double& c, double& s) noexcept {
    const double q = static_cast<double>(static_cast<std::int64_t>(4.0 * u + 0.5));
    const double phi = 2.0 * std::numbers::pi * (u - 0.25 * q);  // |phi| <= pi/4
    const double p2 = phi * phi;
    double sp = 1.0 - p2 * (1.0 / 210);
    sp = 1.0 - p2 * (1.0 / 156) * sp;
    sp = 1.0 - p2 * (1.0 / 110) * sp;
    sp = 1.0 - p2 * (1.0 / 72) * sp;
    sp = 1.0 - p2 * (1.0 / 42) * sp;
    sp = 1.0 - p2 * (1.0 / 20) * sp;
    sp = 1.0 - p2 * (1.0 / 6) * sp;
    const double sn = phi * sp;
    double cp = 1.0 - p2 * (1.0 / 240);
    cp = 1.0 - p2 * (1.0 / 182) * cp;
    cp = 1.0 - p2 * (1.0 / 132) * cp;
    cp = 1.0 - p2 * (1.0 / 90) * cp;
    cp = 1.0 - p2 * (1.0 / 56) * cp;
    cp = 1.0 - p2 * (1.0 / 30) * cp;
    cp = 1.0 - p2 * (1.0 / 12) * cp;
    const double cs = 1.0 - p2 * (1.0 / 2) * cp;
    const auto quadrant = static_cast<std::int64_t>(q) & 3;
    const double odd = static_cast<double>(quadrant & 1);
    const double sign_c = 1.0 - 2.0 * static_cast<double>(((quadrant + 1) >> 1) & 1);
    const double sign_s = 1.0 - 2.0 * static_cast<double>((quadrant >> 1) & 1);
    c = sign_c * (cs + odd * (sn - cs));
    s = sign_s * (sn + odd * (cs - sn));
}

}  // namespace diffc::fastmath
