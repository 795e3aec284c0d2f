#pragma once

// Philox-4x32-10 counter-based generator (Salmon et al., SC'11) plus the
// fixed conversions the wire format relies on: 32-bit words become open-interval
// uniforms, and consecutive uniform pairs become normals by Box-Muller.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace diffc::philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
inline constexpr int kRounds = 10;

constexpr Counter round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    return {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
            static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
}

constexpr Counter philox4x32(Counter c, Key k) noexcept {
    for (int r = 0; r < kRounds; ++r) {
        if (r > 0) {
            k[0] += kWeyl0;
            k[1] += kWeyl1;
        }
        c = round(c, k);
    }
    return c;
}

/// Number of lanes evaluated together by the batched kernel.
inline constexpr int kLanes = 32;
static_assert(kLanes <= 32, "lane masks are 32-bit");

/// Evaluates kLanes blocks whose counters differ only in word 1
/// (word1 = first_word1 + lane). Results are written word-major:
/// out[w][lane]. Bit-identical to calling philox4x32 per lane.
void philox4x32_lanes(std::uint32_t word0, std::uint32_t first_word1, std::uint32_t word2,
                      std::uint32_t word3, Key key, std::uint32_t out[4][kLanes]) noexcept;

/// Word 0 of the same kLanes blocks, plus a bitmask of the lanes whose word 0
/// is <= cut (bit l set for lane l).
std::uint32_t philox4x32_lanes_word0(std::uint32_t word0, std::uint32_t first_word1, std::uint32_t word2,
                                     std::uint32_t word3, Key key, std::uint32_t cut,
                                     std::uint32_t out[kLanes]) noexcept;

/// Maps a 32-bit word to (0, 1): (x + 0.5) / 2^32. Never returns 0 or 1.
constexpr double to_unit(std::uint32_t x) noexcept {
    return (static_cast<double>(x) + 0.5) * 0x1p-32;
}

/// Box-Muller on (u_radius, u_angle): returns {r cos(2 pi u_angle), r sin(2 pi u_angle)}
/// with r = sqrt(-2 ln u_radius).
inline std::array<double, 2> box_muller(double u_radius, double u_angle) noexcept {
    const double r = std::sqrt(-2.0 * std::log(u_radius));
    const double theta = 2.0 * std::numbers::pi * u_angle;
    return {r * std::cos(theta), r * std::sin(theta)};
}

/// Largest radius Box-Muller can produce from to_unit() inputs.
inline double max_radius() noexcept { return std::sqrt(-2.0 * std::log(to_unit(0))); }

}  // namespace diffc::philox
