#include "diffc/philox.hpp"

#include <cstring>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace diffc::philox {

namespace {

constexpr int kWidth = 16;
constexpr int kGroups = kLanes / kWidth;
static_assert(kLanes % kWidth == 0);

using u32v = std::uint32_t __attribute__((vector_size(4 * kWidth)));
using u64v = std::uint64_t __attribute__((vector_size(4 * kWidth)));

constexpr std::uint64_t kLow = 0x00000000FFFFFFFFull;
constexpr std::uint64_t kHigh = 0xFFFFFFFF00000000ull;

// 32x32 -> 64 products of every lane with m. Adjacent u32 lanes share one u64
// lane (even lane in the low half), so the even/odd products recombine into
// lo/hi words without shuffles.
inline void mulhilo(u32v x, std::uint32_t m, u32v& lo, u32v& hi) noexcept {
    const u64v wide = reinterpret_cast<u64v>(x);
    const u64v even = (wide & kLow) * m;
    const u64v odd = (wide >> 32) * m;
    lo = reinterpret_cast<u32v>((even & kLow) | (odd << 32));
    hi = reinterpret_cast<u32v>((even >> 32) | (odd & kHigh));
}

}  // namespace

#if defined(__AVX512F__)

namespace {

// Same round as mulhilo() above, on raw AVX-512 registers: the even/odd products
// are merged with dword swaps instead of 64-bit shifts and masks.
inline void round16(__m512i& c0, __m512i& c1, __m512i& c2, __m512i& c3, __m512i m0, __m512i m1,
                    __m512i k0, __m512i k1) noexcept {
    const __m512i e0 = _mm512_mul_epu32(c0, m0);
    const __m512i o0 = _mm512_mul_epu32(_mm512_srli_epi64(c0, 32), m0);
    const __m512i e1 = _mm512_mul_epu32(c2, m1);
    const __m512i o1 = _mm512_mul_epu32(_mm512_srli_epi64(c2, 32), m1);
    const __m512i lo0 = _mm512_mask_shuffle_epi32(e0, 0xAAAA, o0, _MM_PERM_CDAB);
    const __m512i hi0 = _mm512_mask_shuffle_epi32(o0, 0x5555, e0, _MM_PERM_CDAB);
    const __m512i lo1 = _mm512_mask_shuffle_epi32(e1, 0xAAAA, o1, _MM_PERM_CDAB);
    const __m512i hi1 = _mm512_mask_shuffle_epi32(o1, 0x5555, e1, _MM_PERM_CDAB);
    c0 = _mm512_ternarylogic_epi32(hi1, c1, k0, 0x96);
    c1 = lo1;
    c2 = _mm512_ternarylogic_epi32(hi0, c3, k1, 0x96);
    c3 = lo0;
}

}  // namespace

void philox4x32_lanes(std::uint32_t word0, std::uint32_t first_word1, std::uint32_t word2,
                      std::uint32_t word3, Key key, std::uint32_t out[4][kLanes]) noexcept {
    const __m512i iota = _mm512_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15);
    const __m512i m0 = _mm512_set1_epi32(static_cast<int>(kMul0));
    const __m512i m1 = _mm512_set1_epi32(static_cast<int>(kMul1));
    __m512i c0[kGroups], c1[kGroups], c2[kGroups], c3[kGroups];
    for (int g = 0; g < kGroups; ++g) {
        c0[g] = _mm512_set1_epi32(static_cast<int>(word0));
        c1[g] = _mm512_add_epi32(
            iota, _mm512_set1_epi32(static_cast<int>(first_word1 + static_cast<std::uint32_t>(g * kWidth))));
        c2[g] = _mm512_set1_epi32(static_cast<int>(word2));
        c3[g] = _mm512_set1_epi32(static_cast<int>(word3));
    }
    std::uint32_t k0 = key[0];
    std::uint32_t k1 = key[1];
    for (int r = 0; r < kRounds; ++r) {
        if (r > 0) {
            k0 += kWeyl0;
            k1 += kWeyl1;
        }
        const __m512i vk0 = _mm512_set1_epi32(static_cast<int>(k0));
        const __m512i vk1 = _mm512_set1_epi32(static_cast<int>(k1));
        for (int g = 0; g < kGroups; ++g) round16(c0[g], c1[g], c2[g], c3[g], m0, m1, vk0, vk1);
    }
    for (int g = 0; g < kGroups; ++g) {
        _mm512_storeu_si512(out[0] + g * kWidth, c0[g]);
        _mm512_storeu_si512(out[1] + g * kWidth, c1[g]);
        _mm512_storeu_si512(out[2] + g * kWidth, c2[g]);
        _mm512_storeu_si512(out[3] + g * kWidth, c3[g]);
    }
}

std::uint32_t philox4x32_lanes_word0(std::uint32_t word0, std::uint32_t first_word1, std::uint32_t word2,
                                     std::uint32_t word3, Key key, std::uint32_t cut,
                                     std::uint32_t out[kLanes]) noexcept {
    const __m512i iota = _mm512_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15);
    const __m512i m0 = _mm512_set1_epi32(static_cast<int>(kMul0));
    const __m512i m1 = _mm512_set1_epi32(static_cast<int>(kMul1));
    __m512i c0[kGroups], c1[kGroups], c2[kGroups], c3[kGroups];
    for (int g = 0; g < kGroups; ++g) {
        c0[g] = _mm512_set1_epi32(static_cast<int>(word0));
        c1[g] = _mm512_add_epi32(
            iota, _mm512_set1_epi32(static_cast<int>(first_word1 + static_cast<std::uint32_t>(g * kWidth))));
        c2[g] = _mm512_set1_epi32(static_cast<int>(word2));
        c3[g] = _mm512_set1_epi32(static_cast<int>(word3));
    }
    std::uint32_t k0 = key[0];
    std::uint32_t k1 = key[1];
    for (int r = 0; r < kRounds; ++r) {
        if (r > 0) {
            k0 += kWeyl0;
            k1 += kWeyl1;
        }
        const __m512i vk0 = _mm512_set1_epi32(static_cast<int>(k0));
        const __m512i vk1 = _mm512_set1_epi32(static_cast<int>(k1));
        for (int g = 0; g < kGroups; ++g) round16(c0[g], c1[g], c2[g], c3[g], m0, m1, vk0, vk1);
    }
    const __m512i vcut = _mm512_set1_epi32(static_cast<int>(cut));
    std::uint32_t mask = 0;
    for (int g = 0; g < kGroups; ++g) {
        _mm512_storeu_si512(out + g * kWidth, c0[g]);
        mask |= static_cast<std::uint32_t>(_mm512_cmple_epu32_mask(c0[g], vcut)) << (g * kWidth);
    }
    return mask;
}

#else

void philox4x32_lanes(std::uint32_t word0, std::uint32_t first_word1, std::uint32_t word2,
                      std::uint32_t word3, Key key, std::uint32_t out[4][kLanes]) noexcept {
    // Independent groups are interleaved so the multiplier latency overlaps.
    u32v c0[kGroups], c1[kGroups], c2[kGroups], c3[kGroups];
    for (int g = 0; g < kGroups; ++g) {
        c0[g] = u32v{} + word0;
        for (int l = 0; l < kWidth; ++l)
            c1[g][l] = first_word1 + static_cast<std::uint32_t>(g * kWidth + l);
        c2[g] = u32v{} + word2;
        c3[g] = u32v{} + word3;
    }
    std::uint32_t k0 = key[0];
    std::uint32_t k1 = key[1];
    for (int r = 0; r < kRounds; ++r) {
        if (r > 0) {
            k0 += kWeyl0;
            k1 += kWeyl1;
        }
        for (int g = 0; g < kGroups; ++g) {
            u32v lo0, hi0, lo1, hi1;
            mulhilo(c0[g], kMul0, lo0, hi0);
            mulhilo(c2[g], kMul1, lo1, hi1);
            c0[g] = hi1 ^ c1[g] ^ k0;
            c1[g] = lo1;
            c2[g] = hi0 ^ c3[g] ^ k1;
            c3[g] = lo0;
        }
    }
    for (int g = 0; g < kGroups; ++g) {
        std::memcpy(out[0] + g * kWidth, &c0[g], sizeof(u32v));
        std::memcpy(out[1] + g * kWidth, &c1[g], sizeof(u32v));
        std::memcpy(out[2] + g * kWidth, &c2[g], sizeof(u32v));
        std::memcpy(out[3] + g * kWidth, &c3[g], sizeof(u32v));
    }
}

std::uint32_t philox4x32_lanes_word0(std::uint32_t word0, std::uint32_t first_word1, std::uint32_t word2,
                                     std::uint32_t word3, Key key, std::uint32_t cut,
                                     std::uint32_t out[kLanes]) noexcept {
    std::uint32_t words[4][kLanes];
    philox4x32_lanes(word0, first_word1, word2, word3, key, words);
    std::uint32_t mask = 0;
    for (int l = 0; l < kLanes; ++l) {
        out[l] = words[0][l];
        mask |= static_cast<std::uint32_t>(words[0][l] <= cut) << l;
    }
    return mask;
}

#endif

}  // namespace diffc::philox
