#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "../../src/fastmath.hpp"
#include "diffc/error.hpp"
#include "diffc/philox.hpp"
#include "diffc/rcc.hpp"
#include "diffc_oracle/oracles.hpp"
#include "support.hpp"

using namespace diffc;

namespace {

constexpr std::uint64_t kStream = chunk_stream(3, 0);

WhitenedTarget scalar_target(double mu) { return WhitenedTarget{{mu}}; }

WhitenedTarget random_target(std::mt19937_64& g, int dim, double kl_bits) {
    std::normal_distribution<double> n(0.0, 1.0);
    WhitenedTarget t{std::vector<double>(static_cast<std::size_t>(dim))};
    for (auto& m : t.mu) m = n(g);
    const double scale = std::sqrt(kl_bits / t.kl_bits());
    for (auto& m : t.mu) m *= scale;
    return t;
}

}  // namespace

TEST_SUITE("rcc") {

TEST_CASE("philox known-answer vectors") {
    using philox::philox4x32;
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == philox::Counter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
          philox::Counter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
          philox::Counter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("batched philox equals the scalar kernel") {
    std::uint32_t out[4][philox::kLanes];
    const philox::Key key{0x1234567u, 0x89abcdefu};
    for (std::uint32_t first : {0u, 31u, 0xffffffe0u, 0xfffffff0u}) {
        philox::philox4x32_lanes(7, first, 9, 0x80000001u, key, out);
        for (int l = 0; l < philox::kLanes; ++l) {
            const auto w = philox::philox4x32({7, first + static_cast<std::uint32_t>(l), 9, 0x80000001u}, key);
            for (int q = 0; q < 4; ++q) CHECK(out[q][l] == w[static_cast<std::size_t>(q)]);
        }
    }
}

TEST_CASE("word-0 kernel and its lane mask") {
    std::uint32_t out[philox::kLanes];
    const philox::Key key{0x1234567u, 0x89abcdefu};
    for (std::uint32_t cut : {0u, 0x40000000u, 0xfffffffeu, 0xffffffffu}) {
        for (std::uint32_t first : {0u, 0xfffffff0u}) {
            const auto mask = philox::philox4x32_lanes_word0(0, first, 5, 6, key, cut, out);
            for (int l = 0; l < philox::kLanes; ++l) {
                const auto w = philox::philox4x32({0, first + static_cast<std::uint32_t>(l), 5, 6}, key);
                CHECK(out[l] == w[0]);
                CHECK(((mask >> l) & 1u) == (w[0] <= cut ? 1u : 0u));
            }
        }
    }
}

TEST_CASE("uniform conversion stays inside the open interval") {
    CHECK(philox::to_unit(0) > 0.0);
    CHECK(philox::to_unit(0xffffffffu) < 1.0);
    CHECK(std::isfinite(philox::max_radius()));
}

TEST_CASE("fast scoring math tracks libm") {
    std::mt19937_64 g(44);
    for (int k = 0; k < 200000; ++k) {
        const double u = philox::to_unit(static_cast<std::uint32_t>(g()));
        CHECK(std::abs(fastmath::log(u) - std::log(u)) <= 1e-14 * std::max(1.0, std::abs(std::log(u))));
        double c = 0, s = 0;
        fastmath::sincos_2pi(u, c, s);
        CHECK(std::abs(c - std::cos(2 * std::numbers::pi * u)) < 1e-12);
        CHECK(std::abs(s - std::sin(2 * std::numbers::pi * u)) < 1e-12);
    }
}

TEST_CASE("candidates are deterministic and distinct") {
    const SharedRandomness rng{99};
    CHECK(candidate(rng, kStream, 5, 7) == candidate(rng, kStream, 5, 7));
    CHECK(candidate(rng, kStream, 0, 7) != candidate(rng, kStream, 1, 7));
    CHECK(candidate(rng, kStream, 0, 7) != candidate(rng, kStream + 1, 0, 7));
    CHECK(candidate(rng, kStream, 0, 7) != candidate(SharedRandomness{100}, kStream, 0, 7));
    // A longer candidate extends a shorter one.
    const auto a = candidate(rng, kStream, 3, 5);
    const auto b = candidate(rng, kStream, 3, 12);
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
}

TEST_CASE("candidates are standard normal") {
    const SharedRandomness rng{1};
    test::Moments m;
    double m3 = 0, m4 = 0;
    for (std::uint32_t n = 0; n < 62500; ++n)
        for (float z : candidate(rng, kStream, n, 16)) {
            m.add(z);
            m3 += static_cast<double>(z) * z * z;
            m4 += static_cast<double>(z) * z * z * z;
        }
    REQUIRE(m.n == 1000000);
    CHECK(std::abs(m.mean) < 0.005);
    CHECK(std::abs(m.variance() - 1.0) < 0.005);
    CHECK(std::abs(m3 / 1e6) < 0.015);
    CHECK(std::abs(m4 / 1e6 - 3.0) < 0.03);
}

TEST_CASE("arrivals increase and have unit rate") {
    const SharedRandomness rng{8};
    const Arrivals arr(rng, kArrivalBit | kStream, 1u << 16);
    CHECK(arr.count() == 1u << 16);
    std::vector<double> times(arr.block_size());
    double prev = 0.0;
    double last = 0.0;
    for (std::uint64_t j = 0; j < arr.blocks(); ++j) {
        CHECK(arr.block_start(j) == doctest::Approx(prev).epsilon(1e-12));
        arr.block_times(j, times);
        for (double t : times) {
            CHECK(t > prev);
            prev = t;
        }
        last = times.back();
    }
    // Gamma(N, 1): mean N, sd sqrt(N).
    CHECK(std::abs(last - 65536.0) < 4 * 256.0);
    std::vector<double> again(arr.block_size());
    arr.block_times(3, again);
    arr.block_times(3, times);
    CHECK(again == times);
}

TEST_CASE("identical distributions select index zero") {
    const SharedRandomness rng{77};
    for (int b : {1, 4, 12, 20}) CHECK(pfr_encode(WhitenedTarget{{0.0, 0.0, 0.0}}, b, rng, kStream).index == 0);
}

TEST_CASE("selected candidates score high among 256") {
    // For mu = 3 (6.5 bits) the selected z clears the 90th percentile of the
    // candidates' scores about as often as the truncated law predicts for the
    // normal quantile 1.2816: 0.930, against 0.957 for an exact q-sample.
    int hits = 0;
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        const SharedRandomness rng{seed};
        const auto code = pfr_encode(scalar_target(3.0), 8, rng, kStream);
        std::vector<double> scores(256);
        for (std::uint32_t n = 0; n < 256; ++n) scores[n] = 3.0 * candidate(rng, kStream, n, 1)[0];
        const double chosen = scores[code.index];
        std::nth_element(scores.begin(), scores.begin() + 230, scores.end());
        if (chosen >= scores[230]) ++hits;
        CHECK(code.index == pfr_encode_exhaustive(scalar_target(3.0), 8, rng, kStream).index);
    }
    const auto edges = oracle::histogram_edges(1.2816, 1.2817, 1);
    const auto law = oracle::truncated_pfr_bins(3.0, 256, edges);
    const double above = 1.0 - law[0];
    CHECK(above == doctest::Approx(0.930).epsilon(0.002));
    CHECK(std::abs(hits / 1000.0 - above) < 0.03);
    CHECK(hits >= 900);
}

TEST_CASE("decoded samples follow the target for a small KL") {
    // mu = 1 carries 0.72 bits, so 2^12 candidates leave the truncated law
    // essentially equal to q. Coarse cells keep sampling noise near 0.007.
    const double mu = 1.0;
    const std::uint64_t N = 1u << 12;
    std::vector<double> samples;
    samples.reserve(20000);
    for (std::uint64_t seed = 0; seed < 20000; ++seed) {
        const SharedRandomness rng{seed + 500000};
        const auto code = pfr_encode(scalar_target(mu), 12, rng, kStream);
        samples.push_back(pfr_decode(code, rng, kStream, 1)[0]);
    }
    const auto edges = oracle::histogram_edges(mu - 4, mu + 4, 10);
    const auto h = oracle::histogram(samples, edges);
    const auto law = oracle::truncated_pfr_bins(mu, N, edges);
    CHECK(oracle::tv_distance(h, law) < 0.01);
    CHECK(oracle::tv_distance(law, oracle::normal_bins(mu, edges)) < 1e-4);
}

TEST_CASE("decode returns the encoder's candidate") {
    auto& g = test::rng();
    const SharedRandomness rng{4242};
    const auto t = random_target(g, 9, 6.0);
    const auto code = pfr_encode(t, 11, rng, kStream);
    CHECK(code.budget_bits == 11);
    CHECK(pfr_decode(code, rng, kStream, 9) == candidate(rng, kStream, code.index, 9));

    const auto plain = pfr_decode(RccChunkCode{0, 11}, rng, kStream, 9);
    CHECK(plain == candidate(rng, kStream, 0, 9));

    RccChunkCode flipped = code;
    flipped.index ^= 1u << 4;
    CHECK(pfr_decode(flipped, rng, kStream, 9) != pfr_decode(code, rng, kStream, 9));

    CHECK_THROWS_AS(pfr_decode(RccChunkCode{1u << 11, 11}, rng, kStream, 9), MalformedCodeError);
    CHECK_THROWS_AS(pfr_decode(RccChunkCode{0, 0}, rng, kStream, 9), MalformedCodeError);
}

TEST_CASE("pruned search equals exhaustive search") {
    std::mt19937_64 g(2);
    std::uniform_real_distribution<double> kl(0.5, 14.0);
    for (int dim : {1, 2, 3, 5, 16, 33, 64}) {
        for (int trial = 0; trial < 6; ++trial) {
            const auto t = random_target(g, dim, kl(g));
            const int b = 6 + trial * 2;
            const SharedRandomness rng{g()};
            const auto fast = pfr_encode(t, b, rng, kStream);
            CHECK(fast.index == pfr_encode_exhaustive(t, b, rng, kStream).index);
            for (int w : {2, 3, 8}) CHECK(pfr_encode(t, b, rng, kStream, w).index == fast.index);
        }
    }
}

TEST_CASE("larger budgets bring the sample closer to the target mean") {
    // Average over seeds of ||z - mu||^2 for an 8-bit target in 16 dimensions.
    // It falls while b is below about I + 4; past that the truncated law
    // overshoots and E||z - mu||^2 climbs back to d (next test case).
    auto& g = test::rng();
    const auto t = random_target(g, 16, 8.0);
    double prev = std::numeric_limits<double>::infinity();
    for (int b : {4, 8, 12}) {
        double sum = 0;
        for (std::uint64_t seed = 0; seed < 500; ++seed) {
            const SharedRandomness rng{seed * 7 + 1};
            const auto z = pfr_decode(pfr_encode(t, b, rng, kStream), rng, kStream, 16);
            for (int k = 0; k < 16; ++k) sum += (z[k] - t.mu[k]) * (z[k] - t.mu[k]);
        }
        const double avg = sum / 500;
        CHECK(avg <= prev);
        prev = avg;
    }
    CHECK(prev == doctest::Approx(16.0).epsilon(0.1));
}

TEST_CASE("fidelity is not monotone past the KL") {
    // Exact d = 1 law for an 8-bit target: E(z - mu)^2 dips below the
    // q-value 1 near b = 12 and returns toward 1 as b grows.
    const double mu = std::sqrt(16 * std::log(2.0));
    auto second_moment = [&](int b) {
        double s = 0, mass = 0;
        const double h = 0.004;
        for (double z = mu - 9; z < mu + 9; z += h) {
            const double p = oracle::truncated_pfr_density(mu, std::uint64_t{1} << b, z) * h;
            s += p * (z - mu) * (z - mu);
            mass += p;
        }
        return s / mass;
    };
    const double m8 = second_moment(8), m12 = second_moment(12), m16 = second_moment(16), m20 = second_moment(20);
    CHECK(m8 > m12);
    CHECK(m12 < 0.8);
    CHECK(m16 > m12);
    CHECK(m20 > m16);
    CHECK(m20 < 1.0);
}

TEST_CASE("chunk splitting") {
    const SharedRandomness rng{3};
    // ||mu||^2 = 100 ln 2 carries exactly 50 bits.
    std::vector<double> mu(10, std::sqrt(10 * std::log(2.0)));
    const auto a = split_chunks(mu, 16.0, rng, permutation_stream(1));
    CHECK(a.chunks() == 3);
    std::vector<std::uint32_t> sorted = a.perm;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t k = 0; k < 10; ++k) CHECK(sorted[k] == k);
    CHECK(a.bounds.front() == 0);
    CHECK(a.bounds.back() == 10);
    CHECK(split_chunks(mu, 16.0, rng, permutation_stream(1)).perm == a.perm);

    std::vector<double> small(10, 0.1);
    const auto one = split_chunks(small, 16.0, rng, permutation_stream(1));
    CHECK(one.chunks() == 1);
    CHECK(one.chunk(0).size() == 10);

    // Never more chunks than dimensions.
    std::vector<double> big(2, 40.0);
    CHECK(split_chunks(big, 1.0, rng, permutation_stream(1)).chunks() == 2);
    CHECK_THROWS_AS(split_chunks(mu, 0.0, rng, permutation_stream(1)), ParameterError);
}

TEST_CASE("random splits share the KL evenly") {
    std::mt19937_64 g(1000);
    std::normal_distribution<double> n(0.0, 1.0);
    int good = 0, total = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> mu(1000);
        for (auto& m : mu) m = 0.3 * n(g);
        const WhitenedTarget t{mu};
        const SharedRandomness rng{g()};
        const auto a = split_chunks(mu, 16.0, rng, permutation_stream(2));
        const double share = t.kl_bits() / a.chunks();
        for (int c = 0; c < a.chunks(); ++c) {
            double s = 0;
            for (auto i : a.chunk(c)) s += mu[i] * mu[i];
            const double kl = s / (2 * std::log(2.0));
            good += std::abs(kl - share) <= 0.2 * share;
            ++total;
        }
    }
    CHECK(good >= 0.95 * total);
}

TEST_CASE("selection-law oracle") {
    const SharedRandomness rng{5};
    const auto zero = oracle_selection_law(WhitenedTarget{{0.0}}, 6, rng, kStream);
    CHECK(zero[0] == 1.0);
    CHECK_THROWS_AS(oracle_selection_law(WhitenedTarget{{1.0}}, 15, rng, kStream), ParameterError);

    const auto law = oracle_selection_law(WhitenedTarget{{0.8, -0.3}}, 6, rng, kStream, 20000);
    double total = 0;
    for (double p : law) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("two-candidate race law matches simulation") {
    // Find a seed where candidate 1 outweighs candidate 0, then race 10^6
    // independent arrival pairs with those weights.
    const WhitenedTarget t{{1.3}};
    std::uint64_t seed = 0;
    double w0 = 0, w1 = 0;
    for (;; ++seed) {
        const SharedRandomness rng{seed};
        w0 = std::exp(1.3 * candidate(rng, kStream, 0, 1)[0]);
        w1 = std::exp(1.3 * candidate(rng, kStream, 1, 1)[0]);
        if (w1 > 1.5 * w0 && w1 < 4 * w0) break;
    }
    const auto law = oracle_selection_law(t, 1, SharedRandomness{seed}, kStream);
    std::mt19937_64 g(31);
    std::exponential_distribution<double> e(1.0);
    int zero = 0;
    const int R = 1000000;
    for (int r = 0; r < R; ++r) {
        const double t0 = e(g);
        const double t1 = t0 + e(g);
        zero += (t0 / w0 <= t1 / w1);
    }
    const double p = static_cast<double>(zero) / R;
    const double se = std::sqrt(p * (1 - p) / R);
    CHECK(std::abs(law[0] - p) < 3 * se);
    CHECK(law[0] + law[1] == doctest::Approx(1.0));
}

TEST_CASE("budget validation") {
    const SharedRandomness rng{1};
    CHECK_THROWS_AS(pfr_encode(WhitenedTarget{{1.0}}, 0, rng, kStream), ParameterError);
    CHECK_THROWS_AS(pfr_encode(WhitenedTarget{{1.0}}, kMaxBudgetBits + 1, rng, kStream), ParameterError);
}

}  // TEST_SUITE
