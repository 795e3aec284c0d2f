#include <doctest.h>

#include <cmath>
#include <random>

#include "diffc/rcc.hpp"
#include "diffc_oracle/oracles.hpp"

using namespace diffc;

TEST_SUITE("oracles") {

TEST_CASE("truncated PFR law is a density") {
    const auto edges = oracle::histogram_edges(-10, 14, 48);
    for (double mu : {0.0, 1.0, 3.3}) {
        for (std::uint64_t N : {std::uint64_t{1}, std::uint64_t{2}, std::uint64_t{16}, std::uint64_t{1} << 12,
                                std::uint64_t{1} << 21}) {
            const auto bins = oracle::truncated_pfr_bins(mu, N, edges);
            double total = 0;
            for (double b : bins) total += b;
            CHECK(total == doctest::Approx(1.0).epsilon(1e-8));
        }
        // One candidate is a plain p-sample.
        CHECK(oracle::tv_distance(oracle::truncated_pfr_bins(mu, 1, edges), oracle::normal_bins(0.0, edges)) < 1e-9);
    }
    // Enough candidates recover q.
    CHECK(oracle::tv_distance(oracle::truncated_pfr_bins(2.0, std::uint64_t{1} << 24, edges),
                              oracle::normal_bins(2.0, edges)) < 1e-3);
}

TEST_CASE("truncated PFR law matches a direct simulation") {
    // Race 2^4 candidates with fresh arrivals per trial, independent of the codec's RNG.
    const double mu = 1.5;
    std::mt19937_64 g(77);
    std::normal_distribution<double> n(0.0, 1.0);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> picks;
    for (int trial = 0; trial < 200000; ++trial) {
        double t = 0, best = 1e300, z_best = 0;
        for (int k = 0; k < 16; ++k) {
            t += e(g);
            const double z = n(g);
            const double score = std::log(t) - mu * z;
            if (score < best) {
                best = score;
                z_best = z;
            }
        }
        picks.push_back(z_best);
    }
    const auto edges = oracle::histogram_edges(mu - 4, mu + 4, 32);
    CHECK(oracle::tv_distance(oracle::histogram(picks, edges), oracle::truncated_pfr_bins(mu, 16, edges)) < 0.01);
}

TEST_CASE("kl oracle accepts the implementation and rejects broken ones") {
    CHECK(oracle::kl_oracle(kl_bits).pass);
    const oracle::KlFn nats = [](const IsotropicGaussian& q, const IsotropicGaussian& p) {
        return kl_bits(q, p) * std::log(2.0);
    };
    const oracle::KlFn no_half = [](const IsotropicGaussian& q, const IsotropicGaussian& p) {
        return 2 * kl_bits(q, p);
    };
    const oracle::KlFn unscaled = [](const IsotropicGaussian& q, const IsotropicGaussian& p) {
        return kl_bits(q, p) * q.std * q.std;
    };
    CHECK_FALSE(oracle::kl_oracle(nats).pass);
    CHECK_FALSE(oracle::kl_oracle(no_half).pass);
    CHECK_FALSE(oracle::kl_oracle(unscaled).pass);
}

TEST_CASE("all oracle suites pass") {
    for (const auto& c : oracle::oracle_suites(kl_bits)) {
        INFO(c.name << ": " << c.detail);
        CHECK(c.pass);
    }
}

TEST_CASE("brute-force schedule on a tiny grid") {
    const std::vector<int> grid{10, 6, 3, 1};
    std::vector<double> w(16, 0.0);
    w[0 * 4 + 1] = 1;
    w[0 * 4 + 2] = 5;
    w[0 * 4 + 3] = 9;
    w[1 * 4 + 2] = 1;
    w[1 * 4 + 3] = 4;
    w[2 * 4 + 3] = 1;
    const auto r = oracle::brute_force_schedule(grid, w, 1);
    CHECK(r.cost == 3.0);
    CHECK(r.schedule == std::vector<int>{10, 6, 3, 1});
}

TEST_CASE("histogram and tv helpers") {
    const auto edges = oracle::histogram_edges(0, 1, 2);
    REQUIRE(edges.size() == 5);
    const std::vector<double> xs{-1, 0.25, 0.75, 0.8, 5};
    const auto h = oracle::histogram(xs, edges);
    CHECK(h == std::vector<double>{1, 1, 2, 1});
    CHECK(oracle::tv_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
    CHECK(oracle::tv_distance(std::vector<double>{2, 2}, std::vector<double>{1, 1}) == 0.0);
}

}  // TEST_SUITE
