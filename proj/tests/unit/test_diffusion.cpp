#include <doctest.h>

#include <cmath>
#include <random>

#include "diffc/diffusion.hpp"
#include "diffc/error.hpp"
#include "diffc_oracle/oracles.hpp"
#include "support.hpp"

using namespace diffc;

TEST_SUITE("diffusion-math") {

TEST_CASE("two-step linear schedule is a direct product") {
    const auto s = build_schedule(ScheduleKind::linear, 2, 0.1, 0.1);
    REQUIRE(s.steps() == 2);
    CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.beta(2) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bar(2) == doctest::Approx(0.81).epsilon(1e-15));
    // Far from pure noise: the codec refuses such schedules, the math does not.
    CHECK_FALSE(s.reaches_noise());
}

TEST_CASE("default schedule matches an extended-precision recomputation") {
    const auto s = default_schedule(1000);
    const auto ext = oracle::alpha_bars_extended(s);
    REQUIRE(ext.size() == 1001);
    for (int t = 0; t <= 1000; ++t) CHECK(std::abs(s.alpha_bar(t) - ext[t]) <= 1e-12 * ext[t]);
    CHECK(s.alpha_bar(1000) == doctest::Approx(4.04e-5).epsilon(0.01));
    for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.reaches_noise());
    CHECK(s.describe() == "linear 1000 0.0001 0.02");
}

TEST_CASE("schedule parameters are validated") {
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 2, 0.1, 1.5), ParameterError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 1, 0.1, 0.1), ParameterError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 10, 0.0, 0.1), ParameterError);
    CHECK_THROWS_AS(build_schedule(ScheduleKind::linear, 10, 0.2, 0.1), ParameterError);
    CHECK_THROWS_AS(schedule_kind_from_string("cosine"), ParameterError);
}

TEST_CASE("forward marginal") {
    const auto s = build_schedule(ScheduleKind::linear, 2, 0.1, 0.1);
    const Vector x0{2.0f};
    const Vector eps{1.0f};
    const auto x = forward_marginal(x0, 2, s, eps);
    CHECK(x.t == 2);
    CHECK(x.x[0] == doctest::Approx(0.9 * 2 + std::sqrt(0.19)).epsilon(1e-6));

    const Vector ones{1.0f, 1.0f};
    const Vector e2{3.0f, -7.0f};
    CHECK(forward_marginal(ones, 0, s, e2).x == ones);

    const Vector zero{0.0f, 0.0f};
    const auto z = forward_marginal(zero, 1, s, e2);
    CHECK(z.x[0] == doctest::Approx(std::sqrt(0.1) * 3.0).epsilon(1e-6));
    CHECK(z.x[1] == doctest::Approx(std::sqrt(0.1) * -7.0).epsilon(1e-6));

    CHECK_THROWS_AS(forward_marginal(ones, 1, s, eps), ShapeError);
}

TEST_CASE("posterior ordering and degeneracy") {
    const auto s = default_schedule(100);
    const Vector x0{0.5f};
    const NoisySample xi{50, {0.2f}};
    CHECK_THROWS_AS(posterior(x0, xi, 50, s), OrderingError);
    CHECK_THROWS_AS(posterior(x0, xi, 60, s), OrderingError);
    CHECK_THROWS_AS(step_coefficients(0.5, 0.5), DegeneracyError);
    CHECK_THROWS_AS(posterior(x0, xi, 0, s), DegeneracyError);
}

TEST_CASE("posterior matches a Monte-Carlo conditional of the forward process") {
    // x_j ~ q(x_j | x0), x_i | x_j ~ N(sqrt(ai/aj) x_j, 1 - ai/aj); weight by the
    // density of the observed x_i = 1.
    const double ai = 0.5, aj = 0.9, x0 = 1.0, xi = 1.0;
    const auto c = step_coefficients(ai, aj);
    const double mean = c.from_xi * xi + c.from_x0 * x0;

    std::mt19937_64 g(71);
    std::normal_distribution<double> n(0.0, 1.0);
    const double r = ai / aj;
    double sw = 0, sw2 = 0, s1 = 0, s2 = 0;
    std::vector<std::pair<double, double>> draws;
    draws.reserve(1000000);
    for (int k = 0; k < 1000000; ++k) {
        const double xj = std::sqrt(aj) * x0 + std::sqrt(1 - aj) * n(g);
        const double d = xi - std::sqrt(r) * xj;
        const double w = std::exp(-0.5 * d * d / (1 - r));
        sw += w;
        sw2 += w * w;
        s1 += w * xj;
        s2 += w * xj * xj;
        draws.emplace_back(w, xj);
    }
    const double m = s1 / sw;
    const double v = s2 / sw - m * m;
    const double ess = sw * sw / sw2;
    // Standard errors of the self-normalized estimates.
    double vm = 0, vv = 0;
    for (const auto& [w, xj] : draws) {
        const double dm = xj - m;
        vm += w * w * dm * dm;
        vv += w * w * (dm * dm - v) * (dm * dm - v);
    }
    const double se_m = std::sqrt(vm) / sw;
    const double se_v = std::sqrt(vv) / sw;
    CHECK(ess > 1e5);
    CHECK(std::abs(m - mean) < 3 * se_m);
    CHECK(std::abs(v - c.variance) < 3 * se_v);
}

TEST_CASE("zero inputs give a zero posterior mean") {
    const auto s = default_schedule(1000);
    const Vector zero{0.0f, 0.0f, 0.0f};
    const auto q = posterior(zero, NoisySample{400, zero}, 300, s);
    for (double m : q.mean) CHECK(m == 0.0);
    CHECK(q.std == doctest::Approx(step_coefficients(s.alpha_bar(400), s.alpha_bar(300)).std));
}

TEST_CASE("reverse model with a perfect denoiser is the posterior") {
    const auto s = default_schedule(1000);
    auto& g = test::rng();
    const Vector x0 = test::gaussian_vector(g, 8);
    const NoisySample xi{700, test::gaussian_vector(g, 8)};
    const auto q = posterior(x0, xi, 650, s);
    const auto p = reverse_model_dist(x0, xi, 650, s);
    CHECK(q.mean == p.mean);
    CHECK(q.std == p.std);

    const Vector other = test::gaussian_vector(g, 8);
    CHECK(reverse_model_dist(other, xi, 650, s).std == q.std);
}

TEST_CASE("reverse model responds to the estimate through one coefficient") {
    const auto s = default_schedule(1000);
    auto& g = test::rng();
    const Vector x0 = test::gaussian_vector(g, 4);
    const NoisySample xi{500, test::gaussian_vector(g, 4)};
    const double ai = s.alpha_bar(500), aj = s.alpha_bar(420);
    const double r = ai / aj;
    const double expected = std::sqrt(aj) * (1 - r) / (1 - ai);
    const float delta = 0.25f;
    Vector moved = x0;
    moved[2] += delta;
    const auto a = reverse_model_dist(x0, xi, 420, s);
    const auto b = reverse_model_dist(moved, xi, 420, s);
    for (int k = 0; k < 4; ++k) {
        const double diff = b.mean[k] - a.mean[k];
        if (k == 2)
            CHECK(diff == doctest::Approx(expected * delta).epsilon(1e-9));
        else
            CHECK(diff == 0.0);
    }
}

TEST_CASE("kl in bits") {
    const IsotropicGaussian a{{0.3, -1.0}, 0.7};
    CHECK(kl_bits(a, a) == 0.0);
    CHECK(kl_bits(IsotropicGaussian{{1.0}, 1.0}, IsotropicGaussian{{0.0}, 1.0}) ==
          doctest::Approx(0.5 / std::log(2.0)).epsilon(1e-12));
    CHECK(0.5 / std::log(2.0) == doctest::Approx(0.72135).epsilon(1e-5));
    CHECK_THROWS_AS(kl_bits(a, IsotropicGaussian{{0.3, -1.0}, 0.8}), UnsupportedPairError);
    CHECK_THROWS_AS(kl_bits(a, IsotropicGaussian{{0.3}, 0.7}), ShapeError);

    std::mt19937_64 g(16);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        IsotropicGaussian q, p;
        q.std = p.std = 0.2 + std::abs(n(g));
        for (int k = 0; k < 16; ++k) {
            q.mean.push_back(n(g));
            p.mean.push_back(n(g));
        }
        const double exact = kl_bits(q, p);
        CHECK(exact >= 0.0);
        CHECK(std::abs(exact - oracle::kl_bits_quadrature(q, p)) <= 1e-6 * exact);
    }
}

TEST_CASE("chaining a skip-step posterior preserves the forward marginal") {
    // x_i ~ q(x_i | x0) then x_j ~ q(x_j | x_i, x0) must be distributed as q(x_j | x0).
    const auto s = default_schedule(1000);
    const Vector x0{0.8f};
    std::mt19937_64 g(3);
    std::normal_distribution<double> n(0.0, 1.0);
    test::Moments mom;
    for (int k = 0; k < 200000; ++k) {
        const Vector e{static_cast<float>(n(g))};
        const auto xi = forward_marginal(x0, 600, s, e);
        const auto q = posterior(x0, xi, 250, s);
        mom.add(q.mean[0] + q.std * n(g));
    }
    const double aj = s.alpha_bar(250);
    CHECK(std::abs(mom.mean - std::sqrt(aj) * 0.8) < 3 * mom.se());
    const double var_se = (1 - aj) * std::sqrt(2.0 / static_cast<double>(mom.n));
    CHECK(std::abs(mom.variance() - (1 - aj)) < 3 * var_se);
}

}  // TEST_SUITE
