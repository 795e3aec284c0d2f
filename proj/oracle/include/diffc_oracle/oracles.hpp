#pragma once

// Independent reference computations used by the unit tests, the acceptance
// suite and `diffc selftest`. Nothing here is on the codec's data path.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffc/diffusion.hpp"
#include "diffc/priors.hpp"

namespace diffc::oracle {

/// Density of the sample selected by PFR truncated at N candidates, in d = 1
/// with p = N(0, 1) and q = N(mu, 1). Arrivals are scale-free, so the first
/// N - 1 normalized times are uniform on (0, 1) and the last is 1.
double truncated_pfr_density(double mu, std::uint64_t N, double z);

/// Probability mass of that law on each [edges[k], edges[k+1]).
std::vector<double> truncated_pfr_bins(double mu, std::uint64_t N, std::span<const double> edges);

/// N(mean, 1) mass on each [edges[k], edges[k+1]).
std::vector<double> normal_bins(double mean, std::span<const double> edges);

/// `bins` equal cells on [lo, hi] plus an open cell on each side.
std::vector<double> histogram_edges(double lo, double hi, int bins);
std::vector<double> histogram(std::span<const double> samples, std::span<const double> edges);

/// Half the L1 distance; inputs are normalized first.
double tv_distance(std::span<const double> a, std::span<const double> b);

/// KL in bits by 1-D Gauss-Kronrod quadrature per coordinate, summed.
double kl_bits_quadrature(const IsotropicGaussian& q, const IsotropicGaussian& p);

/// E[x0 | x_t] for a 1-D mixture prior, by quadrature over x0.
double posterior_mean_quadrature(const std::vector<GaussianComponent>& comps, double x_t, double alpha_bar);

/// Cumulative products recomputed from the stored betas with 50 significant digits.
std::vector<double> alpha_bars_extended(const NoiseSchedule& s);

struct BruteForceSchedule {
    std::vector<int> schedule;
    double cost = 0.0;
};

/// Minimum over every subset of intermediate grid nodes, costs summed from T forward.
BruteForceSchedule brute_force_schedule(const std::vector<int>& grid, std::span<const double> weights,
                                        int t_final);

struct OracleCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

using KlFn = std::function<double(const IsotropicGaussian&, const IsotropicGaussian&)>;

/// Checks a KL implementation against closed-form values and quadrature.
OracleCheck kl_oracle(const KlFn& kl);

/// The fast oracle suites run by selftest: Gaussian closed forms, RCC
/// enumeration, schedule brute force.
std::vector<OracleCheck> oracle_suites(const KlFn& kl);

}  // namespace diffc::oracle
