#pragma once

#include <span>
#include <string>
#include <vector>

namespace diffc {

/// Sample-space vectors are single precision; schedule arithmetic is double.
using Vector = std::vector<float>;

enum class ScheduleKind { linear };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Forward-process noise rates. betas are indexed 1..T, alpha_bars 0..T with
/// alpha_bar(0) == 1.
class NoiseSchedule {
  public:
    int steps() const noexcept { return static_cast<int>(betas_.size()); }
    double beta(int t) const;
    double alpha_bar(int t) const;

    std::span<const double> betas() const noexcept { return betas_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }

    ScheduleKind kind() const noexcept { return kind_; }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

    /// True when q(x_T) is close enough to N(0, I) for the codec's first step
    /// (alpha_bar(T) < 1e-3).
    bool reaches_noise() const noexcept;

    /// Canonical one-line description, e.g. "linear 1000 0.0001 0.02".
    std::string describe() const;

    friend NoiseSchedule build_schedule(ScheduleKind, int, double, double);

  private:
    NoiseSchedule() = default;

    ScheduleKind kind_ = ScheduleKind::linear;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

/// Builds a schedule. Throws ParameterError unless T >= 2 and
/// 0 < beta_start <= beta_end < 1, or if the products fail to decrease.
NoiseSchedule build_schedule(ScheduleKind kind, int T, double beta_start, double beta_end);

/// The default used throughout: linear betas 1e-4 .. 0.02 over T steps.
NoiseSchedule default_schedule(int T = 1000);

struct IsotropicGaussian {
    std::vector<double> mean;
    double std = 1.0;

    std::size_t dimension() const noexcept { return mean.size(); }
};

struct NoisySample {
    int t = 0;
    Vector x;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
NoisySample forward_marginal(std::span<const float> x0, int t, const NoiseSchedule& s,
                             std::span<const float> eps);

/// Affine coefficients of the skip-step posterior q(x_j | x_i, x0):
/// mean = from_xi * x_i + from_x0 * x0, with standard deviation `std`.
struct StepCoefficients {
    double from_xi = 0.0;
    double from_x0 = 0.0;
    double variance = 0.0;
    double std = 0.0;
};

/// Coefficients from the two cumulative products. Throws DegeneracyError
/// when the step has zero variance (abar_j == abar_i, or j = 0).
StepCoefficients step_coefficients(double alpha_bar_i, double alpha_bar_j);

/// q(x_j | x_i, x0) for 0 <= j < i.
IsotropicGaussian posterior(std::span<const float> x0, const NoisySample& x_i, int j,
                            const NoiseSchedule& s);

/// p(x_j | x_i): the posterior with the denoiser's estimate in place of x0.
IsotropicGaussian reverse_model_dist(std::span<const float> x0_hat, const NoisySample& x_i,
                                     int j, const NoiseSchedule& s);

/// KL(q || p) in bits for two isotropic Gaussians of identical std.
double kl_bits(const IsotropicGaussian& q, const IsotropicGaussian& p);

}  // namespace diffc
