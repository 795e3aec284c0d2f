#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffc/diffusion.hpp"

namespace diffc {

/// Denoiser contract: x0_hat = E-style estimate of x0 from (x_t, t).
/// At t = 0 every implementation returns x_t unchanged.
class PriorModel {
  public:
    virtual ~PriorModel() = default;
    virtual int dimension() const noexcept = 0;
    virtual Vector predict_x0(std::span<const float> x_t, int t, const NoiseSchedule& s) const = 0;

    /// eps_hat = (x_t - sqrt(abar) x0_hat) / sqrt(1 - abar).
    Vector predict_eps(std::span<const float> x_t, int t, const NoiseSchedule& s) const;
};

/// One isotropic component N(mean, var I).
struct GaussianComponent {
    double weight = 1.0;
    std::vector<double> mean;
    double var = 1.0;
};

/// E[x0 | x_t] for x0 ~ N(m, v I): m + sqrt(abar) v / (abar v + 1 - abar) (x_t - sqrt(abar) m).
void component_posterior_mean(const GaussianComponent& c, std::span<const float> x_t, double alpha_bar,
                              std::span<double> out);

class GaussianPrior final : public PriorModel {
  public:
    GaussianPrior(std::vector<double> mean, double var);

    int dimension() const noexcept override { return static_cast<int>(c_.mean.size()); }
    Vector predict_x0(std::span<const float> x_t, int t, const NoiseSchedule& s) const override;

    const std::vector<double>& mean() const noexcept { return c_.mean; }
    double var() const noexcept { return c_.var; }
    const GaussianComponent& component() const noexcept { return c_; }

  private:
    GaussianComponent c_;
};

/// -log2 density of x_t under the exact marginal N(sqrt(abar) m, (abar v + 1 - abar) I).
double gaussian_nll_bits(const GaussianPrior& prior, const NoisySample& x_t, const NoiseSchedule& s);

class GmmPrior final : public PriorModel {
  public:
    /// Weights must be nonnegative and sum to 1 within 1e-9; variances positive;
    /// all means of one dimension.
    explicit GmmPrior(std::vector<GaussianComponent> components);

    int dimension() const noexcept override { return dim_; }
    Vector predict_x0(std::span<const float> x_t, int t, const NoiseSchedule& s) const override;

    /// Posterior component probabilities given x_t, via log-sum-exp.
    std::vector<double> responsibilities(std::span<const float> x_t, int t, const NoiseSchedule& s) const;

    /// sum_k gamma_k * component_posterior_mean_k, for caller-supplied gamma.
    Vector mix(std::span<const double> gamma, std::span<const float> x_t, int t, const NoiseSchedule& s) const;

    const std::vector<GaussianComponent>& components() const noexcept { return comps_; }

  private:
    std::vector<GaussianComponent> comps_;
    int dim_ = 0;
};

/// Plain-text prior files:
///   dimension <d>
///   components <K>
/// then per component, in order:
///   weight <w>
///   variance <v>
///   mean <m_1> ... <m_d>
/// Blank lines and lines starting with '#' are ignored. K = 1 loads as a
/// GaussianPrior, K > 1 as a GmmPrior.
std::unique_ptr<PriorModel> load_prior(const std::string& path);
std::unique_ptr<PriorModel> parse_prior(const std::string& text);
std::string format_prior(const std::vector<GaussianComponent>& components);
std::vector<GaussianComponent> prior_components(const PriorModel& prior);

}  // namespace diffc
