#include "diffc/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "diffc/error.hpp"

namespace diffc {

std::string to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::linear:
            return "linear";
    }
    return "unknown";
}

ScheduleKind schedule_kind_from_string(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    throw ParameterError("unknown schedule kind '" + name + "'");
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps()) throw ParameterError("beta index " + std::to_string(t) + " outside 1..T");
    return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > steps())
        throw ParameterError("timestep " + std::to_string(t) + " outside 0..T");
    return alpha_bars_[static_cast<std::size_t>(t)];
}

bool NoiseSchedule::reaches_noise() const noexcept { return alpha_bars_.back() < 1e-3; }

std::string NoiseSchedule::describe() const {
    std::ostringstream out;
    out.precision(17);
    out << to_string(kind_) << ' ' << steps() << ' ' << beta_start_ << ' ' << beta_end_;
    return out.str();
}

NoiseSchedule build_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
    if (T < 2) throw ParameterError("schedule needs T >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ParameterError("betas must satisfy 0 < beta_start <= beta_end < 1");

    NoiseSchedule s;
    s.kind_ = kind;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.resize(static_cast<std::size_t>(T));
    s.alpha_bars_.resize(static_cast<std::size_t>(T) + 1);
    s.alpha_bars_[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.betas_[static_cast<std::size_t>(t - 1)] = beta;
        s.alpha_bars_[static_cast<std::size_t>(t)] = s.alpha_bars_[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
        if (!(s.alpha_bars_[static_cast<std::size_t>(t)] < s.alpha_bars_[static_cast<std::size_t>(t - 1)]))
            throw ParameterError("cumulative products do not decrease at t=" + std::to_string(t));
    }
    return s;
}

NoiseSchedule default_schedule(int T) { return build_schedule(ScheduleKind::linear, T, 1e-4, 0.02); }

NoisySample forward_marginal(std::span<const float> x0, int t, const NoiseSchedule& s,
                             std::span<const float> eps) {
    if (x0.size() != eps.size()) throw ShapeError("x0 and eps differ in dimension");
    const double ab = s.alpha_bar(t);
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    NoisySample out{t, Vector(x0.size())};
    for (std::size_t k = 0; k < x0.size(); ++k)
        out.x[k] = static_cast<float>(signal * x0[k] + noise * eps[k]);
    return out;
}

StepCoefficients step_coefficients(double alpha_bar_i, double alpha_bar_j) {
    const double denom = 1.0 - alpha_bar_i;
    const double r = alpha_bar_i / alpha_bar_j;
    StepCoefficients c;
    c.variance = (1.0 - r) * (1.0 - alpha_bar_j) / denom;
    if (!(denom > 0.0) || !(c.variance > 0.0) || !std::isfinite(c.variance))
        throw DegeneracyError("zero-variance step (abar_i=" + std::to_string(alpha_bar_i) +
                              ", abar_j=" + std::to_string(alpha_bar_j) + ")");
    c.from_xi = std::sqrt(r) * (1.0 - alpha_bar_j) / denom;
    c.from_x0 = std::sqrt(alpha_bar_j) * (1.0 - r) / denom;
    c.std = std::sqrt(c.variance);
    return c;
}

namespace {

IsotropicGaussian step_distribution(std::span<const float> x0, const NoisySample& x_i, int j,
                                    const NoiseSchedule& s) {
    if (j < 0 || j >= x_i.t)
        throw OrderingError("target step " + std::to_string(j) + " is not earlier than " +
                            std::to_string(x_i.t));
    if (x0.size() != x_i.x.size()) throw ShapeError("x0 and x_i differ in dimension");
    const StepCoefficients c = step_coefficients(s.alpha_bar(x_i.t), s.alpha_bar(j));
    IsotropicGaussian g;
    g.std = c.std;
    g.mean.resize(x0.size());
    for (std::size_t k = 0; k < x0.size(); ++k)
        g.mean[k] = c.from_xi * x_i.x[k] + c.from_x0 * x0[k];
    return g;
}

}  // namespace

IsotropicGaussian posterior(std::span<const float> x0, const NoisySample& x_i, int j,
                            const NoiseSchedule& s) {
    return step_distribution(x0, x_i, j, s);
}

IsotropicGaussian reverse_model_dist(std::span<const float> x0_hat, const NoisySample& x_i,
                                     int j, const NoiseSchedule& s) {
    return step_distribution(x0_hat, x_i, j, s);
}

double kl_bits(const IsotropicGaussian& q, const IsotropicGaussian& p) {
    if (q.std != p.std) throw UnsupportedPairError("KL is only defined here for equal-variance pairs");
    if (q.mean.size() != p.mean.size()) throw ShapeError("KL operands differ in dimension");
    double sq = 0.0;
    for (std::size_t k = 0; k < q.mean.size(); ++k) {
        const double d = q.mean[k] - p.mean[k];
        sq += d * d;
    }
    return sq / (2.0 * q.std * q.std) / std::numbers::ln2;
}

}  // namespace diffc
