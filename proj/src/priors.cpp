#include "diffc/priors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "diffc/error.hpp"

namespace diffc {

namespace {

void check_input(std::span<const float> x_t, int dim, int t, const NoiseSchedule& s) {
    if (static_cast<int>(x_t.size()) != dim)
        throw ShapeError("sample has dimension " + std::to_string(x_t.size()) + ", prior expects " +
                         std::to_string(dim));
    if (t < 0 || t > s.steps()) throw ParameterError("timestep " + std::to_string(t) + " outside 0..T");
}

void check_component(const GaussianComponent& c) {
    if (!(c.var > 0.0) || !std::isfinite(c.var)) throw ParameterError("component variance must be positive");
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight)) throw ParameterError("component weight must be >= 0");
    for (double m : c.mean)
        if (!std::isfinite(m)) throw ParameterError("component mean is not finite");
}

Vector to_vector(std::span<const double> v) {
    Vector out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = static_cast<float>(v[k]);
    return out;
}

}  // namespace

Vector PriorModel::predict_eps(std::span<const float> x_t, int t, const NoiseSchedule& s) const {
    if (t < 1) throw ParameterError("noise estimate needs t >= 1");
    const Vector x0 = predict_x0(x_t, t, s);
    const double ab = s.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Vector eps(x_t.size());
    for (std::size_t k = 0; k < x_t.size(); ++k)
        eps[k] = static_cast<float>((x_t[k] - a * x0[k]) / b);
    return eps;
}

void component_posterior_mean(const GaussianComponent& c, std::span<const float> x_t, double alpha_bar,
                              std::span<double> out) {
    const double a = std::sqrt(alpha_bar);
    const double gain = a * c.var / (alpha_bar * c.var + 1.0 - alpha_bar);
    for (std::size_t k = 0; k < x_t.size(); ++k) out[k] = c.mean[k] + gain * (x_t[k] - a * c.mean[k]);
}

GaussianPrior::GaussianPrior(std::vector<double> mean, double var) : c_{1.0, std::move(mean), var} {
    if (c_.mean.empty()) throw ShapeError("prior needs dimension >= 1");
    check_component(c_);
}

Vector GaussianPrior::predict_x0(std::span<const float> x_t, int t, const NoiseSchedule& s) const {
    check_input(x_t, dimension(), t, s);
    if (t == 0) return Vector(x_t.begin(), x_t.end());
    std::vector<double> out(x_t.size());
    component_posterior_mean(c_, x_t, s.alpha_bar(t), out);
    return to_vector(out);
}

double gaussian_nll_bits(const GaussianPrior& prior, const NoisySample& x_t, const NoiseSchedule& s) {
    check_input(x_t.x, prior.dimension(), x_t.t, s);
    const double ab = s.alpha_bar(x_t.t);
    const double a = std::sqrt(ab);
    const double var = ab * prior.var() + 1.0 - ab;
    double sq = 0.0;
    for (std::size_t k = 0; k < x_t.x.size(); ++k) {
        const double d = x_t.x[k] - a * prior.mean()[k];
        sq += d * d;
    }
    const double d = static_cast<double>(x_t.x.size());
    const double nats = 0.5 * d * std::log(2.0 * std::numbers::pi * var) + sq / (2.0 * var);
    return nats / std::numbers::ln2;
}

GmmPrior::GmmPrior(std::vector<GaussianComponent> components) : comps_(std::move(components)) {
    if (comps_.empty()) throw ParameterError("mixture needs at least one component");
    dim_ = static_cast<int>(comps_[0].mean.size());
    if (dim_ < 1) throw ShapeError("prior needs dimension >= 1");
    double total = 0.0;
    for (const auto& c : comps_) {
        if (static_cast<int>(c.mean.size()) != dim_) throw ShapeError("component means differ in dimension");
        check_component(c);
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ParameterError("mixture weights do not sum to 1");
}

std::vector<double> GmmPrior::responsibilities(std::span<const float> x_t, int t, const NoiseSchedule& s) const {
    check_input(x_t, dim_, t, s);
    const double ab = s.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double d = static_cast<double>(dim_);
    std::vector<double> logp(comps_.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < comps_.size(); ++k) {
        const auto& c = comps_[k];
        if (c.weight == 0.0) {
            logp[k] = -std::numeric_limits<double>::infinity();
            continue;
        }
        const double var = ab * c.var + 1.0 - ab;
        double sq = 0.0;
        for (int i = 0; i < dim_; ++i) {
            const double r = x_t[static_cast<std::size_t>(i)] - a * c.mean[static_cast<std::size_t>(i)];
            sq += r * r;
        }
        logp[k] = std::log(c.weight) - 0.5 * d * std::log(var) - sq / (2.0 * var);
        top = std::max(top, logp[k]);
    }
    double z = 0.0;
    for (double& l : logp) {
        l = std::exp(l - top);
        z += l;
    }
    for (double& l : logp) {
        l /= z;
        if (!std::isfinite(l)) throw DegeneracyError("mixture responsibility is not finite");
    }
    return logp;
}

Vector GmmPrior::mix(std::span<const double> gamma, std::span<const float> x_t, int t,
                     const NoiseSchedule& s) const {
    check_input(x_t, dim_, t, s);
    if (gamma.size() != comps_.size()) throw ShapeError("one responsibility per component expected");
    if (t == 0) return Vector(x_t.begin(), x_t.end());
    const double ab = s.alpha_bar(t);
    std::vector<double> acc(x_t.size(), 0.0);
    std::vector<double> part(x_t.size());
    for (std::size_t k = 0; k < comps_.size(); ++k) {
        if (gamma[k] == 0.0) continue;
        component_posterior_mean(comps_[k], x_t, ab, part);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gamma[k] * part[i];
    }
    return to_vector(acc);
}

Vector GmmPrior::predict_x0(std::span<const float> x_t, int t, const NoiseSchedule& s) const {
    check_input(x_t, dim_, t, s);
    if (t == 0) return Vector(x_t.begin(), x_t.end());
    return mix(responsibilities(x_t, t, s), x_t, t, s);
}

std::vector<GaussianComponent> prior_components(const PriorModel& prior) {
    if (const auto* g = dynamic_cast<const GaussianPrior*>(&prior)) return {g->component()};
    if (const auto* m = dynamic_cast<const GmmPrior*>(&prior)) return m->components();
    throw ParameterError("prior has no Gaussian-component description");
}

std::unique_ptr<PriorModel> parse_prior(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto next = [&](const std::string& key) -> std::istringstream {
        while (std::getline(in, line)) {
            ++line_no;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            std::istringstream fields(line);
            std::string got;
            fields >> got;
            if (got != key)
                throw FormatError("prior line " + std::to_string(line_no) + ": expected '" + key + "', got '" +
                                  got + "'");
            return fields;
        }
        throw FormatError("prior file ended before '" + key + "'");
    };
    auto number = [&](std::istringstream& fields, const std::string& key) {
        double v = 0.0;
        if (!(fields >> v)) throw FormatError("prior line " + std::to_string(line_no) + ": bad value for " + key);
        return v;
    };

    auto f = next("dimension");
    const double dim = number(f, "dimension");
    f = next("components");
    const double count = number(f, "components");
    if (dim < 1 || dim != std::floor(dim) || dim > 1e8) throw FormatError("bad prior dimension");
    if (count < 1 || count != std::floor(count) || count > 1e6) throw FormatError("bad component count");

    std::vector<GaussianComponent> comps(static_cast<std::size_t>(count));
    for (auto& c : comps) {
        f = next("weight");
        c.weight = number(f, "weight");
        f = next("variance");
        c.var = number(f, "variance");
        f = next("mean");
        c.mean.resize(static_cast<std::size_t>(dim));
        for (double& m : c.mean) m = number(f, "mean");
        std::string extra;
        if (f >> extra) throw FormatError("prior line " + std::to_string(line_no) + ": too many mean values");
    }
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first != std::string::npos && line[first] != '#')
            throw FormatError("prior line " + std::to_string(line_no) + ": trailing content");
    }
    if (comps.size() == 1) {
        if (std::abs(comps[0].weight - 1.0) > 1e-9) throw ParameterError("single component must have weight 1");
        return std::make_unique<GaussianPrior>(comps[0].mean, comps[0].var);
    }
    return std::make_unique<GmmPrior>(std::move(comps));
}

std::unique_ptr<PriorModel> load_prior(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open prior file '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_prior(text.str());
}

std::string format_prior(const std::vector<GaussianComponent>& components) {
    if (components.empty()) throw ParameterError("no components to write");
    std::ostringstream out;
    out.precision(17);
    out << "dimension " << components[0].mean.size() << '\n' << "components " << components.size() << '\n';
    for (const auto& c : components) {
        out << "weight " << c.weight << '\n' << "variance " << c.var << '\n' << "mean";
        for (double m : c.mean) out << ' ' << m;
        out << '\n';
    }
    return out.str();
}

}  // namespace diffc
