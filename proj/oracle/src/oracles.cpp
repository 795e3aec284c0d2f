#include "diffc_oracle/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "diffc/error.hpp"
#include "diffc/rcc.hpp"
#include "diffc/schedule_opt.hpp"

namespace diffc::oracle {
namespace {

using boost::math::quadrature::gauss_kronrod;

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
double cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

template <class F>
double integrate(F f, double a, double b, unsigned depth = 15, double tol = 1e-11) {
    if (!(b > a)) return 0.0;
    return gauss_kronrod<double, 31>::integrate(f, a, b, depth, tol);
}

// Integrates over [a, b] split at the given interior points.
template <class F>
double integrate_pieces(F f, double a, double b, std::vector<double> cuts, unsigned depth = 15) {
    cuts.push_back(a);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double lo = std::max(cuts[k], a);
        const double hi = std::min(cuts[k + 1], b);
        sum += integrate(f, lo, hi, depth);
    }
    return sum;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace

double truncated_pfr_density(double mu, std::uint64_t N, double z) {
    if (N == 0) throw ParameterError("need at least one candidate");
    if (mu < 0.0) return truncated_pfr_density(-mu, N, -z);
    if (N == 1 || mu == 0.0) return phi(z);

    const double half = 0.5 * mu * mu;
    // With s = e^v: F(s) = P(U / w(Z) <= s) and 1 - G(s) = P(1 / w(Z) > s).
    auto log_one_minus_F = [&](double v) {
        const double zs = (half - v) / mu;
        const double F = sf(zs) + std::exp(v) * cdf(zs - mu);
        if (F < 0.5) return std::log1p(-F);
        const double rest = cdf(zs) - std::exp(v) * cdf(zs - mu);
        return rest > 0.0 ? std::log(rest) : -std::numeric_limits<double>::infinity();
    };
    const double n = static_cast<double>(N);
    const double la = half - mu * z;  // ln(1 / w(z))
    auto inner = [&](double v) {
        const double zs = (half - v) / mu;
        const double e = v + (n - 2.0) * log_one_minus_F(v);
        return std::exp(e) * cdf(zs);
    };
    const double c = -std::log(n);
    const double lo = std::min(la, c) - 45.0;
    const double I = integrate_pieces(inner, lo, la, {c - 6.0, c + 6.0});
    const double last = std::exp((n - 1.0) * log_one_minus_F(la));
    return (n - 1.0) * phi(z - mu) * I + phi(z) * last;
}

std::vector<double> truncated_pfr_bins(double mu, std::uint64_t N, std::span<const double> edges) {
    const double lo_inf = std::min(0.0, mu) - 14.0;
    const double hi_inf = std::max(0.0, mu) + 14.0;
    std::vector<double> out;
    out.reserve(edges.size() - 1);
    auto f = [&](double z) { return truncated_pfr_density(mu, N, z); };
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
        const double a = std::isfinite(edges[k]) ? edges[k] : lo_inf;
        const double b = std::isfinite(edges[k + 1]) ? edges[k + 1] : hi_inf;
        out.push_back(integrate(f, a, b, 10, 1e-10));
    }
    return out;
}

std::vector<double> normal_bins(double mean, std::span<const double> edges) {
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < edges.size(); ++k)
        out.push_back(cdf(edges[k + 1] - mean) - cdf(edges[k] - mean));
    return out;
}

std::vector<double> histogram_edges(double lo, double hi, int bins) {
    std::vector<double> e;
    e.push_back(-std::numeric_limits<double>::infinity());
    for (int k = 0; k <= bins; ++k) e.push_back(lo + (hi - lo) * k / bins);
    e.push_back(std::numeric_limits<double>::infinity());
    return e;
}

std::vector<double> histogram(std::span<const double> samples, std::span<const double> edges) {
    std::vector<double> h(edges.size() - 1, 0.0);
    for (double x : samples) {
        const auto it = std::upper_bound(edges.begin(), edges.end(), x);
        const auto k = static_cast<std::size_t>(it - edges.begin()) - 1;
        h[std::min(k, h.size() - 1)] += 1.0;
    }
    return h;
}

double tv_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("histograms differ in length");
    double sa = 0.0, sb = 0.0;
    for (double v : a) sa += v;
    for (double v : b) sb += v;
    double tv = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) tv += std::abs(a[k] / sa - b[k] / sb);
    return 0.5 * tv;
}

double kl_bits_quadrature(const IsotropicGaussian& q, const IsotropicGaussian& p) {
    if (q.dimension() != p.dimension()) throw ShapeError("dimension mismatch");
    double nats = 0.0;
    for (std::size_t k = 0; k < q.dimension(); ++k) {
        const double mq = q.mean[k], mp = p.mean[k];
        auto f = [&](double x) {
            const double lq = -0.5 * std::pow((x - mq) / q.std, 2) - std::log(q.std);
            const double lp = -0.5 * std::pow((x - mp) / p.std, 2) - std::log(p.std);
            return std::exp(lq) / std::sqrt(2.0 * std::numbers::pi) * (lq - lp);
        };
        nats += integrate_pieces(f, mq - 14.0 * q.std, mq + 14.0 * q.std, {mq});
    }
    return nats / std::numbers::ln2;
}

double posterior_mean_quadrature(const std::vector<GaussianComponent>& comps, double x_t, double alpha_bar) {
    const double sa = std::sqrt(alpha_bar);
    const double nv = 1.0 - alpha_bar;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::vector<double> cuts;
    for (const auto& c : comps) {
        const double sd = std::sqrt(c.var);
        lo = std::min(lo, c.mean[0] - 14.0 * sd);
        hi = std::max(hi, c.mean[0] + 14.0 * sd);
        cuts.push_back(c.mean[0]);
    }
    const double centre = x_t / sa, width = std::sqrt(nv) / sa;
    for (int k = -12; k <= 12; k += 3) cuts.push_back(centre + k * width);
    auto prior = [&](double x) {
        double d = 0.0;
        for (const auto& c : comps) d += c.weight * phi((x - c.mean[0]) / std::sqrt(c.var)) / std::sqrt(c.var);
        return d;
    };
    auto like = [&](double x) { return std::exp(-0.5 * (x_t - sa * x) * (x_t - sa * x) / nv); };
    const double num = integrate_pieces([&](double x) { return x * prior(x) * like(x); }, lo, hi, cuts, 20);
    const double den = integrate_pieces([&](double x) { return prior(x) * like(x); }, lo, hi, cuts, 20);
    return num / den;
}

std::vector<double> alpha_bars_extended(const NoiseSchedule& s) {
    using big = boost::multiprecision::cpp_bin_float_50;
    std::vector<double> out{1.0};
    big prod = 1;
    for (double b : s.betas()) {
        prod *= big(1) - big(b);
        out.push_back(static_cast<double>(prod));
    }
    return out;
}

BruteForceSchedule brute_force_schedule(const std::vector<int>& grid, std::span<const double> weights,
                                        int t_final) {
    const std::size_t G = grid.size();
    const auto f = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), t_final) - grid.begin());
    if (f >= G) throw InfeasibleError("t_final not on grid");
    if (f == 0) return {{grid[0]}, 0.0};
    if (f > 24) throw ParameterError("grid too large to enumerate");
    BruteForceSchedule best{{}, std::numeric_limits<double>::infinity()};
    const std::uint32_t masks = std::uint32_t{1} << (f - 1);
    for (std::uint32_t m = 0; m < masks; ++m) {
        std::vector<std::size_t> nodes{0};
        for (std::size_t k = 1; k < f; ++k)
            if (m >> (k - 1) & 1u) nodes.push_back(k);
        nodes.push_back(f);
        double c = 0.0;
        bool ok = true;
        for (std::size_t e = 1; e < nodes.size() && ok; ++e) {
            const double w = weights[nodes[e - 1] * G + nodes[e]];
            ok = std::isfinite(w);
            c += w;
        }
        if (!ok) continue;
        std::vector<int> path;
        for (std::size_t n : nodes) path.push_back(grid[n]);
        const bool better = c < best.cost ||
                            (c == best.cost && (path.size() < best.schedule.size() ||
                                                (path.size() == best.schedule.size() && path < best.schedule)));
        if (better) best = {std::move(path), c};
    }
    if (best.schedule.empty()) throw InfeasibleError("t_final unreachable");
    return best;
}

OracleCheck kl_oracle(const KlFn& kl) {
    OracleCheck r{"kl closed form vs quadrature", true, ""};
    double worst = 0.0;
    const double unit = kl(IsotropicGaussian{{1.0}, 1.0}, IsotropicGaussian{{0.0}, 1.0});
    worst = std::abs(unit - 0.5 / std::numbers::ln2) / (0.5 / std::numbers::ln2);
    const Vector eps = candidate(SharedRandomness{77}, 0, 0, 48);
    for (int trial = 0; trial < 3; ++trial) {
        IsotropicGaussian q{{}, 0.3 + 0.4 * trial}, p{{}, 0.3 + 0.4 * trial};
        for (int k = 0; k < 16; ++k) {
            q.mean.push_back(eps[static_cast<std::size_t>(trial * 16 + k)]);
            p.mean.push_back(0.5 * eps[static_cast<std::size_t>((trial * 16 + k + 5) % 48)]);
        }
        const double ref = kl_bits_quadrature(q, p);
        worst = std::max(worst, std::abs(kl(q, p) - ref) / ref);
    }
    r.pass = worst < 1e-6;
    r.detail = "max relative error " + fmt(worst) + " (limit 1e-6)";
    return r;
}

std::vector<OracleCheck> oracle_suites(const KlFn& kl) {
    std::vector<OracleCheck> out;
    out.push_back(kl_oracle(kl));

    {
        // Posterior mean: closed form vs quadrature for a 1-D two-component mixture.
        const std::vector<GaussianComponent> comps{{0.3, {-0.7}, 0.05}, {0.7, {0.4}, 0.2}};
        const GmmPrior prior(comps);
        const NoiseSchedule s = default_schedule();
        double worst = 0.0;
        for (int t : {1, 50, 200, 500, 900})
            for (float x : {-1.5f, -0.2f, 0.3f, 1.1f}) {
                const float xs[1] = {x};
                const double got = prior.predict_x0(xs, t, s)[0];
                worst = std::max(worst, std::abs(got - posterior_mean_quadrature(comps, x, s.alpha_bar(t))));
            }
        out.push_back({"gmm posterior mean vs quadrature", worst < 1e-5,
                       "max abs error " + fmt(worst) + " (limit 1e-5)"});
    }

    {
        // Pruned PFR search vs full enumeration of every candidate.
        int bad = 0, cases = 0;
        for (int dim : {1, 2, 5, 16})
            for (int b : {1, 4, 8, 11})
                for (std::uint64_t seed = 1; seed <= 6; ++seed) {
                    WhitenedTarget t;
                    const Vector z = candidate(SharedRandomness{seed}, 99, 0, dim);
                    for (float v : z) t.mu.push_back(std::sqrt(2.0 * std::numbers::ln2 * b / dim) * v);
                    const auto a = pfr_encode(t, b, SharedRandomness{seed}, 5, 1);
                    const auto e = pfr_encode_exhaustive(t, b, SharedRandomness{seed}, 5);
                    bad += a.index != e.index;
                    ++cases;
                }
        out.push_back({"rcc pruned search vs enumeration", bad == 0,
                       std::to_string(cases - bad) + "/" + std::to_string(cases) + " identical"});
    }

    {
        // Schedule DP vs exhaustive subsets on random 12-node grids.
        std::uint64_t state = 12345;
        auto next = [&] {
            state = state * 6364136223846793005ull + 1442695040888963407ull;
            return static_cast<double>(state >> 11) * 0x1p-53;
        };
        int bad = 0;
        const int cases = 100;
        for (int c = 0; c < cases; ++c) {
            std::vector<int> grid;
            for (int k = 0; k < 12; ++k) grid.push_back(120 - 10 * k);
            std::vector<double> w(144, std::numeric_limits<double>::infinity());
            for (int a = 0; a < 12; ++a)
                for (int b = a + 1; b < 12; ++b) w[static_cast<std::size_t>(a * 12 + b)] = default_cost(40.0 * next());
            const auto dp = shortest_schedule(grid, w, grid.back());
            const auto bf = brute_force_schedule(grid, w, grid.back());
            bad += dp.cost != bf.cost;
        }
        out.push_back({"schedule dp vs brute force", bad == 0,
                       std::to_string(cases - bad) + "/" + std::to_string(cases) + " exact cost matches"});
    }

    {
        const NoiseSchedule s = default_schedule();
        const auto ext = alpha_bars_extended(s);
        double worst = 0.0;
        for (std::size_t t = 0; t < ext.size(); ++t)
            worst = std::max(worst, std::abs(s.alpha_bars()[t] - ext[t]) / ext[t]);
        out.push_back({"alpha_bar vs 50-digit product", worst < 1e-12,
                       "max relative error " + fmt(worst) + " (limit 1e-12)"});
    }
    return out;
}

}  // namespace diffc::oracle
