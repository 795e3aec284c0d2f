#include "diffc/rcc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "diffc/error.hpp"
#include "fastmath.hpp"
#include "diffc/parallel.hpp"
#include "diffc/philox.hpp"

namespace diffc {

namespace {

constexpr std::uint32_t kMaxArrivalBlock = 1024;
constexpr std::uint32_t kGammaCounterBit = 0x80000000u;

philox::Key key_of(const SharedRandomness& rng) noexcept {
    return {static_cast<std::uint32_t>(rng.seed), static_cast<std::uint32_t>(rng.seed >> 32)};
}

philox::Counter counter(std::uint32_t draw, std::uint32_t index, std::uint64_t stream) noexcept {
    return {draw, index, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
}

void check_budget(int budget_bits) {
    if (budget_bits < 1 || budget_bits > kMaxBudgetBits)
        throw ParameterError("budget must be 1.." + std::to_string(kMaxBudgetBits) + " bits, got " +
                             std::to_string(budget_bits));
}

double dot(std::span<const double> mu, std::span<const float> z) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) s += mu[k] * static_cast<double>(z[k]);
    return s;
}

// Marsaglia-Tsang; attempt k draws one block (normal from words 0/1, uniform from word 2).
double gamma_draw(double shape, philox::Key key, std::uint32_t block, std::uint64_t stream) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (std::uint32_t k = 0;; ++k) {
        if (k >= kGammaCounterBit) throw DegeneracyError("gamma sampler did not terminate");
        const auto w = philox::philox4x32(counter(kGammaCounterBit | k, block, stream), key);
        const double x = philox::box_muller(philox::to_unit(w[0]), philox::to_unit(w[1]))[0];
        const double v0 = 1.0 + c * x;
        if (v0 <= 0.0) continue;
        const double v = v0 * v0 * v0;
        const double u = philox::to_unit(w[2]);
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

struct Best {
    double score = std::numeric_limits<double>::infinity();
    std::uint32_t index = 0;
};

}  // namespace

double WhitenedTarget::kl_bits() const noexcept {
    double sq = 0.0;
    for (double m : mu) sq += m * m;
    return sq / (2.0 * std::numbers::ln2);
}

double WhitenedTarget::norm() const noexcept {
    double sq = 0.0;
    for (double m : mu) sq += m * m;
    return std::sqrt(sq);
}

WhitenedTarget whiten(const IsotropicGaussian& q, const IsotropicGaussian& p) {
    if (q.std != p.std) throw UnsupportedPairError("whitening needs equal standard deviations");
    if (q.mean.size() != p.mean.size()) throw ShapeError("q and p differ in dimension");
    if (!(q.std > 0.0)) throw DegeneracyError("zero standard deviation");
    WhitenedTarget t;
    t.mu.resize(q.mean.size());
    for (std::size_t k = 0; k < q.mean.size(); ++k) t.mu[k] = (q.mean[k] - p.mean[k]) / q.std;
    return t;
}

void candidate_into(const SharedRandomness& rng, std::uint64_t stream_id, std::uint32_t n,
                    std::span<float> out) {
    const auto key = key_of(rng);
    const std::size_t dim = out.size();
    const std::size_t pairs = (dim + 1) / 2;
    for (std::size_t b = 0; 2 * b < pairs; ++b) {
        const auto w = philox::philox4x32(counter(static_cast<std::uint32_t>(b), n, stream_id), key);
        for (std::size_t q = 0; q < 2 && 2 * b + q < pairs; ++q) {
            const auto z = philox::box_muller(philox::to_unit(w[2 * q]), philox::to_unit(w[2 * q + 1]));
            const std::size_t k = 2 * (2 * b + q);
            out[k] = static_cast<float>(z[0]);
            if (k + 1 < dim) out[k + 1] = static_cast<float>(z[1]);
        }
    }
}

Vector candidate(const SharedRandomness& rng, std::uint64_t stream_id, std::uint32_t n, int dim) {
    if (dim < 1) throw ShapeError("candidate dimension must be positive");
    Vector z(static_cast<std::size_t>(dim));
    candidate_into(rng, stream_id, n, z);
    return z;
}

Arrivals::Arrivals(const SharedRandomness& rng, std::uint64_t stream_id, std::uint64_t count)
    : stream_(stream_id | kArrivalBit), count_(count) {
    if (count == 0) throw ParameterError("arrival count must be positive");
    block_ = static_cast<std::uint32_t>(std::min<std::uint64_t>(count, kMaxArrivalBlock));
    if (count % block_ != 0) throw ParameterError("arrival count must be a multiple of the block size");
    const auto key = key_of(rng);
    key_[0] = key[0];
    key_[1] = key[1];
    const std::uint64_t nblocks = count / block_;
    start_.resize(nblocks);
    total_.resize(nblocks);
    double t = 0.0;
    for (std::uint64_t j = 0; j < nblocks; ++j) {
        start_[j] = t;
        total_[j] = gamma_draw(block_, key, static_cast<std::uint32_t>(j), stream_);
        t += total_[j];
    }
}

void Arrivals::block_times(std::uint64_t j, std::span<double> out) const {
    if (out.size() != block_) throw ShapeError("arrival block buffer has the wrong size");
    const philox::Key key{key_[0], key_[1]};
    double sum = 0.0;
    for (std::uint32_t m = 0; m < block_; m += 4) {
        const auto w = philox::philox4x32(counter(m / 4, static_cast<std::uint32_t>(j), stream_), key);
        for (std::uint32_t q = 0; q < 4 && m + q < block_; ++q) {
            sum += -std::log(philox::to_unit(w[q]));
            out[m + q] = sum;
        }
    }
    // Given their total, the B within-block gaps are a scaled Dirichlet split.
    const double scale = total_[j] / sum;
    for (std::uint32_t m = 0; m + 1 < block_; ++m) out[m] = start_[j] + out[m] * scale;
    out[block_ - 1] = start_[j] + total_[j];
}

RccChunkCode pfr_encode(const WhitenedTarget& target, int budget_bits, const SharedRandomness& rng,
                        std::uint64_t stream_id, int workers) {
    check_budget(budget_bits);
    const std::size_t dim = target.mu.size();
    if (dim == 0) throw ShapeError("empty target");
    for (double m : target.mu)
        if (!std::isfinite(m)) throw ParameterError("target mean is not finite");
    const double norm = target.norm();
    if (norm == 0.0) return {0, budget_bits};

    const std::uint64_t count = std::uint64_t{1} << budget_bits;
    const Arrivals arrivals(rng, stream_id, count);
    const std::uint32_t B = arrivals.block_size();
    const auto key = key_of(rng);
    const std::uint32_t s_lo = static_cast<std::uint32_t>(stream_id);
    const std::uint32_t s_hi = static_cast<std::uint32_t>(stream_id >> 32);
    const std::size_t pairs = (dim + 1) / 2;
    const std::size_t pair_blocks = (pairs + 1) / 2;
    // mu^T z <= |mu| |z| and |z|^2 <= -2 ln(prod of radius uniforms); the slack
    // absorbs rounding in the float candidates and the double accumulations.
    const double slack = 1e-4 + 1e-6 * norm * philox::max_radius() * std::sqrt(static_cast<double>(pairs));
    // Normals from the fast path differ from the float candidates by < 1e-6 each.
    double mu_l1 = 0.0;
    for (double m : target.mu) mu_l1 += std::abs(m);
    const double band = 1e-6 * (mu_l1 + 1.0);
    auto threshold = [&](double gap) {
        const double c = gap - slack;
        if (!(c > 0.0)) return 2.0;
        const double r = c / norm;
        return std::exp(-0.5 * r * r) * (1.0 + 1e-9);
    };

    std::vector<Best> best(static_cast<std::size_t>(std::max(workers, 1)));
    parallel_ranges(arrivals.blocks(), workers, [&](int w, std::size_t jb, std::size_t je) {
        Best b;
        std::vector<double> times(B);
        Vector z(dim);
        std::uint32_t radius[philox::kLanes];
        std::vector<std::uint32_t> all_words(pairs == 1 ? 0 : pair_blocks * 4 * philox::kLanes);
        double approx[philox::kLanes];
        auto consider = [&](std::uint32_t n, double lt) {
            candidate_into(rng, stream_id, n, z);
            const double s = lt - dot(target.mu, z);
            if (s < b.score) b = {s, n};
        };
        for (std::size_t j = jb; j < je; ++j) {
            const double log_start = j == 0 ? -std::numeric_limits<double>::infinity()
                                            : std::log(arrivals.block_start(j));
            bool have_times = false;
            double thr_for = std::numeric_limits<double>::quiet_NaN();
            double group_thr = 2.0;
            for (std::uint32_t g = 0; g < B; g += philox::kLanes) {
                const std::uint32_t n0 = static_cast<std::uint32_t>(j * B) + g;
                const std::uint32_t lanes = std::min<std::uint32_t>(philox::kLanes, B - g);
                if (j > 0 && b.score != thr_for) {
                    thr_for = b.score;
                    group_thr = threshold(log_start - b.score);
                }
                if (pairs == 1) {
                    // One radius word per candidate: filter on the raw integers,
                    // since |mu^T z| <= |mu| r.
                    const double limit = group_thr * 0x1p32 - 0.5;
                    if (limit < 0.0) continue;
                    const std::uint32_t cut =
                        limit >= 0x1p32 - 1.0 ? 0xFFFFFFFFu : static_cast<std::uint32_t>(limit);
                    std::uint32_t mask = philox::philox4x32_lanes_word0(0, n0, s_lo, s_hi, key, cut, radius);
                    if (lanes < philox::kLanes) mask &= (std::uint32_t{1} << lanes) - 1;
                    for (; mask != 0; mask &= mask - 1) {
                        const auto l = static_cast<std::uint32_t>(std::countr_zero(mask));
                        const double u = philox::to_unit(radius[l]);
                        if (u > group_thr) continue;
                        const std::uint32_t n = n0 + l;
                        if (!have_times) {
                            arrivals.block_times(j, times);
                            have_times = true;
                        }
                        const double lt = std::log(times[n - j * B]);
                        if (u > threshold(lt - b.score)) continue;
                        consider(n, lt);
                    }
                    continue;
                }
                // Wider chunks: rank by an approximate inner product, rescore exactly
                // anything within the approximation band of the running best.
                for (std::size_t pb = 0; pb < pair_blocks; ++pb)
                    philox::philox4x32_lanes(static_cast<std::uint32_t>(pb), n0, s_lo, s_hi, key,
                                             reinterpret_cast<std::uint32_t(*)[philox::kLanes]>(
                                                 &all_words[pb * 4 * philox::kLanes]));
                std::fill(approx, approx + philox::kLanes, 0.0);
                for (std::size_t p = 0; p < pairs; ++p) {
                    const std::uint32_t* wr = &all_words[((p / 2) * 4 + 2 * (p % 2)) * philox::kLanes];
                    const std::uint32_t* wa = wr + philox::kLanes;
                    const double m0 = target.mu[2 * p];
                    const double m1 = 2 * p + 1 < dim ? target.mu[2 * p + 1] : 0.0;
                    for (int l = 0; l < philox::kLanes; ++l) {
                        const double r = std::sqrt(-2.0 * fastmath::log(philox::to_unit(wr[l])));
                        double c, sn;
                        fastmath::sincos_2pi(philox::to_unit(wa[l]), c, sn);
                        approx[l] += r * (m0 * c + m1 * sn);
                    }
                }
                for (std::uint32_t l = 0; l < lanes; ++l) {
                    if (log_start - approx[l] - band > b.score) continue;
                    const std::uint32_t n = n0 + l;
                    if (!have_times) {
                        arrivals.block_times(j, times);
                        have_times = true;
                    }
                    const double lt = std::log(times[n - j * B]);
                    if (lt - approx[l] - band > b.score) continue;
                    consider(n, lt);
                }
            }
        }
        best[static_cast<std::size_t>(w)] = b;
    });

    Best out;
    for (const Best& b : best)
        if (b.score < out.score || (b.score == out.score && b.index < out.index)) out = b;
    return {out.index, budget_bits};
}

RccChunkCode pfr_encode_exhaustive(const WhitenedTarget& target, int budget_bits,
                                   const SharedRandomness& rng, std::uint64_t stream_id) {
    check_budget(budget_bits);
    const std::size_t dim = target.mu.size();
    if (dim == 0) throw ShapeError("empty target");
    const Arrivals arrivals(rng, stream_id, std::uint64_t{1} << budget_bits);
    const std::uint32_t B = arrivals.block_size();
    std::vector<double> times(B);
    Vector z(dim);
    Best b;
    for (std::uint64_t j = 0; j < arrivals.blocks(); ++j) {
        arrivals.block_times(j, times);
        for (std::uint32_t m = 0; m < B; ++m) {
            const auto n = static_cast<std::uint32_t>(j * B + m);
            candidate_into(rng, stream_id, n, z);
            const double s = std::log(times[m]) - dot(target.mu, z);
            if (s < b.score) b = {s, n};
        }
    }
    return {b.index, budget_bits};
}

Vector pfr_decode(const RccChunkCode& code, const SharedRandomness& rng, std::uint64_t stream_id,
                  int dim) {
    if (code.budget_bits < 1 || code.budget_bits > kMaxBudgetBits)
        throw MalformedCodeError("budget of " + std::to_string(code.budget_bits) + " bits");
    if ((std::uint64_t{code.index} >> code.budget_bits) != 0)
        throw MalformedCodeError("index " + std::to_string(code.index) + " does not fit in " +
                                 std::to_string(code.budget_bits) + " bits");
    return candidate(rng, stream_id, code.index, dim);
}

ChunkAssignment partition_dims(int dim, int n, const SharedRandomness& rng, std::uint64_t stream_id) {
    if (dim < 1) throw ShapeError("cannot partition an empty vector");
    n = std::clamp(n, 1, dim);
    ChunkAssignment a;
    a.perm.resize(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) a.perm[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
    const auto key = key_of(rng);
    philox::Counter w{};
    for (std::uint32_t k = 0, i = static_cast<std::uint32_t>(dim) - 1; i >= 1; ++k, --i) {
        if (k % 4 == 0) w = philox::philox4x32(counter(k / 4, 0, stream_id), key);
        const auto j = static_cast<std::uint32_t>((std::uint64_t{w[k % 4]} * (std::uint64_t{i} + 1)) >> 32);
        std::swap(a.perm[i], a.perm[j]);
    }
    a.bounds.resize(static_cast<std::size_t>(n) + 1);
    for (int c = 0; c <= n; ++c)
        a.bounds[static_cast<std::size_t>(c)] =
            static_cast<std::uint32_t>(static_cast<std::uint64_t>(dim) * static_cast<std::uint64_t>(c) /
                                       static_cast<std::uint64_t>(n));
    return a;
}

ChunkAssignment split_chunks(std::span<const double> mu, double target_bits_per_chunk,
                             const SharedRandomness& rng, std::uint64_t stream_id) {
    if (!(target_bits_per_chunk > 0.0)) throw ParameterError("chunk target must be positive");
    WhitenedTarget t{std::vector<double>(mu.begin(), mu.end())};
    const double n = std::max(1.0, std::round(t.kl_bits() / target_bits_per_chunk));
    const double capped = std::min(n, static_cast<double>(std::max<std::size_t>(mu.size(), 1)));
    return partition_dims(static_cast<int>(mu.size()), static_cast<int>(capped), rng, stream_id);
}

std::vector<double> oracle_selection_law(const WhitenedTarget& target, int budget_bits,
                                         const SharedRandomness& rng, std::uint64_t stream_id,
                                         int resamples, std::uint64_t mc_seed) {
    if (budget_bits < 1 || budget_bits > 14)
        throw ParameterError("selection-law oracle is limited to budgets of 1..14 bits");
    const std::size_t count = std::size_t{1} << budget_bits;
    std::vector<double> law(count, 0.0);
    if (target.norm() == 0.0) {
        law[0] = 1.0;
        return law;
    }
    const int dim = static_cast<int>(target.mu.size());
    std::vector<double> logw(count);
    for (std::size_t n = 0; n < count; ++n)
        logw[n] = dot(target.mu, candidate(rng, stream_id, static_cast<std::uint32_t>(n), dim));
    if (budget_bits == 1) {
        // P(t0/w0 <= t1/w1) with t1 = t0 + e1 is min(1, w0/w1).
        law[0] = std::min(1.0, std::exp(logw[0] - logw[1]));
        law[1] = 1.0 - law[0];
        return law;
    }
    if (resamples < 1) throw ParameterError("resample count must be positive");
    const double top = *std::max_element(logw.begin(), logw.end());
    std::vector<double> inv_w(count);
    for (std::size_t n = 0; n < count; ++n) inv_w[n] = std::exp(top - logw[n]);
    std::mt19937_64 gen(mc_seed);
    std::exponential_distribution<double> exp1(1.0);
    std::vector<std::uint64_t> hits(count, 0);
    for (int r = 0; r < resamples; ++r) {
        double t = 0.0;
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t n = 0; n < count; ++n) {
            t += exp1(gen);
            const double s = t * inv_w[n];
            if (s < best) {
                best = s;
                arg = n;
            }
        }
        ++hits[arg];
    }
    for (std::size_t n = 0; n < count; ++n) law[n] = static_cast<double>(hits[n]) / resamples;
    return law;
}

}  // namespace diffc
