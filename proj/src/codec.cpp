#include "diffc/codec.hpp"

#include <algorithm>
#include <cmath>

#include "diffc/error.hpp"
#include "diffc/parallel.hpp"

namespace diffc {

namespace {

constexpr std::uint64_t kDenoiseBit = std::uint64_t{1} << 61;

// p-side distribution of schedule step k given the current state.
IsotropicGaussian p_side(std::size_t k, const TimestepSchedule& sched, const NoisySample& x,
                         const PriorModel& prior, const NoiseSchedule& s) {
    if (k == 0) {
        IsotropicGaussian p;
        p.std = std::sqrt(1.0 - s.alpha_bar(sched[0]));
        p.mean.assign(static_cast<std::size_t>(prior.dimension()), 0.0);
        return p;
    }
    const Vector x0_hat = prior.predict_x0(x.x, x.t, s);
    return reverse_model_dist(x0_hat, x, sched[k], s);
}

IsotropicGaussian q_side(std::size_t k, const TimestepSchedule& sched, std::span<const float> x0,
                         const NoisySample& x, const NoiseSchedule& s) {
    if (k == 0) {
        const double ab = s.alpha_bar(sched[0]);
        IsotropicGaussian q;
        q.std = std::sqrt(1.0 - ab);
        q.mean.resize(x0.size());
        for (std::size_t d = 0; d < x0.size(); ++d) q.mean[d] = std::sqrt(ab) * x0[d];
        return q;
    }
    return posterior(x0, x, sched[k], s);
}

// x_j = mu_p + sigma z on every coordinate of chunk c.
void apply_chunk(const IsotropicGaussian& p, std::span<const std::uint32_t> dims, std::span<const float> z,
                 Vector& next) {
    for (std::size_t m = 0; m < dims.size(); ++m)
        next[dims[m]] = static_cast<float>(p.mean[dims[m]] + p.std * static_cast<double>(z[m]));
}

void check_protocol(const DklProtocolTable& protocol, const NoiseSchedule& s, int dim) {
    if (protocol.noise != s.describe())
        throw ConfigError("protocol was built for noise '" + protocol.noise + "', not '" + s.describe() + "'");
    if (protocol.dimension != dim)
        throw ConfigError("protocol dimension " + std::to_string(protocol.dimension) + " differs from prior dimension " +
                          std::to_string(dim));
    validate_schedule(protocol.schedule(), s);
    if (protocol.t_final() > 65535) throw ConfigError("t_final does not fit the header");
}

}  // namespace

std::string to_string(Denoiser d) {
    switch (d) {
        case Denoiser::flow:
            return "flow";
        case Denoiser::ancestral:
            return "ancestral";
        case Denoiser::mse:
            return "mse";
    }
    return "unknown";
}

Denoiser denoiser_from_string(const std::string& name) {
    if (name == "flow") return Denoiser::flow;
    if (name == "ancestral") return Denoiser::ancestral;
    if (name == "mse") return Denoiser::mse;
    throw ParameterError("unknown denoiser '" + name + "' (flow, ancestral, mse)");
}

double EncodeResult::ideal_bits() const noexcept {
    double s = 0.0;
    for (const auto& st : steps) s += st.realized_kl_bits;
    return s;
}

EncodeResult encode(std::span<const float> x0, const PriorModel& prior, const EncodeConfig& cfg,
                    const NoiseSchedule& s) {
    const int dim = prior.dimension();
    if (static_cast<int>(x0.size()) != dim) throw ShapeError("input dimension differs from the prior's");
    check_protocol(cfg.protocol, s, dim);
    if (cfg.schedule != cfg.protocol.schedule()) throw ConfigError("schedule and protocol timesteps differ");
    if (cfg.t_final != cfg.schedule.back()) throw ConfigError("t_final is not the last schedule entry");
    if (cfg.flow_steps < 1) throw ConfigError("flow_steps must be >= 1");
    const int workers = std::max(cfg.workers, 1);

    EncodeResult out;
    auto& h = out.stream.header;
    h.dimension = static_cast<std::uint32_t>(dim);
    h.protocol_hash = protocol_hash(cfg.protocol);
    h.mode = static_cast<std::uint8_t>(cfg.protocol.mode);
    h.seed = cfg.seed;
    h.t_final = static_cast<std::uint16_t>(cfg.t_final);

    const SharedRandomness rng{cfg.seed};
    const TimestepSchedule& sched = cfg.schedule;
    NoisySample x{sched[0], Vector(static_cast<std::size_t>(dim), 0.0f)};
    for (std::size_t k = 0; k < sched.size(); ++k) {
        const ProtocolStep& st = cfg.protocol.steps[k];
        const IsotropicGaussian p = p_side(k, sched, x, prior, s);
        const IsotropicGaussian q = q_side(k, sched, x0, x, s);
        const WhitenedTarget target = whiten(q, p);
        const auto step = static_cast<std::uint32_t>(k);
        const ChunkAssignment chunks = partition_dims(dim, st.n_chunks, rng, permutation_stream(step));

        StepDiagnostics diag;
        diag.t = sched[k];
        diag.realized_kl_bits = target.kl_bits();
        diag.protocol_kl_bits = st.kl_bits;
        diag.n_chunks = chunks.chunks();
        diag.budget_bits = st.budget_bits;
        diag.mismatch = diag.realized_kl_bits > 8.0 * st.kl_bits && diag.realized_kl_bits > 0.0;
        out.protocol_mismatch = out.protocol_mismatch || diag.mismatch;
        out.steps.push_back(diag);

        std::vector<RccChunkCode> codes(static_cast<std::size_t>(chunks.chunks()));
        auto encode_chunk = [&](std::size_t c, int inner) {
            const auto dims = chunks.chunk(static_cast<int>(c));
            WhitenedTarget sub;
            sub.mu.reserve(dims.size());
            for (std::uint32_t d : dims) sub.mu.push_back(target.mu[d]);
            codes[c] = pfr_encode(sub, st.budget_bits, rng, chunk_stream(step, static_cast<std::uint32_t>(c)), inner);
        };
        if (codes.size() >= static_cast<std::size_t>(workers)) {
            parallel_ranges(codes.size(), workers, [&](int, std::size_t b, std::size_t e) {
                for (std::size_t c = b; c < e; ++c) encode_chunk(c, 1);
            });
        } else {
            for (std::size_t c = 0; c < codes.size(); ++c) encode_chunk(c, workers);
        }

        Vector next(static_cast<std::size_t>(dim));
        for (std::size_t c = 0; c < codes.size(); ++c) {
            const auto dims = chunks.chunk(static_cast<int>(c));
            const Vector z = pfr_decode(codes[c], rng, chunk_stream(step, static_cast<std::uint32_t>(c)),
                                        static_cast<int>(dims.size()));
            apply_chunk(p, dims, z, next);
            out.stream.codes.push_back(codes[c]);
        }
        x = NoisySample{sched[k], std::move(next)};
    }
    out.x_final = std::move(x);
    return out;
}

NoisySample decode_state(const DiffcBitstream& stream, const DklProtocolTable& protocol, const PriorModel& prior,
                         const NoiseSchedule& s) {
    const int dim = prior.dimension();
    if (stream.header.protocol_hash != protocol_hash(protocol))
        throw ProtocolError("stream references an unknown protocol");
    if (stream.header.dimension != static_cast<std::uint32_t>(dim))
        throw ShapeError("stream dimension differs from the prior's");
    check_protocol(protocol, s, dim);
    if (stream.header.t_final != protocol.t_final()) throw ProtocolError("stream t_final disagrees with the protocol");
    const std::vector<int> layout = payload_layout(protocol);
    if (stream.codes.size() != layout.size()) throw ProtocolError("chunk count disagrees with the protocol");

    const SharedRandomness rng{stream.header.seed};
    const TimestepSchedule sched = protocol.schedule();
    NoisySample x{sched[0], Vector(static_cast<std::size_t>(dim), 0.0f)};
    std::size_t at = 0;
    for (std::size_t k = 0; k < sched.size(); ++k) {
        const ProtocolStep& st = protocol.steps[k];
        const IsotropicGaussian p = p_side(k, sched, x, prior, s);
        const auto step = static_cast<std::uint32_t>(k);
        const ChunkAssignment chunks = partition_dims(dim, st.n_chunks, rng, permutation_stream(step));
        Vector next(static_cast<std::size_t>(dim));
        for (int c = 0; c < chunks.chunks(); ++c) {
            const RccChunkCode& code = stream.codes[at++];
            if (code.budget_bits != st.budget_bits) throw ProtocolError("chunk budget disagrees with the protocol");
            const auto dims = chunks.chunk(c);
            const Vector z = pfr_decode(code, rng, chunk_stream(step, static_cast<std::uint32_t>(c)),
                                        static_cast<int>(dims.size()));
            apply_chunk(p, dims, z, next);
        }
        x = NoisySample{sched[k], std::move(next)};
    }
    return x;
}

DecodeResult decode(const DiffcBitstream& stream, const DklProtocolTable& protocol, const PriorModel& prior,
                    const NoiseSchedule& s, const DecodeOptions& opts) {
    DecodeResult r;
    r.x_final = decode_state(stream, protocol, prior, s);
    r.reconstruction = reconstruct(r.x_final, prior, s, opts.denoiser, opts.flow_steps, stream.header.seed);
    return r;
}

Vector reconstruct(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s, Denoiser d,
                   int flow_steps, std::uint64_t seed) {
    switch (d) {
        case Denoiser::flow:
            return denoise_flow(x_t, prior, s, flow_steps);
        case Denoiser::ancestral:
            return denoise_ancestral(x_t, prior, s, SharedRandomness{seed});
        case Denoiser::mse:
            break;
    }
    return denoise_mse(x_t, prior, s);
}

Vector denoise_mse(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s) {
    if (x_t.t == 0) return x_t.x;
    return prior.predict_x0(x_t.x, x_t.t, s);
}

Vector denoise_flow(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s, int steps) {
    if (steps < 1) throw ParameterError("flow denoising needs steps >= 1");
    if (x_t.t == 0) return x_t.x;
    const long long t = x_t.t;
    std::vector<int> taus;
    for (long long k = 0; k <= steps; ++k) {
        const auto tau = static_cast<int>((2 * t * (steps - k) + steps) / (2LL * steps));
        if (taus.empty() || tau != taus.back()) taus.push_back(tau);
    }
    Vector x = x_t.x;
    Vector x0_hat;
    for (std::size_t k = 0; k + 1 < taus.size(); ++k) {
        x0_hat = prior.predict_x0(x, taus[k], s);
        const int next = taus[k + 1];
        if (next == 0) break;
        const double ab = s.alpha_bar(taus[k]);
        const double ab_next = s.alpha_bar(next);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        const double a2 = std::sqrt(ab_next), b2 = std::sqrt(1.0 - ab_next);
        for (std::size_t d = 0; d < x.size(); ++d) {
            const double eps = (x[d] - a * x0_hat[d]) / b;
            x[d] = static_cast<float>(a2 * x0_hat[d] + b2 * eps);
        }
    }
    return x0_hat;
}

Vector denoise_ancestral(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s,
                         const SharedRandomness& rng) {
    if (x_t.t == 0) return x_t.x;
    NoisySample x = x_t;
    for (int i = x_t.t; i >= 1; --i) {
        const Vector x0_hat = prior.predict_x0(x.x, i, s);
        if (i == 1) return x0_hat;  // p(x_0 | x_1) has zero variance: its mean is x0_hat
        const IsotropicGaussian p = reverse_model_dist(x0_hat, x, i - 1, s);
        const Vector z = candidate(rng, kDenoiseBit | static_cast<std::uint64_t>(i), 0, static_cast<int>(x.x.size()));
        for (std::size_t d = 0; d < x.x.size(); ++d)
            x.x[d] = static_cast<float>(p.mean[d] + p.std * static_cast<double>(z[d]));
        x.t = i - 1;
    }
    return x.x;
}

double log_snr_at(double t, const NoiseSchedule& s) {
    if (!(t >= 1.0) || !(t <= s.steps())) throw ParameterError("timestep outside [1, T]");
    auto at = [&](int k) {
        const double ab = s.alpha_bar(k);
        return 0.5 * std::log(ab / (1.0 - ab));
    };
    const int lo = static_cast<int>(std::floor(t));
    if (lo == s.steps()) return at(lo);
    const double f = t - lo;
    return f == 0.0 ? at(lo) : (1.0 - f) * at(lo) + f * at(lo + 1);
}

namespace {

FlowTimeMap from_sigma(double t, double sigma) {
    return {t, sigma, 1.0 / std::sqrt((1.0 - sigma) * (1.0 - sigma) + sigma * sigma)};
}

}  // namespace

FlowTimeMap ot_time_to_ddpm(double sigma, const NoiseSchedule& s) {
    if (!(sigma > 0.0) || !(sigma < 1.0)) throw ParameterError("OT time must lie strictly inside (0, 1)");
    const double L = std::log((1.0 - sigma) / sigma);
    const int T = s.steps();
    const double hi = log_snr_at(1.0, s), lo = log_snr_at(T, s);
    const double tol = 1e-12 * (1.0 + std::abs(L));
    if (L > hi + tol || L < lo - tol) throw ParameterError("OT time has an SNR outside the schedule's range");
    // log SNR decreases in t: find k with L(k) >= L >= L(k+1).
    int a = 1, b = T;
    while (b - a > 1) {
        const int m = (a + b) / 2;
        if (log_snr_at(m, s) >= L)
            a = m;
        else
            b = m;
    }
    const double La = log_snr_at(a, s), Lb = log_snr_at(b, s);
    double t = a + (La - L) / (La - Lb);
    t = std::clamp(t, 1.0, static_cast<double>(T));
    return from_sigma(t, sigma);
}

FlowTimeMap ddpm_time_to_ot(double t, const NoiseSchedule& s) {
    const double snr = std::exp(log_snr_at(t, s));
    return from_sigma(t, 1.0 / (1.0 + snr));
}

DdpmPoint ot_to_ddpm(double sigma, std::span<const float> x_ot, const NoiseSchedule& s) {
    DdpmPoint out;
    out.map = ot_time_to_ddpm(sigma, s);
    out.nearest_t = static_cast<int>(std::lround(out.map.t));
    out.x.resize(x_ot.size());
    for (std::size_t d = 0; d < x_ot.size(); ++d) out.x[d] = static_cast<float>(out.map.c * x_ot[d]);
    return out;
}

Vector ddpm_to_ot(double t, std::span<const float> x_ddpm, const NoiseSchedule& s, double* sigma_out) {
    const FlowTimeMap m = ddpm_time_to_ot(t, s);
    if (sigma_out) *sigma_out = m.sigma;
    Vector out(x_ddpm.size());
    for (std::size_t d = 0; d < x_ddpm.size(); ++d) out[d] = static_cast<float>(x_ddpm[d] / m.c);
    return out;
}

}  // namespace diffc
