#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffc/bitstream.hpp"
#include "diffc/diffusion.hpp"
#include "diffc/priors.hpp"
#include "diffc/rcc.hpp"
#include "diffc/schedule_opt.hpp"

namespace diffc {

enum class Denoiser { flow, ancestral, mse };

std::string to_string(Denoiser d);
Denoiser denoiser_from_string(const std::string& name);

struct EncodeConfig {
    TimestepSchedule schedule;
    DklProtocolTable protocol;
    std::uint64_t seed = 0;
    int t_final = 0;
    Denoiser denoiser = Denoiser::flow;
    int flow_steps = 50;
    int workers = 1;
};

struct StepDiagnostics {
    int t = 0;
    double realized_kl_bits = 0.0;
    double protocol_kl_bits = 0.0;
    int n_chunks = 0;
    int budget_bits = 0;
    /// Realized KL above 8x the protocol's value.
    bool mismatch = false;
};

struct EncodeResult {
    DiffcBitstream stream;
    NoisySample x_final;
    std::vector<StepDiagnostics> steps;
    bool protocol_mismatch = false;

    /// Sum of realized step KLs: the ideal rate for this image.
    double ideal_bits() const noexcept;
};

/// Sends x_T, then each schedule step, by chunked PFR; x_j is always formed
/// from the decoded candidates so the decoder's state matches bit for bit.
EncodeResult encode(std::span<const float> x0, const PriorModel& prior, const EncodeConfig& cfg,
                    const NoiseSchedule& s);

struct DecodeOptions {
    Denoiser denoiser = Denoiser::flow;
    int flow_steps = 50;
    int workers = 1;
};

struct DecodeResult {
    NoisySample x_final;
    Vector reconstruction;
};

/// Replays the encoder's state evolution from the chunk indices alone.
NoisySample decode_state(const DiffcBitstream& stream, const DklProtocolTable& protocol, const PriorModel& prior,
                         const NoiseSchedule& s);

DecodeResult decode(const DiffcBitstream& stream, const DklProtocolTable& protocol, const PriorModel& prior,
                    const NoiseSchedule& s, const DecodeOptions& opts = {});

/// Reconstruction from x_t with the chosen denoiser. Ancestral noise is drawn
/// from `seed`.
Vector reconstruct(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s, Denoiser d,
                   int flow_steps, std::uint64_t seed);

Vector denoise_mse(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s);
/// Deterministic DDIM (eta = 0) over tau_k = round(t (steps - k) / steps), returning the last x0 estimate.
Vector denoise_flow(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s, int steps);
/// Per-timestep sampling from p(x_{i-1} | x_i) down to 0.
Vector denoise_ancestral(const NoisySample& x_t, const PriorModel& prior, const NoiseSchedule& s,
                         const SharedRandomness& rng);

/// OT-flow time sigma and input scale c matched to a DDPM timestep by SNR:
/// (1 - sigma) / sigma = sqrt(abar / (1 - abar)), c (1 - sigma) = sqrt(abar).
struct FlowTimeMap {
    double t = 0.0;  // possibly fractional DDPM timestep
    double sigma = 0.0;
    double c = 0.0;
};

/// log SNR at a fractional timestep in [1, T], linear between grid points.
double log_snr_at(double t, const NoiseSchedule& s);

/// Maps sigma to the DDPM timestep with the same SNR (fractional, by log-SNR
/// interpolation). Throws ParameterError for sigma outside (0, 1) or SNR
/// outside the schedule's range.
FlowTimeMap ot_time_to_ddpm(double sigma, const NoiseSchedule& s);
FlowTimeMap ddpm_time_to_ot(double t, const NoiseSchedule& s);

struct DdpmPoint {
    FlowTimeMap map;
    int nearest_t = 0;
    Vector x;
};

DdpmPoint ot_to_ddpm(double sigma, std::span<const float> x_ot, const NoiseSchedule& s);
/// Inverse: x_ot = x_ddpm / c.
Vector ddpm_to_ot(double t, std::span<const float> x_ddpm, const NoiseSchedule& s, double* sigma_out = nullptr);

}  // namespace diffc
