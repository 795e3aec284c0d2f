#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "diffc/codec.hpp"
#include "diffc/priors.hpp"
#include "diffc/schedule_opt.hpp"

namespace diffc {

struct Dataset {
    int dimension = 0;
    std::vector<Vector> items;
    std::vector<std::string> names;
    /// Items came from 8-bit pixels; PSNR is then reported on requantized pixels.
    bool pixels = false;
};

struct PgmImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;
};

PgmImage read_pgm(const std::string& path);
PgmImage parse_pgm(const std::string& bytes);
void write_pgm(const std::string& path, const PgmImage& img);

/// v = p / 127.5 - 1.
Vector pixels_to_vector(const std::vector<std::uint8_t>& pixels);
/// p = clamp(round((v + 1) * 127.5), 0, 255).
std::vector<std::uint8_t> vector_to_pixels(std::span<const float> v);

/// Raw vector files: "DFV1", u32 dimension, u64 count (little-endian), then
/// count * dimension little-endian float32 values.
Dataset read_vectors(const std::string& path);
void write_vectors(const std::string& path, const Dataset& data);

/// Dataset from one or more PGM files of identical size.
Dataset load_pgm_dataset(const std::vector<std::string>& paths);
/// PGM paths, or a single raw vector file.
Dataset load_dataset(const std::vector<std::string>& paths);

/// Mixture with K components in `dim` dimensions: equal weights, means drawn
/// uniformly from [-spread, spread], shared variance `var`.
GmmPrior synthetic_gmm(int dim, int K, double spread, double var, std::uint64_t seed);
/// `count` draws from the mixture, Philox-seeded.
Dataset sample_gmm(const GmmPrior& prior, int count, std::uint64_t seed);

struct RdRow {
    std::string image;
    int t_final = 0;
    int n_steps = 0;
    std::string denoiser;
    std::uint64_t actual_bits = 0;
    double ideal_bits = 0.0;
    double bits_per_dim = 0.0;
    double mse = 0.0;
    double psnr_db = 0.0;
};

inline constexpr const char* kRdSchema = "rd-v1";
inline constexpr const char* kRdHeader =
    "schema,image,t_final,n_steps,denoiser,actual_bits,ideal_bits,bits_per_dim,mse,psnr_db";

/// Vectors: 10 log10(4 / mse) (peak 2 on [-1, 1]). Pixel data: standard
/// 8-bit PSNR after mapping both sides back to pixels. Infinite for mse = 0.
double psnr_db(std::span<const float> original, std::span<const float> recon, bool pixels);
double mse(std::span<const float> a, std::span<const float> b);

struct RdPlan {
    DklProtocolTable protocol;  // t_final = protocol.t_final()
};

struct RdOptions {
    Denoiser denoiser = Denoiser::flow;
    int flow_steps = 50;
    std::uint64_t seed = 0;
    int workers = 1;
};

/// One row per (t_final plan, image), rows ordered by plan then image.
/// Image i is encoded with seed + i.
std::vector<RdRow> rd_sweep(const Dataset& data, const PriorModel& prior, const NoiseSchedule& s,
                            const std::vector<RdPlan>& plans, const RdOptions& opts);

void write_rd_csv(std::ostream& out, const std::vector<RdRow>& rows);
std::vector<RdRow> read_rd_csv(std::istream& in);

/// Prefix of `p` ending at t_final (which must be on its schedule).
DklProtocolTable truncate_protocol(const DklProtocolTable& p, int t_final);

}  // namespace diffc
