#pragma once

// Reverse-channel coding with the Poisson functional representation, truncated
// at a fixed candidate budget of 2^b.
//
// Candidates and arrival times come from Philox-4x32-10 keyed by the 64-bit
// seed. Counter words: (draw block, candidate index, stream lo, stream hi).
// Stream ids with the top bit set are reserved for the encoder's arrivals.

#include <cstdint>
#include <span>
#include <vector>

#include "diffc/diffusion.hpp"

namespace diffc {

struct SharedRandomness {
    std::uint64_t seed = 0;
};

inline constexpr std::uint64_t kArrivalBit = std::uint64_t{1} << 63;

/// Stream for chunk `chunk` of codec step `step`.
constexpr std::uint64_t chunk_stream(std::uint32_t step, std::uint32_t chunk) noexcept {
    return (std::uint64_t{step} << 32) | (std::uint64_t{chunk} + 1);
}

/// Stream for the dimension permutation of codec step `step`.
constexpr std::uint64_t permutation_stream(std::uint32_t step) noexcept {
    return std::uint64_t{step} << 32;
}

/// Whitened mean difference mu = (mu_q - mu_p) / sigma.
struct WhitenedTarget {
    std::vector<double> mu;

    double kl_bits() const noexcept;
    double norm() const noexcept;
};

WhitenedTarget whiten(const IsotropicGaussian& q, const IsotropicGaussian& p);

struct RccChunkCode {
    std::uint32_t index = 0;
    int budget_bits = 0;
};

inline constexpr int kMaxBudgetBits = 30;

/// Standard-normal candidate n of length dim. Pair k (coordinates 2k, 2k+1)
/// uses words (2(k%2), 2(k%2)+1) of the block with word0 = k/2.
Vector candidate(const SharedRandomness& rng, std::uint64_t stream_id, std::uint32_t n, int dim);
void candidate_into(const SharedRandomness& rng, std::uint64_t stream_id, std::uint32_t n,
                    std::span<float> out);

/// Arrival times t_0 < t_1 < ... < t_{N-1} of a unit-rate Poisson process,
/// generated block-wise so any block can be materialized independently.
class Arrivals {
  public:
    Arrivals(const SharedRandomness& rng, std::uint64_t stream_id, std::uint64_t count);

    std::uint64_t count() const noexcept { return count_; }
    std::uint32_t block_size() const noexcept { return block_; }
    std::uint64_t blocks() const noexcept { return start_.size(); }
    /// Time of the last arrival before block j (0 for j = 0).
    double block_start(std::uint64_t j) const { return start_[j]; }
    /// Writes the block_size() arrival times of block j.
    void block_times(std::uint64_t j, std::span<double> out) const;

  private:
    std::uint32_t key_[2];
    std::uint64_t stream_;
    std::uint64_t count_;
    std::uint32_t block_;
    std::vector<double> start_;
    std::vector<double> total_;
};

/// Index of the candidate minimizing ln t_n - mu^T z_n over n < 2^b, smallest
/// index on ties. Candidates that provably cannot win are skipped before their
/// normals are formed; the result does not depend on `workers`.
RccChunkCode pfr_encode(const WhitenedTarget& target, int budget_bits, const SharedRandomness& rng,
                        std::uint64_t stream_id, int workers = 1);

/// Same selection, scoring every candidate. Reference for pfr_encode.
RccChunkCode pfr_encode_exhaustive(const WhitenedTarget& target, int budget_bits,
                                   const SharedRandomness& rng, std::uint64_t stream_id);

/// The whitened sample named by `code`. Throws MalformedCodeError if the index
/// does not fit in the budget.
Vector pfr_decode(const RccChunkCode& code, const SharedRandomness& rng, std::uint64_t stream_id,
                  int dim);

/// Shared-randomness split of dims into chunks: perm lists dimension indices,
/// chunk c owns perm[bounds[c] .. bounds[c+1]).
struct ChunkAssignment {
    std::vector<std::uint32_t> perm;
    std::vector<std::uint32_t> bounds;

    int chunks() const noexcept { return static_cast<int>(bounds.size()) - 1; }
    std::span<const std::uint32_t> chunk(int c) const {
        return std::span<const std::uint32_t>(perm).subspan(bounds[static_cast<std::size_t>(c)],
                                                            bounds[static_cast<std::size_t>(c) + 1] -
                                                                bounds[static_cast<std::size_t>(c)]);
    }
};

/// Fisher-Yates permutation of 0..dim-1 from the stream, split into n
/// contiguous chunks of near-equal size (n is clamped to [1, dim]).
ChunkAssignment partition_dims(int dim, int n, const SharedRandomness& rng, std::uint64_t stream_id);

/// Chunk count n = max(1, round(kl / target)), then partition_dims.
ChunkAssignment split_chunks(std::span<const double> mu, double target_bits_per_chunk,
                             const SharedRandomness& rng, std::uint64_t stream_id);

/// Selection probability of every index for this seed's candidates, averaging
/// over arrival realizations: exact for mu = 0 and b = 1, Monte-Carlo with
/// `resamples` draws (seeded by `mc_seed`) otherwise. Refuses b > 14.
std::vector<double> oracle_selection_law(const WhitenedTarget& target, int budget_bits,
                                         const SharedRandomness& rng, std::uint64_t stream_id,
                                         int resamples = 100000, std::uint64_t mc_seed = 1);

}  // namespace diffc
