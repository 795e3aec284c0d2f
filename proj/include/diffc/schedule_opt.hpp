#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffc/diffusion.hpp"
#include "diffc/priors.hpp"

namespace diffc {

/// Descending timesteps [T, ..., t_final].
using TimestepSchedule = std::vector<int>;

/// Pairwise step KLs over a descending grid. Entry (a, b) with a < b is the
/// KL in bits of sending x_{grid[b]} given x_{grid[a]}.
class KlCostTable {
  public:
    KlCostTable(std::vector<int> grid, std::size_t images);

    const std::vector<int>& grid() const noexcept { return grid_; }
    std::size_t nodes() const noexcept { return grid_.size(); }
    std::size_t images() const noexcept { return images_; }
    /// Grid position of timestep t; throws ParameterError if absent.
    std::size_t position(int t) const;

    double& at(std::size_t image, std::size_t a, std::size_t b);
    double at(std::size_t image, std::size_t a, std::size_t b) const;
    /// KL of sending x_T from p(x_T) for each image.
    double& terminal(std::size_t image) { return terminal_[image]; }
    double terminal(std::size_t image) const { return terminal_[image]; }

    /// Mean over images in image order.
    double mean(std::size_t a, std::size_t b) const;
    double min(std::size_t a, std::size_t b) const;
    double max(std::size_t a, std::size_t b) const;

  private:
    std::vector<int> grid_;
    std::size_t images_;
    std::vector<double> d_;
    std::vector<double> terminal_;
};

/// Every timestep when T <= 128, else every 5th from T down, always
/// including t_final. Entries below t_final are dropped.
std::vector<int> default_grid(int T, int t_final);

/// Fills a table from one forward trajectory per image (shared eps across grid
/// points, drawn from the Philox stream of image x under `seed`).
KlCostTable estimate_kl_table(const PriorModel& prior, std::span<const Vector> images,
                              const NoiseSchedule& s, const std::vector<int>& grid, int t_final,
                              std::uint64_t seed, int workers = 1);

using CostFn = std::function<double(double)>;

/// C(I) = I + log2(max(I, 1)) + 5.
double default_cost(double kl_bits);

struct ScheduleResult {
    TimestepSchedule schedule;
    double cost = 0.0;
};

/// Edge weights from an explicit G x G matrix (row-major, entries a < b used).
/// Shortest path grid[0] -> t_final; ties go to fewer edges, then the
/// lexicographically smallest timestep sequence.
ScheduleResult shortest_schedule(const std::vector<int>& grid, std::span<const double> weights, int t_final);

/// Edge weight (a, b) = mean over images of cost_fn(D[x, a, b]).
ScheduleResult optimal_schedule(const KlCostTable& table, const CostFn& cost_fn, int t_final);

/// Total cost of a schedule under a weight matrix, summed from T forward.
double schedule_cost(const std::vector<int>& grid, std::span<const double> weights,
                     const TimestepSchedule& schedule);

enum class ProtocolMode : std::uint8_t { mean = 0, min = 1, max = 2, scaled = 3 };

std::string to_string(ProtocolMode m);

struct ProtocolStep {
    int t = 0;
    double kl_bits = 0.0;
    int n_chunks = 1;
    int budget_bits = 1;
};

struct ProtocolParams {
    double target_bits_per_chunk = 16.0;
    int extra_bits = 0;
    int max_budget_bits = 24;
};

/// Pre-shared per-step table. steps[0] sends x_T; steps[k] sends x_{schedule[k]}.
struct DklProtocolTable {
    std::string noise;  // NoiseSchedule::describe()
    int dimension = 0;
    ProtocolMode mode = ProtocolMode::mean;
    double kappa = 1.0;
    ProtocolParams params;
    std::vector<ProtocolStep> steps;

    TimestepSchedule schedule() const;
    int t_final() const { return steps.back().t; }
    std::uint64_t payload_bits() const noexcept;
    double kl_total() const noexcept;
};

/// Chunk count max(1, round(I / target)) clamped to the dimension, then
/// budget max(1, round(I_c + log2(max(I_c, 1)))) + extra, capped.
ProtocolStep protocol_step(int t, double kl_bits, int dimension, const ProtocolParams& params);

DklProtocolTable build_protocol(const KlCostTable& table, const TimestepSchedule& schedule,
                                const NoiseSchedule& s, int dimension, ProtocolMode mode, double kappa = 1.0,
                                const ProtocolParams& params = {});

/// Copy of `base` with every KL multiplied by kappa and chunks/budgets rederived.
DklProtocolTable scale_protocol(const DklProtocolTable& base, double kappa);

std::string format_protocol(const DklProtocolTable& p);
DklProtocolTable parse_protocol(const std::string& text);
DklProtocolTable load_protocol(const std::string& path);
/// FNV-1a 64 of format_protocol(p).
std::uint64_t protocol_hash(const DklProtocolTable& p);

std::string format_schedule(const TimestepSchedule& schedule, const NoiseSchedule& s);
TimestepSchedule parse_schedule(const std::string& text, const NoiseSchedule* check = nullptr);
TimestepSchedule load_schedule(const std::string& path, const NoiseSchedule* check = nullptr);

/// Throws ParameterError unless strictly descending, starting at s.steps(), ending >= 1.
void validate_schedule(const TimestepSchedule& schedule, const NoiseSchedule& s);

/// Reconstructs the noise schedule named by a protocol's "noise" line.
NoiseSchedule noise_from_description(const std::string& description);

std::string read_text_file(const std::string& path, const char* what);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace diffc
