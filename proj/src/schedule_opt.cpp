#include "diffc/schedule_opt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "diffc/error.hpp"
#include "diffc/parallel.hpp"
#include "diffc/rcc.hpp"

namespace diffc {

namespace {

constexpr std::uint64_t kCalibrationBit = std::uint64_t{1} << 62;

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

KlCostTable::KlCostTable(std::vector<int> grid, std::size_t images)
    : grid_(std::move(grid)), images_(images), d_(images * grid_.size() * grid_.size(), 0.0),
      terminal_(images, 0.0) {}

std::size_t KlCostTable::position(int t) const {
    const auto it = std::find(grid_.begin(), grid_.end(), t);
    if (it == grid_.end()) throw ParameterError("timestep " + std::to_string(t) + " is not on the grid");
    return static_cast<std::size_t>(it - grid_.begin());
}

double& KlCostTable::at(std::size_t image, std::size_t a, std::size_t b) {
    return d_[(image * grid_.size() + a) * grid_.size() + b];
}

double KlCostTable::at(std::size_t image, std::size_t a, std::size_t b) const {
    return d_[(image * grid_.size() + a) * grid_.size() + b];
}

double KlCostTable::mean(std::size_t a, std::size_t b) const {
    double s = 0.0;
    for (std::size_t x = 0; x < images_; ++x) s += at(x, a, b);
    return s / static_cast<double>(images_);
}

double KlCostTable::min(std::size_t a, std::size_t b) const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < images_; ++x) m = std::min(m, at(x, a, b));
    return m;
}

double KlCostTable::max(std::size_t a, std::size_t b) const {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < images_; ++x) m = std::max(m, at(x, a, b));
    return m;
}

std::vector<int> default_grid(int T, int t_final) {
    if (t_final < 1 || t_final > T) throw ParameterError("t_final must lie in 1..T");
    const int stride = T <= 128 ? 1 : 5;
    std::vector<int> grid;
    for (int t = T; t > t_final; t -= stride) grid.push_back(t);
    grid.push_back(t_final);
    return grid;
}

KlCostTable estimate_kl_table(const PriorModel& prior, std::span<const Vector> images, const NoiseSchedule& s,
                              const std::vector<int>& grid, int t_final, std::uint64_t seed, int workers) {
    if (images.empty()) throw ParameterError("calibration set is empty");
    if (grid.empty() || grid.front() != s.steps()) throw ParameterError("grid must start at T");
    for (std::size_t a = 1; a < grid.size(); ++a)
        if (!(grid[a] < grid[a - 1])) throw ParameterError("grid must be strictly descending");
    if (std::find(grid.begin(), grid.end(), t_final) == grid.end())
        throw ParameterError("grid does not contain t_final");
    if (grid.back() < 1) throw ParameterError("grid timesteps must be >= 1");
    const int dim = prior.dimension();
    for (const auto& x : images)
        if (static_cast<int>(x.size()) != dim) throw ShapeError("calibration item has the wrong dimension");

    const std::size_t G = grid.size();
    KlCostTable table(grid, images.size());
    const double ab_T = s.alpha_bar(s.steps());
    parallel_ranges(images.size(), workers, [&](int, std::size_t begin, std::size_t end) {
        std::vector<double> err2(G);
        for (std::size_t x = begin; x < end; ++x) {
            const Vector& x0 = images[x];
            const Vector eps = candidate(SharedRandomness{seed}, kCalibrationBit | x, 0, dim);
            for (std::size_t a = 0; a + 1 < G; ++a) {
                const NoisySample xa = forward_marginal(x0, grid[a], s, eps);
                const Vector x0_hat = prior.predict_x0(xa.x, xa.t, s);
                double e = 0.0;
                for (int k = 0; k < dim; ++k) {
                    const double d = static_cast<double>(x0[static_cast<std::size_t>(k)]) -
                                     x0_hat[static_cast<std::size_t>(k)];
                    e += d * d;
                }
                err2[a] = e;
            }
            // Means differ only through x0 - x0_hat: KL = from_x0^2 |x0 - x0_hat|^2 / (2 var).
            for (std::size_t a = 0; a + 1 < G; ++a) {
                for (std::size_t b = a + 1; b < G; ++b) {
                    const StepCoefficients c = step_coefficients(s.alpha_bar(grid[a]), s.alpha_bar(grid[b]));
                    table.at(x, a, b) = c.from_x0 * c.from_x0 * err2[a] / (2.0 * c.variance) / std::numbers::ln2;
                }
            }
            double n2 = 0.0;
            for (float v : x0) n2 += static_cast<double>(v) * v;
            table.terminal(x) = ab_T * n2 / (2.0 * (1.0 - ab_T)) / std::numbers::ln2;
        }
    });
    return table;
}

double default_cost(double kl_bits) { return kl_bits + std::log2(std::max(kl_bits, 1.0)) + 5.0; }

ScheduleResult shortest_schedule(const std::vector<int>& grid, std::span<const double> weights, int t_final) {
    const std::size_t G = grid.size();
    if (weights.size() != G * G) throw ShapeError("weight matrix must be G x G");
    const auto it = std::find(grid.begin(), grid.end(), t_final);
    if (it == grid.end()) throw InfeasibleError("t_final " + std::to_string(t_final) + " is not on the grid");
    const std::size_t f = static_cast<std::size_t>(it - grid.begin());
    if (f == 0) return {{grid[0]}, 0.0};

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> cost(f + 1, inf);
    std::vector<std::size_t> edges(f + 1, 0);
    std::vector<std::vector<int>> path(f + 1);
    cost[0] = 0.0;
    path[0] = {grid[0]};
    for (std::size_t b = 1; b <= f; ++b) {
        for (std::size_t a = 0; a < b; ++a) {
            const double w = weights[a * G + b];
            if (cost[a] == inf || !std::isfinite(w)) continue;
            const double c = cost[a] + w;
            const std::size_t e = edges[a] + 1;
            bool better = c < cost[b] || (c == cost[b] && e < edges[b]);
            std::vector<int> cand;
            if (!better && c == cost[b] && e == edges[b]) {
                cand = path[a];
                cand.push_back(grid[b]);
                better = cand < path[b];
            }
            if (!better) continue;
            if (cand.empty()) {
                cand = path[a];
                cand.push_back(grid[b]);
            }
            cost[b] = c;
            edges[b] = e;
            path[b] = std::move(cand);
        }
    }
    if (cost[f] == inf) throw InfeasibleError("t_final " + std::to_string(t_final) + " is unreachable");
    return {path[f], cost[f]};
}

ScheduleResult optimal_schedule(const KlCostTable& table, const CostFn& cost_fn, int t_final) {
    const std::size_t G = table.nodes();
    std::vector<double> w(G * G, std::numeric_limits<double>::infinity());
    for (std::size_t a = 0; a < G; ++a)
        for (std::size_t b = a + 1; b < G; ++b) {
            double sum = 0.0;
            for (std::size_t x = 0; x < table.images(); ++x) sum += cost_fn(table.at(x, a, b));
            w[a * G + b] = sum / static_cast<double>(table.images());
        }
    return shortest_schedule(table.grid(), w, t_final);
}

double schedule_cost(const std::vector<int>& grid, std::span<const double> weights,
                     const TimestepSchedule& schedule) {
    const std::size_t G = grid.size();
    double c = 0.0;
    for (std::size_t k = 1; k < schedule.size(); ++k) {
        const auto a = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), schedule[k - 1]) - grid.begin());
        const auto b = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), schedule[k]) - grid.begin());
        if (a >= G || b >= G) throw ParameterError("schedule leaves the grid");
        c += weights[a * G + b];
    }
    return c;
}

std::string to_string(ProtocolMode m) {
    switch (m) {
        case ProtocolMode::mean:
            return "mean";
        case ProtocolMode::min:
            return "min";
        case ProtocolMode::max:
            return "max";
        case ProtocolMode::scaled:
            return "scaled";
    }
    return "unknown";
}

namespace {

ProtocolMode mode_from_string(const std::string& s) {
    if (s == "mean") return ProtocolMode::mean;
    if (s == "min") return ProtocolMode::min;
    if (s == "max") return ProtocolMode::max;
    if (s == "scaled") return ProtocolMode::scaled;
    throw FormatError("unknown protocol mode '" + s + "'");
}

}  // namespace

TimestepSchedule DklProtocolTable::schedule() const {
    TimestepSchedule s;
    for (const auto& st : steps) s.push_back(st.t);
    return s;
}

std::uint64_t DklProtocolTable::payload_bits() const noexcept {
    std::uint64_t bits = 0;
    for (const auto& st : steps)
        bits += static_cast<std::uint64_t>(st.n_chunks) * static_cast<std::uint64_t>(st.budget_bits);
    return bits;
}

double DklProtocolTable::kl_total() const noexcept {
    double s = 0.0;
    for (const auto& st : steps) s += st.kl_bits;
    return s;
}

ProtocolStep protocol_step(int t, double kl_bits, int dimension, const ProtocolParams& params) {
    if (!(params.target_bits_per_chunk > 0.0)) throw ParameterError("chunk target must be positive");
    if (params.max_budget_bits < 1 || params.max_budget_bits > kMaxBudgetBits)
        throw ParameterError("budget cap must be 1.." + std::to_string(kMaxBudgetBits));
    if (params.extra_bits < 0) throw ParameterError("extra bits must be >= 0");
    if (!(kl_bits >= 0.0) || !std::isfinite(kl_bits)) throw ParameterError("step KL must be finite and >= 0");
    if (dimension < 1) throw ParameterError("dimension must be positive");
    ProtocolStep st;
    st.t = t;
    st.kl_bits = kl_bits;
    const double n = std::clamp(std::round(kl_bits / params.target_bits_per_chunk), 1.0,
                                static_cast<double>(dimension));
    st.n_chunks = static_cast<int>(n);
    const double per = kl_bits / n;
    const double b = std::max(1.0, std::round(per + std::log2(std::max(per, 1.0)))) + params.extra_bits;
    st.budget_bits = static_cast<int>(std::min(b, static_cast<double>(params.max_budget_bits)));
    return st;
}

DklProtocolTable build_protocol(const KlCostTable& table, const TimestepSchedule& schedule, const NoiseSchedule& s,
                                int dimension, ProtocolMode mode, double kappa, const ProtocolParams& params) {
    validate_schedule(schedule, s);
    if (mode != ProtocolMode::scaled) kappa = 1.0;
    if (!(kappa > 0.0)) throw ParameterError("kappa must be positive");
    DklProtocolTable p;
    p.noise = s.describe();
    p.dimension = dimension;
    p.mode = mode;
    p.kappa = kappa;
    p.params = params;

    auto pick = [&](auto&& values) {
        double mean = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t x = 0; x < table.images(); ++x) {
            const double v = values(x);
            mean += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        mean /= static_cast<double>(table.images());
        switch (mode) {
            case ProtocolMode::min:
                return lo;
            case ProtocolMode::max:
                return hi;
            case ProtocolMode::scaled:
                return kappa * mean;
            case ProtocolMode::mean:
                break;
        }
        return mean;
    };

    p.steps.push_back(protocol_step(schedule[0], pick([&](std::size_t x) { return table.terminal(x); }), dimension,
                                    params));
    for (std::size_t k = 1; k < schedule.size(); ++k) {
        const std::size_t a = table.position(schedule[k - 1]);
        const std::size_t b = table.position(schedule[k]);
        p.steps.push_back(
            protocol_step(schedule[k], pick([&](std::size_t x) { return table.at(x, a, b); }), dimension, params));
    }
    return p;
}

DklProtocolTable scale_protocol(const DklProtocolTable& base, double kappa) {
    if (!(kappa > 0.0)) throw ParameterError("kappa must be positive");
    DklProtocolTable p = base;
    p.mode = ProtocolMode::scaled;
    p.kappa = base.kappa * kappa;
    for (auto& st : p.steps) st = protocol_step(st.t, st.kl_bits * kappa, p.dimension, p.params);
    return p;
}

std::string format_protocol(const DklProtocolTable& p) {
    std::ostringstream out;
    out << "diffc-protocol v1\n";
    out << "noise " << p.noise << '\n';
    out << "dimension " << p.dimension << '\n';
    out << "mode " << to_string(p.mode) << '\n';
    out << "kappa " << g17(p.kappa) << '\n';
    out << "target " << g17(p.params.target_bits_per_chunk) << '\n';
    out << "extra " << p.params.extra_bits << '\n';
    out << "max-budget " << p.params.max_budget_bits << '\n';
    out << "steps " << p.steps.size() << '\n';
    for (const auto& st : p.steps)
        out << st.t << ' ' << g17(st.kl_bits) << ' ' << st.n_chunks << ' ' << st.budget_bits << '\n';
    return out.str();
}

DklProtocolTable parse_protocol(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto next = [&](const std::string& key) {
        if (!std::getline(in, line)) throw ProtocolError("protocol ended before '" + key + "'");
        ++line_no;
        if (line.compare(0, key.size() + 1, key + " ") != 0)
            throw ProtocolError("protocol line " + std::to_string(line_no) + ": expected '" + key + "'");
        return line.substr(key.size() + 1);
    };
    auto integer = [&](const std::string& v) {
        std::size_t used = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != v.size() || x < 0 || x > std::numeric_limits<int>::max())
            throw ProtocolError("protocol line " + std::to_string(line_no) + ": bad integer '" + v + "'");
        return static_cast<int>(x);
    };
    auto real = [&](const std::string& v) {
        std::size_t used = 0;
        double x = 0;
        try {
            x = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != v.size() || !std::isfinite(x))
            throw ProtocolError("protocol line " + std::to_string(line_no) + ": bad number '" + v + "'");
        return x;
    };

    if (!std::getline(in, line) || line != "diffc-protocol v1") throw ProtocolError("not a diffc-protocol v1 file");
    ++line_no;
    DklProtocolTable p;
    p.noise = next("noise");
    p.dimension = integer(next("dimension"));
    try {
        p.mode = mode_from_string(next("mode"));
    } catch (const FormatError& e) {
        throw ProtocolError(e.what());
    }
    p.kappa = real(next("kappa"));
    p.params.target_bits_per_chunk = real(next("target"));
    p.params.extra_bits = integer(next("extra"));
    p.params.max_budget_bits = integer(next("max-budget"));
    const int count = integer(next("steps"));
    if (count < 1 || count > 1 << 20) throw ProtocolError("bad step count");
    for (int k = 0; k < count; ++k) {
        if (!std::getline(in, line)) throw ProtocolError("protocol has fewer steps than declared");
        ++line_no;
        std::istringstream f(line);
        std::string t, kl, n, b, extra;
        if (!(f >> t >> kl >> n >> b) || (f >> extra))
            throw ProtocolError("protocol line " + std::to_string(line_no) + ": expected 't kl n_chunks budget'");
        ProtocolStep st{integer(t), real(kl), integer(n), integer(b)};
        if (st.n_chunks < 1 || st.n_chunks > p.dimension) throw ProtocolError("chunk count out of range");
        if (st.budget_bits < 1 || st.budget_bits > kMaxBudgetBits) throw ProtocolError("budget out of range");
        if (!p.steps.empty() && !(st.t < p.steps.back().t)) throw ProtocolError("timesteps must descend");
        p.steps.push_back(st);
    }
    while (std::getline(in, line))
        if (!line.empty()) throw ProtocolError("trailing content after the step table");
    if (p.dimension < 1) throw ProtocolError("dimension must be positive");
    if (p.steps.back().t < 1) throw ProtocolError("t_final must be >= 1");
    return p;
}

std::string read_text_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(std::string("cannot open ") + what + " file '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write failed for '" + path + "'");
}

DklProtocolTable load_protocol(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ProtocolError("cannot open protocol file '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return parse_protocol(s.str());
}

std::uint64_t protocol_hash(const DklProtocolTable& p) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : format_protocol(p)) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

void validate_schedule(const TimestepSchedule& schedule, const NoiseSchedule& s) {
    if (schedule.empty()) throw ParameterError("empty schedule");
    if (schedule.front() != s.steps()) throw ParameterError("schedule must start at T");
    for (std::size_t k = 1; k < schedule.size(); ++k)
        if (!(schedule[k] < schedule[k - 1])) throw ParameterError("schedule must be strictly descending");
    if (schedule.back() < 1) throw ParameterError("t_final must be >= 1");
}

std::string format_schedule(const TimestepSchedule& schedule, const NoiseSchedule& s) {
    std::ostringstream out;
    out << "diffc-schedule v1\nnoise " << s.describe() << "\ntimesteps";
    for (int t : schedule) out << ' ' << t;
    out << '\n';
    return out.str();
}

TimestepSchedule parse_schedule(const std::string& text, const NoiseSchedule* check) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "diffc-schedule v1") throw FormatError("not a diffc-schedule v1 file");
    if (!std::getline(in, line) || line.rfind("noise ", 0) != 0) throw FormatError("schedule lacks a noise line");
    const std::string noise = line.substr(6);
    if (check && noise != check->describe())
        throw ConfigError("schedule was built for noise '" + noise + "', not '" + check->describe() + "'");
    if (!std::getline(in, line) || line.rfind("timesteps", 0) != 0) throw FormatError("schedule lacks timesteps");
    std::istringstream f(line.substr(9));
    TimestepSchedule out;
    long long t = 0;
    while (f >> t) {
        if (t < 0 || t > 65535) throw FormatError("timestep out of range");
        out.push_back(static_cast<int>(t));
    }
    if (!f.eof()) throw FormatError("bad timestep list");
    if (check) validate_schedule(out, *check);
    return out;
}

TimestepSchedule load_schedule(const std::string& path, const NoiseSchedule* check) {
    return parse_schedule(read_text_file(path, "schedule"), check);
}

NoiseSchedule noise_from_description(const std::string& description) {
    std::istringstream f(description);
    std::string kind;
    int T = 0;
    double bs = 0.0, be = 0.0;
    std::string extra;
    if (!(f >> kind >> T >> bs >> be) || (f >> extra)) throw ProtocolError("bad noise description '" + description + "'");
    return build_schedule(schedule_kind_from_string(kind), T, bs, be);
}

}  // namespace diffc
