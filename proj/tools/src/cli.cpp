#include "diffc_cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "diffc/bench.hpp"
#include "diffc/codec.hpp"
#include "diffc/error.hpp"
#include "diffc/parallel.hpp"
#include "diffc_oracle/acceptance.hpp"

namespace diffc::cli {

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

/// Schedule from --schedule if given (must match the protocol), else the protocol's own.
TimestepSchedule resolve_schedule(const std::string& path, const DklProtocolTable& protocol, const NoiseSchedule& s) {
    if (path.empty()) return protocol.schedule();
    auto sched = load_schedule(path, &s);
    if (sched != protocol.schedule()) throw ConfigError("schedule file and protocol timesteps differ");
    return sched;
}

/// Protocol prefix ending at t_final; -1 keeps the whole protocol.
DklProtocolTable at_t_final(const DklProtocolTable& p, int t_final) {
    return t_final < 0 || t_final == p.t_final() ? p : truncate_protocol(p, t_final);
}

struct EncodeArgs {
    std::string input, prior, schedule, protocol, output;
    std::size_t index = 0;
    std::uint64_t seed = 0;
    int t_final = -1;
};

void cmd_encode(const EncodeArgs& a, std::ostream& out) {
    const auto full = load_protocol(a.protocol);
    const auto protocol = at_t_final(full, a.t_final);
    const auto s = noise_from_description(protocol.noise);
    const auto prior = load_prior(a.prior);
    const auto data = load_dataset({a.input});
    if (a.index >= data.items.size()) throw ParameterError("input has no item " + std::to_string(a.index));

    EncodeConfig cfg;
    cfg.protocol = protocol;
    cfg.schedule = resolve_schedule(a.schedule, full, s);
    cfg.schedule.resize(protocol.steps.size());
    cfg.t_final = protocol.t_final();
    cfg.seed = a.seed;
    cfg.workers = default_workers();

    const auto start = std::chrono::steady_clock::now();
    const auto enc = encode(data.items[a.index], *prior, cfg, s);
    const auto bytes = serialize(enc.stream);
    const double ms = elapsed_ms(start);
    write_bytes(a.output, bytes);

    const auto bits = static_cast<double>(bytes.size()) * 8.0;
    out << "encoded t_final=" << cfg.t_final << " steps=" << cfg.schedule.size()
        << " total_bits=" << static_cast<std::uint64_t>(bits) << " payload_bits=" << enc.stream.payload_bits()
        << " bits_per_dim=" << fmt("%.6g", bits / prior->dimension())
        << " ideal_bits=" << fmt("%.6g", enc.ideal_bits()) << " bytes=" << bytes.size()
        << " wall_ms=" << fmt("%.1f", ms) << '\n';
    if (enc.protocol_mismatch)
        out << "warning: realized KL exceeded 8x the protocol at some step; the stream is still valid\n";
}

struct DecodeArgs {
    std::string input, prior, protocol, output, denoiser = "flow", pgm_shape;
    int flow_steps = 50;
};

void cmd_decode(const DecodeArgs& a, std::ostream& out) {
    const auto bytes = read_bytes(a.input);
    const auto header = parse_header(bytes);
    auto protocol = load_protocol(a.protocol);
    // Streams encoded at an earlier t_final reference a prefix of the protocol.
    if (header.t_final != protocol.t_final()) {
        const auto sched = protocol.schedule();
        if (std::find(sched.begin(), sched.end(), header.t_final) != sched.end())
            protocol = truncate_protocol(protocol, header.t_final);
    }
    const auto s = noise_from_description(protocol.noise);
    const auto prior = load_prior(a.prior);

    const auto start = std::chrono::steady_clock::now();
    const auto stream = parse(bytes, protocol);
    DecodeOptions opts;
    opts.denoiser = denoiser_from_string(a.denoiser);
    opts.flow_steps = a.flow_steps;
    opts.workers = default_workers();
    const auto dec = decode(stream, protocol, *prior, s, opts);
    const double ms = elapsed_ms(start);

    if (!a.pgm_shape.empty()) {
        int w = 0, h = 0;
        char x = 0;
        std::istringstream shape(a.pgm_shape);
        if (!(shape >> w >> x >> h) || x != 'x' || w < 1 || h < 1 ||
            static_cast<std::size_t>(w) * static_cast<std::size_t>(h) != dec.reconstruction.size())
            throw ParameterError("--pgm must be WxH matching the dimension " +
                                 std::to_string(dec.reconstruction.size()));
        write_pgm(a.output, PgmImage{w, h, vector_to_pixels(dec.reconstruction)});
    } else {
        Dataset d;
        d.dimension = static_cast<int>(dec.reconstruction.size());
        d.items.push_back(dec.reconstruction);
        write_vectors(a.output, d);
    }
    const auto bits = static_cast<double>(bytes.size()) * 8.0;
    out << "decoded t_final=" << dec.x_final.t << " total_bits=" << static_cast<std::uint64_t>(bits)
        << " payload_bits=" << stream.payload_bits()
        << " bits_per_dim=" << fmt("%.6g", bits / prior->dimension()) << " bytes=" << bytes.size()
        << " denoiser=" << a.denoiser << " wall_ms=" << fmt("%.1f", ms) << '\n';
}

struct OptimizeArgs {
    std::vector<std::string> dataset;
    std::string prior, schedule_out, protocol_out, mode = "mean";
    int T = 1000;
    int t_final = 100;
    std::uint64_t seed = 0;
    double kappa = 1.0;
    ProtocolParams params;
};

void cmd_optimize(const OptimizeArgs& a, std::ostream& out) {
    const auto prior = load_prior(a.prior);
    const auto data = load_dataset(a.dataset);
    const auto s = default_schedule(a.T);
    ProtocolMode mode = ProtocolMode::mean;
    for (auto m : {ProtocolMode::mean, ProtocolMode::min, ProtocolMode::max, ProtocolMode::scaled})
        if (to_string(m) == a.mode) mode = m;
    if (to_string(mode) != a.mode) throw ParameterError("unknown protocol mode '" + a.mode + "'");

    const auto start = std::chrono::steady_clock::now();
    const auto grid = default_grid(a.T, a.t_final);
    const auto table = estimate_kl_table(*prior, data.items, s, grid, a.t_final, a.seed, default_workers());
    const auto best = optimal_schedule(table, default_cost, a.t_final);
    const auto protocol = build_protocol(table, best.schedule, s, prior->dimension(), mode, a.kappa, a.params);
    write_text_file(a.schedule_out, format_schedule(best.schedule, s));
    write_text_file(a.protocol_out, format_protocol(protocol));
    out << "optimized steps=" << best.schedule.size() << " expected_cost=" << fmt("%.6g", best.cost)
        << " protocol_kl_bits=" << fmt("%.6g", protocol.kl_total()) << " payload_bits=" << protocol.payload_bits()
        << " calibration_items=" << data.items.size() << " wall_ms=" << fmt("%.1f", elapsed_ms(start)) << '\n';
}

struct RdArgs {
    std::vector<std::string> dataset;
    std::string prior, schedule, protocol, csv = "-", denoiser = "flow";
    std::vector<int> t_finals;
    int flow_steps = 50;
    std::uint64_t seed = 0;
};

void cmd_rd_curve(const RdArgs& a, std::ostream& out) {
    const auto protocol = load_protocol(a.protocol);
    const auto s = noise_from_description(protocol.noise);
    resolve_schedule(a.schedule, protocol, s);
    const auto prior = load_prior(a.prior);
    const auto data = load_dataset(a.dataset);

    std::vector<RdPlan> plans;
    for (int t : a.t_finals.empty() ? std::vector<int>{protocol.t_final()} : a.t_finals)
        plans.push_back({at_t_final(protocol, t)});
    RdOptions opts;
    opts.denoiser = denoiser_from_string(a.denoiser);
    opts.flow_steps = a.flow_steps;
    opts.seed = a.seed;
    opts.workers = default_workers();
    const auto rows = rd_sweep(data, *prior, s, plans, opts);

    if (a.csv == "-") {
        write_rd_csv(out, rows);
    } else {
        std::ofstream f(a.csv);
        if (!f) throw IoError("cannot write '" + a.csv + "'");
        write_rd_csv(f, rows);
        if (!f) throw IoError("write failed for '" + a.csv + "'");
        std::map<int, std::pair<double, double>> by_t;
        for (const auto& r : rows) {
            by_t[r.t_final].first += static_cast<double>(r.actual_bits);
            by_t[r.t_final].second += r.psnr_db;
        }
        const double n = static_cast<double>(data.items.size());
        for (auto it = by_t.rbegin(); it != by_t.rend(); ++it)
            out << "t_final=" << it->first << " mean_bits=" << fmt("%.6g", it->second.first / n)
                << " mean_psnr_db=" << fmt("%.4g", it->second.second / n) << '\n';
    }
}

struct SynthArgs {
    int dim = 64, components = 4, count = 200;
    double spread = 0.8, var = 0.04;
    std::uint64_t seed = 7, sample_seed = 1;
    std::string prior_out, data_out;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
    const auto prior = synthetic_gmm(a.dim, a.components, a.spread, a.var, a.seed);
    if (!a.prior_out.empty()) write_text_file(a.prior_out, format_prior(prior.components()));
    if (!a.data_out.empty()) write_vectors(a.data_out, sample_gmm(prior, a.count, a.sample_seed));
    out << "synthesized dim=" << a.dim << " components=" << a.components << " items=" << a.count << '\n';
}

}  // namespace

bool selftest(const oracle::KlFn& kl, const SelftestOptions& opts, std::ostream& out) {
    bool ok = true;
    for (const auto& c : oracle::oracle_suites(kl)) {
        out << "oracle " << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
        ok = ok && c.pass;
    }
    if (opts.oracles_only) return ok;
    std::vector<int> ids = opts.criteria.empty() ? acceptance::criterion_ids() : opts.criteria;
    if (opts.quick && opts.criteria.empty())
        std::erase_if(ids, [](int id) { return id == 1 || id == 2 || id == 7 || id == 9; });
    for (int id : ids) {
        try {
            const auto r = acceptance::run_criterion(id);
            out << acceptance::format_result(r) << std::endl;
            ok = ok && r.pass;
        } catch (const std::exception& e) {
            out << "criterion " << id << " FAIL error: " << e.what() << std::endl;
            ok = false;
        }
    }
    return ok;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"DiffC: lossy compression by communicating diffusion-model samples"};
    app.require_subcommand(1);

    EncodeArgs ea;
    auto* enc = app.add_subcommand("encode", "Encode one item to a bitstream");
    enc->add_option("--input", ea.input, "PGM image or DFV1 vector file")->required();
    enc->add_option("--index", ea.index, "Item within a vector file");
    enc->add_option("--prior", ea.prior, "Prior file")->required();
    enc->add_option("--schedule", ea.schedule, "Schedule file (defaults to the protocol's timesteps)");
    enc->add_option("--protocol", ea.protocol, "Protocol file")->required();
    enc->add_option("--seed", ea.seed, "Shared-randomness seed");
    enc->add_option("--t-final", ea.t_final, "Stop at this timestep (must be on the schedule)");
    enc->add_option("--output,-o", ea.output, "Bitstream path")->required();

    DecodeArgs da;
    auto* dec = app.add_subcommand("decode", "Decode a bitstream and denoise");
    dec->add_option("--input", da.input, "Bitstream path")->required();
    dec->add_option("--prior", da.prior, "Prior file")->required();
    dec->add_option("--protocol", da.protocol, "Protocol file")->required();
    dec->add_option("--denoiser", da.denoiser, "flow, ancestral or mse")
        ->check(CLI::IsMember({"flow", "ancestral", "mse"}));
    dec->add_option("--flow-steps", da.flow_steps, "DDIM steps for flow denoising")->check(CLI::PositiveNumber);
    dec->add_option("--pgm", da.pgm_shape, "Write a WxH PGM instead of a vector file");
    dec->add_option("--output,-o", da.output, "Reconstruction path")->required();

    OptimizeArgs oa;
    auto* opt = app.add_subcommand("optimize", "Calibrate step KLs, pick a schedule, write the protocol");
    opt->add_option("--dataset", oa.dataset, "Calibration PGMs or one vector file")->required();
    opt->add_option("--prior", oa.prior, "Prior file")->required();
    opt->add_option("--steps", oa.T, "Diffusion steps T (linear 1e-4..0.02)");
    opt->add_option("--t-final", oa.t_final, "Last timestep to communicate");
    opt->add_option("--seed", oa.seed, "Calibration seed");
    opt->add_option("--mode", oa.mode, "mean, min, max or scaled")->check(CLI::IsMember({"mean", "min", "max", "scaled"}));
    opt->add_option("--kappa", oa.kappa, "KL multiplier for scaled mode");
    opt->add_option("--target-bits", oa.params.target_bits_per_chunk, "Target KL per chunk");
    opt->add_option("--extra-bits", oa.params.extra_bits, "Bits added to every chunk budget");
    opt->add_option("--max-budget", oa.params.max_budget_bits, "Per-chunk budget cap");
    opt->add_option("--schedule-out", oa.schedule_out, "Schedule path")->required();
    opt->add_option("--protocol-out", oa.protocol_out, "Protocol path")->required();

    RdArgs ra;
    auto* rd = app.add_subcommand("rd-curve", "Rate-distortion sweep over t_final values");
    rd->add_option("--dataset", ra.dataset, "PGMs or one vector file")->required();
    rd->add_option("--prior", ra.prior, "Prior file")->required();
    rd->add_option("--schedule", ra.schedule, "Schedule file (checked against the protocol)");
    rd->add_option("--protocol", ra.protocol, "Protocol file")->required();
    rd->add_option("--t-final", ra.t_finals, "t_final values on the protocol's schedule (comma separated)")->delimiter(',');
    rd->add_option("--denoiser", ra.denoiser, "flow, ancestral or mse")
        ->check(CLI::IsMember({"flow", "ancestral", "mse"}));
    rd->add_option("--flow-steps", ra.flow_steps, "DDIM steps for flow denoising")->check(CLI::PositiveNumber);
    rd->add_option("--seed", ra.seed, "Seed of the first item (item i uses seed + i)");
    rd->add_option("--csv", ra.csv, "CSV path, or - for stdout");

    SynthArgs sa;
    auto* syn = app.add_subcommand("synth", "Write a synthetic mixture prior and samples from it");
    syn->add_option("--dim", sa.dim)->check(CLI::PositiveNumber);
    syn->add_option("--components", sa.components)->check(CLI::PositiveNumber);
    syn->add_option("--spread", sa.spread);
    syn->add_option("--var", sa.var);
    syn->add_option("--count", sa.count)->check(CLI::NonNegativeNumber);
    syn->add_option("--seed", sa.seed, "Mixture seed");
    syn->add_option("--sample-seed", sa.sample_seed, "Sampling seed");
    syn->add_option("--prior-out", sa.prior_out);
    syn->add_option("--data-out", sa.data_out);

    SelftestOptions so;
    auto* st = app.add_subcommand("selftest", "Oracle suites and acceptance criteria");
    st->add_flag("--quick", so.quick, "Skip the slow criteria (1, 2, 7, 9)");
    st->add_flag("--oracles-only", so.oracles_only, "Run only the oracle suites");
    st->add_option("--criterion,-c", so.criteria, "Criterion ids to run")->check(CLI::Range(1, 10));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*enc) cmd_encode(ea, out);
        else if (*dec) cmd_decode(da, out);
        else if (*opt) cmd_optimize(oa, out);
        else if (*rd) cmd_rd_curve(ra, out);
        else if (*syn) cmd_synth(sa, out);
        else if (*st) return selftest(kl_bits, so, out) ? 0 : 1;
    } catch (const Error& e) {
        err << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

}  // namespace diffc::cli
