#include "diffc/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "diffc/error.hpp"
#include "diffc/parallel.hpp"
#include "diffc/philox.hpp"

namespace diffc {

namespace {

constexpr std::uint64_t kSyntheticBit = std::uint64_t{1} << 60;

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

PgmImage parse_pgm(const std::string& bytes) {
    std::size_t pos = 0;
    auto skip = [&] {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            return;
        }
    };
    auto number = [&] {
        skip();
        long long v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + (bytes[pos++] - '0');
            if (++digits > 9) throw FormatError("PGM header number too large");
        }
        if (digits == 0) throw FormatError("malformed PGM header");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5) file");
    pos = 2;
    PgmImage img;
    const long long w = number(), h = number(), maxval = number();
    if (w < 1 || h < 1 || w * h > (1LL << 28)) throw FormatError("unsupported PGM size");
    if (maxval != 255) throw FormatError("only 8-bit PGM (maxval 255) is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("malformed PGM header");
    ++pos;
    const auto n = static_cast<std::size_t>(w * h);
    if (bytes.size() - pos < n) throw FormatError("PGM pixel data truncated");
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    return img;
}

PgmImage read_pgm(const std::string& path) { return parse_pgm(read_all(path)); }

void write_pgm(const std::string& path, const PgmImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

Vector pixels_to_vector(const std::vector<std::uint8_t>& pixels) {
    Vector v(pixels.size());
    for (std::size_t k = 0; k < pixels.size(); ++k) v[k] = static_cast<float>(pixels[k] / 127.5 - 1.0);
    return v;
}

std::vector<std::uint8_t> vector_to_pixels(std::span<const float> v) {
    std::vector<std::uint8_t> p(v.size());
    for (std::size_t k = 0; k < v.size(); ++k)
        p[k] = static_cast<std::uint8_t>(std::clamp(std::round((v[k] + 1.0) * 127.5), 0.0, 255.0));
    return p;
}

Dataset read_vectors(const std::string& path) {
    const std::string bytes = read_all(path);
    if (bytes.size() < 16 || bytes.compare(0, 4, "DFV1") != 0) throw FormatError("not a DFV1 vector file");
    auto le = [&](std::size_t at, std::size_t n) {
        std::uint64_t v = 0;
        for (std::size_t k = 0; k < n; ++k) v |= std::uint64_t{static_cast<unsigned char>(bytes[at + k])} << (8 * k);
        return v;
    };
    const std::uint64_t dim = le(4, 4), count = le(8, 8);
    if (dim < 1) throw FormatError("vector dimension must be positive");
    if (count > (bytes.size() - 16) / 4 / dim || (bytes.size() - 16) != count * dim * 4)
        throw FormatError("vector file size disagrees with its header");
    Dataset d;
    d.dimension = static_cast<int>(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        Vector v(dim);
        for (std::uint64_t k = 0; k < dim; ++k) {
            const auto bits = static_cast<std::uint32_t>(le(16 + 4 * (i * dim + k), 4));
            std::memcpy(&v[k], &bits, 4);
        }
        d.items.push_back(std::move(v));
        d.names.push_back("vec" + std::to_string(i));
    }
    return d;
}

void write_vectors(const std::string& path, const Dataset& data) {
    std::string bytes = "DFV1";
    auto put = [&](std::uint64_t v, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) bytes.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
    };
    put(static_cast<std::uint64_t>(data.dimension), 4);
    put(data.items.size(), 8);
    for (const auto& v : data.items) {
        if (static_cast<int>(v.size()) != data.dimension) throw ShapeError("items differ in dimension");
        for (float f : v) {
            std::uint32_t bits = 0;
            std::memcpy(&bits, &f, 4);
            put(bits, 4);
        }
    }
    write_text_file(path, bytes);
}

Dataset load_pgm_dataset(const std::vector<std::string>& paths) {
    Dataset d;
    d.pixels = true;
    int w = -1, h = -1;
    for (const auto& p : paths) {
        const PgmImage img = read_pgm(p);
        if (w >= 0 && (img.width != w || img.height != h)) throw ShapeError("PGM images differ in size");
        w = img.width;
        h = img.height;
        d.items.push_back(pixels_to_vector(img.pixels));
        d.names.push_back(p.substr(p.find_last_of('/') + 1));
    }
    d.dimension = w * h;
    return d;
}

Dataset load_dataset(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ParameterError("no dataset files given");
    const std::string head = read_all(paths[0]).substr(0, 4);
    if (head == "DFV1") {
        if (paths.size() != 1) throw ParameterError("give a single vector file");
        return read_vectors(paths[0]);
    }
    return load_pgm_dataset(paths);
}

GmmPrior synthetic_gmm(int dim, int K, double spread, double var, std::uint64_t seed) {
    if (dim < 1 || K < 1) throw ParameterError("synthetic mixture needs dim >= 1 and K >= 1");
    const philox::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    std::vector<GaussianComponent> comps(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        auto& c = comps[static_cast<std::size_t>(k)];
        c.weight = 1.0 / K;
        c.var = var;
        c.mean.resize(static_cast<std::size_t>(dim));
        for (int i = 0; i < dim; i += 4) {
            const auto w = philox::philox4x32(
                {static_cast<std::uint32_t>(i / 4), static_cast<std::uint32_t>(k), 0, 0x80000000u}, key);
            for (int q = 0; q < 4 && i + q < dim; ++q)
                c.mean[static_cast<std::size_t>(i + q)] = spread * (2.0 * philox::to_unit(w[static_cast<std::size_t>(q)]) - 1.0);
        }
    }
    // Equal weights 1/K sum to 1 within rounding; fix the last one exactly.
    double rest = 1.0;
    for (int k = 0; k + 1 < K; ++k) rest -= comps[static_cast<std::size_t>(k)].weight;
    comps.back().weight = rest;
    return GmmPrior(std::move(comps));
}

Dataset sample_gmm(const GmmPrior& prior, int count, std::uint64_t seed) {
    const SharedRandomness rng{seed};
    const int dim = prior.dimension();
    const auto& comps = prior.components();
    Dataset d;
    d.dimension = dim;
    for (int i = 0; i < count; ++i) {
        const auto w = philox::philox4x32({0, static_cast<std::uint32_t>(i), 1, 0x90000000u},
                                          {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
        const double u = philox::to_unit(w[0]);
        std::size_t k = 0;
        double acc = comps[0].weight;
        while (u > acc && k + 1 < comps.size()) acc += comps[++k].weight;
        const Vector z = candidate(rng, kSyntheticBit | static_cast<std::uint64_t>(i), 0, dim);
        Vector x(static_cast<std::size_t>(dim));
        const double sd = std::sqrt(comps[k].var);
        for (int j = 0; j < dim; ++j)
            x[static_cast<std::size_t>(j)] =
                static_cast<float>(comps[k].mean[static_cast<std::size_t>(j)] + sd * z[static_cast<std::size_t>(j)]);
        d.items.push_back(std::move(x));
        d.names.push_back("gmm" + std::to_string(i));
    }
    return d;
}

double mse(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("MSE operands differ in dimension");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - b[k];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

double psnr_db(std::span<const float> original, std::span<const float> recon, bool pixels) {
    if (!pixels) {
        const double m = mse(original, recon);
        return m > 0.0 ? 10.0 * std::log10(4.0 / m) : std::numeric_limits<double>::infinity();
    }
    const auto a = vector_to_pixels(original), b = vector_to_pixels(recon);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - b[k];
        s += d * d;
    }
    const double m = s / static_cast<double>(a.size());
    return m > 0.0 ? 10.0 * std::log10(255.0 * 255.0 / m) : std::numeric_limits<double>::infinity();
}

std::vector<RdRow> rd_sweep(const Dataset& data, const PriorModel& prior, const NoiseSchedule& s,
                            const std::vector<RdPlan>& plans, const RdOptions& opts) {
    if (data.dimension != prior.dimension()) throw ShapeError("dataset and prior differ in dimension");
    const std::size_t n = data.items.size();
    std::vector<RdRow> rows(plans.size() * n);
    for (std::size_t p = 0; p < plans.size(); ++p) {
        const auto& protocol = plans[p].protocol;
        parallel_ranges(n, opts.workers, [&](int, std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                EncodeConfig cfg;
                cfg.protocol = protocol;
                cfg.schedule = protocol.schedule();
                cfg.t_final = protocol.t_final();
                cfg.seed = opts.seed + i;
                cfg.denoiser = opts.denoiser;
                cfg.flow_steps = opts.flow_steps;
                const EncodeResult enc = encode(data.items[i], prior, cfg, s);
                const Vector recon =
                    reconstruct(enc.x_final, prior, s, opts.denoiser, opts.flow_steps, cfg.seed);
                RdRow& r = rows[p * n + i];
                r.image = i < data.names.size() ? data.names[i] : std::to_string(i);
                r.t_final = cfg.t_final;
                r.n_steps = static_cast<int>(cfg.schedule.size());
                r.denoiser = to_string(opts.denoiser);
                r.actual_bits = enc.stream.payload_bits();
                r.ideal_bits = enc.ideal_bits();
                r.bits_per_dim = static_cast<double>(r.actual_bits) / data.dimension;
                r.mse = mse(data.items[i], recon);
                r.psnr_db = psnr_db(data.items[i], recon, data.pixels);
            }
        });
    }
    return rows;
}

void write_rd_csv(std::ostream& out, const std::vector<RdRow>& rows) {
    out << kRdHeader << '\n';
    for (const auto& r : rows) {
        if (r.image.find_first_of(",\"\n") != std::string::npos)
            throw FormatError("image name '" + r.image + "' cannot be written to CSV");
        out << kRdSchema << ',' << r.image << ',' << r.t_final << ',' << r.n_steps << ',' << r.denoiser << ','
            << r.actual_bits << ',' << g17(r.ideal_bits) << ',' << g17(r.bits_per_dim) << ',' << g17(r.mse) << ','
            << g17(r.psnr_db) << '\n';
    }
}

std::vector<RdRow> read_rd_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kRdHeader) throw FormatError("unexpected RD CSV header");
    std::vector<RdRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 10 || f[0] != kRdSchema) throw FormatError("bad RD CSV row: " + line);
        RdRow r;
        try {
            r.image = f[1];
            r.t_final = std::stoi(f[2]);
            r.n_steps = std::stoi(f[3]);
            r.denoiser = f[4];
            r.actual_bits = std::stoull(f[5]);
            r.ideal_bits = std::stod(f[6]);
            r.bits_per_dim = std::stod(f[7]);
            r.mse = std::stod(f[8]);
            r.psnr_db = std::stod(f[9]);
        } catch (const std::exception&) {
            throw FormatError("bad RD CSV row: " + line);
        }
        rows.push_back(r);
    }
    return rows;
}

DklProtocolTable truncate_protocol(const DklProtocolTable& p, int t_final) {
    DklProtocolTable out = p;
    const auto it = std::find_if(out.steps.begin(), out.steps.end(), [&](const ProtocolStep& st) { return st.t == t_final; });
    if (it == out.steps.end())
        throw ConfigError("t_final " + std::to_string(t_final) + " is not on the protocol's schedule");
    out.steps.erase(it + 1, out.steps.end());
    return out;
}

}  // namespace diffc
