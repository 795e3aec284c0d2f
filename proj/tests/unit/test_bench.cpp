#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "diffc/bench.hpp"
#include "diffc/error.hpp"
#include "diffc_cli/cli.hpp"
#include "diffc_oracle/oracles.hpp"

using namespace diffc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("diffc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

struct CliResult {
    int status = 0;
    std::string out, err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int status = cli::run(args, out, err);
    return {status, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Synthesizes a 16-dim mixture and calibrates a protocol into `dir`.
void setup_codec_files(const TempDir& dir) {
    REQUIRE(run_cli({"synth", "--dim", "16", "--components", "3", "--count", "30", "--prior-out", dir / "prior.txt",
                 "--data-out", dir / "data.dfv"})
                .status == 0);
    const auto r = run_cli({"optimize", "--dataset", dir / "data.dfv", "--prior", dir / "prior.txt", "--t-final", "100",
                        "--schedule-out", dir / "sched.txt", "--protocol-out", dir / "proto.txt"});
    REQUIRE(r.status == 0);
}

}  // namespace

TEST_SUITE("cli-bench") {

TEST_CASE("pgm parsing and writing") {
    static constexpr char raw[] = "P5\n# comment\n3 2\n255\n\x00\x10\x20\x30\x40\xff";
    const std::string bytes(raw, sizeof raw - 1);
    const auto img = parse_pgm(bytes);
    CHECK(img.width == 3);
    CHECK(img.height == 2);
    CHECK(img.pixels == std::vector<std::uint8_t>{0x00, 0x10, 0x20, 0x30, 0x40, 0xff});
    TempDir dir;
    write_pgm(dir / "a.pgm", img);
    const auto back = read_pgm(dir / "a.pgm");
    CHECK(back.pixels == img.pixels);
    CHECK(back.width == 3);

    CHECK_THROWS_AS(parse_pgm(std::string("P6\n1 1\n255\n\x00", 12)), FormatError);
    CHECK_THROWS_AS(parse_pgm(std::string("P5\n2 2\n255\n\x00", 12)), FormatError);
    CHECK_THROWS_AS(parse_pgm(std::string("P5\n1 1\n65535\n\x00\x00", 15)), FormatError);
    CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), IoError);
}

TEST_CASE("pixel mapping inverts up to quantization") {
    std::vector<std::uint8_t> px(256);
    for (int k = 0; k < 256; ++k) px[k] = static_cast<std::uint8_t>(k);
    const auto v = pixels_to_vector(px);
    CHECK(v.front() == -1.0f);
    CHECK(v.back() == 1.0f);
    CHECK(vector_to_pixels(v) == px);
    CHECK(vector_to_pixels(Vector{-3.0f, 3.0f}) == std::vector<std::uint8_t>{0, 255});
}

TEST_CASE("vector files round trip") {
    TempDir dir;
    Dataset d;
    d.dimension = 3;
    d.items = {{1.0f, -2.5f, 0.125f}, {0.0f, 3.0f, -1.0f}};
    write_vectors(dir / "v.dfv", d);
    CHECK(fs::file_size(dir / "v.dfv") == 16 + 2 * 3 * 4);
    const auto back = read_vectors(dir / "v.dfv");
    CHECK(back.dimension == 3);
    CHECK(back.items == d.items);
    CHECK(load_dataset({dir / "v.dfv"}).items == d.items);

    std::ofstream(dir / "bad.dfv", std::ios::binary) << "DFV1\x03";
    CHECK_THROWS_AS(read_vectors(dir / "bad.dfv"), FormatError);
    std::ofstream(dir / "junk.dfv", std::ios::binary) << "JUNK0000";
    CHECK_THROWS_AS(load_dataset({dir / "junk.dfv"}), FormatError);
}

TEST_CASE("psnr") {
    const Vector a{0.0f, 0.5f}, b{0.1f, 0.4f};
    CHECK(mse(a, b) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(psnr_db(a, b, false) == doctest::Approx(10 * std::log10(4.0 / 0.01)).epsilon(1e-6));
    CHECK(std::isinf(psnr_db(a, a, false)));
    // Pixel data: one pixel off by one level in two.
    const auto pa = pixels_to_vector({10, 20});
    const auto pb = pixels_to_vector({11, 20});
    CHECK(psnr_db(pa, pb, true) == doctest::Approx(10 * std::log10(255.0 * 255.0 / 0.5)).epsilon(1e-9));
    CHECK_THROWS_AS(mse(a, Vector{1.0f}), ShapeError);
}

TEST_CASE("synthetic mixtures are reproducible") {
    const auto p1 = synthetic_gmm(10, 3, 0.8, 0.04, 5);
    const auto p2 = synthetic_gmm(10, 3, 0.8, 0.04, 5);
    CHECK(format_prior(p1.components()) == format_prior(p2.components()));
    CHECK(sample_gmm(p1, 20, 3).items == sample_gmm(p2, 20, 3).items);
    CHECK(sample_gmm(p1, 20, 3).items != sample_gmm(p1, 20, 4).items);
    for (const auto& c : p1.components())
        for (double m : c.mean) CHECK(std::abs(m) <= 0.8);
}

TEST_CASE("rd csv round trip") {
    std::vector<RdRow> rows{{"a", 300, 5, "flow", 40, 31.5, 0.625, 0.01, 26.02},
                            {"b", 100, 9, "mse", 90, 88.25, 1.40625, 0.002, 33.0103}};
    std::stringstream ss;
    write_rd_csv(ss, rows);
    std::string header;
    std::getline(std::stringstream(ss.str()), header);
    CHECK(header == kRdHeader);
    const auto back = read_rd_csv(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[1].image == "b");
    CHECK(back[1].actual_bits == 90);
    CHECK(back[1].ideal_bits == 88.25);
    CHECK(back[0].psnr_db == 26.02);
    std::stringstream bad("schema,x\n");
    CHECK_THROWS_AS(read_rd_csv(bad), FormatError);
    std::vector<RdRow> comma{{"a,b", 1, 1, "flow", 1, 1, 1, 1, 1}};
    std::stringstream sink;
    CHECK_THROWS_AS(write_rd_csv(sink, comma), FormatError);
}

TEST_CASE("rate-distortion sweep") {
    const auto s = default_schedule(1000);
    const auto prior = synthetic_gmm(16, 4, 0.8, 0.04, 21);
    const auto data = sample_gmm(prior, 40, 22);
    const auto table = estimate_kl_table(prior, data.items, s, default_grid(1000, 100), 100, 1);
    const auto best = optimal_schedule(table, default_cost, 100);
    const auto full = build_protocol(table, best.schedule, s, 16, ProtocolMode::mean);
    std::vector<RdPlan> plans;
    for (int t : best.schedule)
        if (t <= 700) plans.push_back({truncate_protocol(full, t)});
    REQUIRE(plans.size() >= 2);
    RdOptions opts;
    opts.seed = 100;
    const auto rows = rd_sweep(data, prior, s, plans, opts);
    REQUIRE(rows.size() == plans.size() * 40);
    opts.workers = 3;
    const auto again = rd_sweep(data, prior, s, plans, opts);
    std::stringstream a, b;
    write_rd_csv(a, rows);
    write_rd_csv(b, again);
    CHECK(a.str() == b.str());

    double prev = -1e9;
    for (std::size_t p = 0; p < plans.size(); ++p) {
        double psnr = 0;
        for (std::size_t i = 0; i < 40; ++i) {
            const auto& r = rows[p * 40 + i];
            CHECK(r.t_final == plans[p].protocol.t_final());
            CHECK(r.actual_bits == plans[p].protocol.payload_bits());
            psnr += r.psnr_db;
        }
        CHECK(psnr / 40 >= prev);
        prev = psnr / 40;
    }
    CHECK_THROWS_AS(truncate_protocol(full, 3), ConfigError);
}

TEST_CASE("cli encode and decode") {
    TempDir dir;
    setup_codec_files(dir);
    const std::vector<std::string> enc{"encode", "--input", dir / "data.dfv", "--index", "4", "--prior",
                                       dir / "prior.txt", "--schedule", dir / "sched.txt", "--protocol",
                                       dir / "proto.txt", "--seed", "17", "--output", dir / "a.dfc"};
    const auto r1 = run_cli(enc);
    REQUIRE(r1.status == 0);
    CHECK(r1.out.find("payload_bits=") != std::string::npos);
    const auto first = slurp(dir / "a.dfc");
    REQUIRE(run_cli(enc).status == 0);
    CHECK(slurp(dir / "a.dfc") == first);

    // Reported total bits match the file.
    CHECK(r1.out.find("bytes=" + std::to_string(first.size())) != std::string::npos);
    CHECK(r1.out.find("total_bits=" + std::to_string(first.size() * 8)) != std::string::npos);

    const auto d = run_cli({"decode", "--input", dir / "a.dfc", "--prior", dir / "prior.txt", "--protocol",
                        dir / "proto.txt", "--output", dir / "a.dfv"});
    REQUIRE(d.status == 0);
    CHECK(d.out.find("bytes=" + std::to_string(first.size())) != std::string::npos);
    CHECK(read_vectors(dir / "a.dfv").items.size() == 1);

    // Encoding to an earlier t_final on the schedule and decoding with the full protocol.
    const auto sched = parse_schedule(read_text_file(dir / "sched.txt", "schedule"));
    if (sched.size() > 2) {
        auto early = enc;
        early.back() = dir / "b.dfc";
        early.push_back("--t-final");
        early.push_back(std::to_string(sched[1]));
        REQUIRE(run_cli(early).status == 0);
        CHECK(run_cli({"decode", "--input", dir / "b.dfc", "--prior", dir / "prior.txt", "--protocol", dir / "proto.txt",
                   "--denoiser", "mse", "--output", dir / "b.dfv"})
                  .status == 0);
    }
}

TEST_CASE("cli errors exit with status 2 and a category prefix") {
    TempDir dir;
    setup_codec_files(dir);
    const auto r = run_cli({"encode", "--input", dir / "data.dfv", "--prior", dir / "prior.txt", "--protocol",
                        dir / "missing.txt", "--output", dir / "x.dfc"});
    CHECK(r.status == 2);
    CHECK(r.err.rfind("protocol error", 0) == 0);

    const auto p = run_cli({"encode", "--input", dir / "data.dfv", "--prior", dir / "nope.txt", "--protocol",
                        dir / "proto.txt", "--output", dir / "x.dfc"});
    CHECK(p.status == 2);
    CHECK(p.err.rfind("io error", 0) == 0);

    std::ofstream(dir / "garbage.dfc", std::ios::binary) << "NOPE";
    const auto g = run_cli({"decode", "--input", dir / "garbage.dfc", "--prior", dir / "prior.txt", "--protocol",
                        dir / "proto.txt", "--output", dir / "x.dfv"});
    CHECK(g.status == 2);
    CHECK(g.err.rfind("bad magic", 0) == 0);

    CHECK(run_cli({"encode"}).status == 2);
    CHECK(run_cli({"frobnicate"}).status == 2);
    CHECK(run_cli({}).status == 2);
    CHECK(run_cli({"--help"}).status == 0);
}

TEST_CASE("cli rd-curve writes the fixed csv schema") {
    TempDir dir;
    setup_codec_files(dir);
    const auto sched = parse_schedule(read_text_file(dir / "sched.txt", "schedule"));
    std::vector<std::string> args{"rd-curve", "--dataset", dir / "data.dfv", "--prior", dir / "prior.txt",
                                  "--protocol", dir / "proto.txt", "--csv", dir / "rd.csv", "--t-final"};
    for (std::size_t k = sched.size() > 3 ? sched.size() - 3 : 0; k < sched.size(); ++k)
        args.push_back(std::to_string(sched[k]));
    const auto r = run_cli(args);
    REQUIRE(r.status == 0);
    CHECK(r.out.find("mean_psnr_db=") != std::string::npos);
    std::ifstream f(dir / "rd.csv");
    const auto rows = read_rd_csv(f);
    CHECK(rows.size() == 30 * (args.size() - 10));
}

TEST_CASE("selftest oracle suites pass and catch a broken KL") {
    std::ostringstream out;
    cli::SelftestOptions opts;
    opts.oracles_only = true;
    CHECK(cli::selftest(kl_bits, opts, out));
    CHECK(out.str().find("FAIL") == std::string::npos);

    // Canary: KL in nats instead of bits.
    const oracle::KlFn nats = [](const IsotropicGaussian& q, const IsotropicGaussian& p) {
        return kl_bits(q, p) * std::log(2.0);
    };
    std::ostringstream bad;
    CHECK_FALSE(cli::selftest(nats, opts, bad));
    CHECK(bad.str().find("FAIL kl") != std::string::npos);
}

TEST_CASE("selftest runs a requested criterion") {
    std::ostringstream out;
    cli::SelftestOptions opts;
    opts.criteria = {8};
    CHECK(cli::selftest(kl_bits, opts, out));
    CHECK(out.str().find("criterion 8 PASS") != std::string::npos);
}

}  // TEST_SUITE
