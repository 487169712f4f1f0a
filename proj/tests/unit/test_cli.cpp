#include "flsim/cli.hpp"

#include <gtest/gtest.h>
#include <zlib.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

using namespace flsim;
using namespace flsim::cli;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result call(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = main_with_args(args, out, err);
    return {code, out.str(), err.str()};
}

std::filesystem::path scratch(const std::string& name)
{
    auto p = std::filesystem::temp_directory_path() / ("flsim_cli_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::vector<std::string> tiny_run_flags()
{
    return {"--model", "toy", "-K", "4", "-T", "3", "--topology", "ring", "--dataset", "synth-radar:80",
            "--valset", "synth-radar:20", "--workers", "1"};
}

std::uint32_t be32(const std::vector<char>& b, std::size_t at)
{
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
    return v;
}

} // namespace

TEST(Args, LegacyFlagNames)
{
    const auto inv = parse_args({"run", "-l1", "0.025", "-l2", "0.02", "-K", "40", "-N", "2", "-T", "40", "-ro", "0.99"});
    EXPECT_EQ(inv.subcommand, "run");
    const auto cfg = config_from_settings(inv.settings);
    EXPECT_EQ(cfg.algo, Algorithm::cfa_ge);
    EXPECT_EQ(cfg.model, "cnn");
    EXPECT_EQ(cfg.K, 40u);
    EXPECT_EQ(cfg.N, 2u);
    EXPECT_EQ(cfg.T, 40u);
    EXPECT_EQ(cfg.hyper.ro, 0.99);
    EXPECT_EQ(cfg.hyper.grad_rates, (std::vector<double>{0.025, 0.02}));
}

TEST(Args, DefaultsAndLongForms)
{
    const auto cfg = config_from_settings(parse_args({"run"}).settings);
    EXPECT_EQ(cfg.K, 80u);
    EXPECT_EQ(cfg.N, 2u);
    EXPECT_EQ(cfg.T, 60u);
    const auto inv = parse_args({"run", "--mu=0.01", "-eps", "0.4", "--algo", "cfa", "--seed", "9", "--out", "x"});
    const auto c2 = config_from_settings(inv.settings);
    EXPECT_EQ(c2.hyper.mu, 0.01);
    EXPECT_EQ(c2.hyper.mu_s, 0.01);
    EXPECT_EQ(c2.hyper.eps, 0.4);
    EXPECT_EQ(c2.algo, Algorithm::cfa);
    EXPECT_EQ(c2.seed, 9u);
    EXPECT_EQ(c2.out, "x");
}

TEST(Args, HelpExitsZero)
{
    for (auto args : {std::vector<std::string>{"-h"}, {"run", "-h"}, {"sweep", "--help"}}) {
        const auto r = call(args);
        EXPECT_EQ(r.code, kExitOk);
        EXPECT_FALSE(r.out.empty());
    }
    EXPECT_NE(call({"run", "-h"}).out.find("l1"), std::string::npos);
}

TEST(Args, ZeroNeighborsRejected)
{
    EXPECT_THROW(parse_args({"run", "--algo", "cfa", "-N", "0"}), UsageError);
    const auto r = call({"run", "--algo", "cfa", "-N", "0"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("neighbor"), std::string::npos);
}

TEST(Args, BadInputsAreUsageErrors)
{
    EXPECT_EQ(call({}).code, kExitUsage);
    EXPECT_EQ(call({"run", "--frobnicate", "1"}).code, kExitUsage);
    EXPECT_EQ(call({"run", "-mu", "fast"}).code, kExitUsage);
    EXPECT_EQ(call({"run", "--algo", "gossip"}).code, kExitUsage);
    EXPECT_EQ(call({"run", "-eps", "1.5"}).code, kExitUsage);
    EXPECT_EQ(call({"bench-overhead", "--bits", "12"}).code, kExitUsage);
    EXPECT_EQ(call({"teleport"}).code, kExitUsage);
}

TEST(Args, FlagsOverrideConfigFile)
{
    const auto dir = scratch("conf");
    std::ofstream(dir / "a.conf") << "# base\nK = 12\nT=7\nmu = 0.05  # local\nalgo=cfa\n";
    const auto inv = parse_args({"run", "--config", (dir / "a.conf").string(), "-T", "9"});
    const auto cfg = config_from_settings(inv.settings);
    EXPECT_EQ(cfg.K, 12u);
    EXPECT_EQ(cfg.T, 9u);
    EXPECT_EQ(cfg.hyper.mu, 0.05);
    EXPECT_EQ(cfg.algo, Algorithm::cfa);

    std::ofstream(dir / "b.conf") << "K=12\nspeed=3\n";
    EXPECT_THROW(parse_args({"run", "--config", (dir / "b.conf").string()}), UsageError);
    EXPECT_THROW(parse_args({"run", "--config", (dir / "missing.conf").string()}), UsageError);
}

TEST(Settings, ParsingRules)
{
    const auto s = parse_settings("a=1\n  # note\n\nb = x y # tail\n");
    EXPECT_EQ(s.at("a"), "1");
    EXPECT_EQ(s.at("b"), "x y");
    EXPECT_THROW(parse_settings("novalue\n"), ConfigError);
    EXPECT_THROW(parse_settings("=3\n"), ConfigError);
    EXPECT_THROW(config_from_settings({{"K", "4x"}}), ConfigError);
    EXPECT_THROW(config_from_settings({{"partition", "weird"}}), ConfigError);
}

TEST(Settings, PartitionAndShardSizes)
{
    const auto c = config_from_settings({{"partition", "noniid:2-4"}, {"Ek", "25"}});
    EXPECT_EQ(c.partition.scheme, PartitionScheme::noniid);
    EXPECT_EQ(c.partition.min_classes, 2u);
    EXPECT_EQ(c.partition.max_classes, 4u);
    EXPECT_EQ(c.partition.per_node, 25u);
    const auto d = config_from_settings({{"K", "3"}, {"Ek", "10,20,30"}});
    EXPECT_EQ(d.partition.sizes, (std::vector<std::size_t>{10, 20, 30}));
}

TEST(Settings, DefaultsFollowNetworkSize)
{
    EXPECT_EQ(config_from_settings({{"K", "4"}}).hyper.eps, 1.0);
    EXPECT_EQ(config_from_settings({{"K", "20"}}).hyper.ro, 0.95);
    EXPECT_EQ(config_from_settings({{"K", "80"}}).hyper.ro, 0.9);
}

TEST(Settings, HashIgnoresOutputLocation)
{
    EXPECT_EQ(config_hash({{"K", "4"}, {"out", "a"}}), config_hash({{"K", "4"}, {"out", "b"}, {"workers", "3"}}));
    EXPECT_NE(config_hash({{"K", "4"}}), config_hash({{"K", "5"}}));
}

TEST(Sweep, GridExpansionAndDedup)
{
    const auto axes = parse_grid({"l1=0.05,0.1,0.15,0.2", "N=2,6,10"});
    EXPECT_EQ(expand_grid({}, axes).size(), 12u);
    EXPECT_EQ(expand_grid({}, parse_grid({"l1=0.1,0.1"})).size(), 1u);
    EXPECT_EQ(expand_grid({{"l1", "0.1"}}, parse_grid({"l1=0.1", "T=5,5"})).size(), 1u);
    EXPECT_THROW(parse_grid({"l1"}), UsageError);
}

TEST(Sweep, SinglePointMatchesRun)
{
    Settings base{{"model", "toy"}, {"K", "4"}, {"T", "2"}, {"topology", "ring"}, {"dataset", "synth-radar:80"},
                  {"valset", "synth-radar:20"}, {"workers", "1"}};
    const auto rows = run_sweep(base, parse_grid({"mu=0.05"}), 1);
    ASSERT_EQ(rows.size(), 1u);
    ASSERT_TRUE(rows[0].ok);
    auto point = base;
    point["mu"] = "0.05";
    EXPECT_EQ(metrics_csv(rows[0].metrics), metrics_csv(run(config_from_settings(point)).metrics));
}

TEST(Sweep, FailedPointOnlyPoisonsItsRow)
{
    Settings base{{"model", "toy"}, {"K", "4"}, {"T", "2"}, {"topology", "ring"}, {"dataset", "synth-radar:80"},
                  {"valset", "synth-radar:20"}, {"workers", "1"}};
    const auto axes = parse_grid({"B=5,500"});
    const auto rows = run_sweep(base, axes, 2);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_TRUE(rows[0].ok);
    EXPECT_FALSE(rows[1].ok);
    EXPECT_NE(rows[1].error.find("batch size"), std::string::npos);
    const auto csv = sweep_csv(axes, rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), std::string("B,status,") + std::string(kMetricsHeader));
    EXPECT_NE(csv.find("500,failed: "), std::string::npos);
    EXPECT_NE(csv.find("5,ok,0,0,cfa-ge,"), std::string::npos);
}

TEST(Sweep, CommandWritesCsv)
{
    const auto dir = scratch("sweep");
    auto args = std::vector<std::string>{"sweep", "--grid", "eps=0.3,0.6", "--out", dir.string()};
    for (auto f : tiny_run_flags()) args.push_back(f);
    const auto r = call(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("2 points, 0 failed"), std::string::npos);
    std::ifstream in(dir / "sweep.csv");
    std::size_t lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 1u + 2u * 4u * 4u);
}

TEST(ConvertCheck, AcceptsValidFileAndChecksExpectations)
{
    const auto dir = scratch("convert");
    const auto path = (dir / "radar.flds").string();
    auto r = call({"synth", "--kind", "radar", "-n", "24", "--seed", "5", "--out", path});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    r = call({"convert-check", path, "--expect-count", "24", "--expect-dim", "512", "--expect-classes", "8"});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("count=24 dim=512 classes=8"), std::string::npos);
    EXPECT_NE(r.out.find("class 7: 3"), std::string::npos);

    r = call({"convert-check", path, "--expect-count", "16000"});
    EXPECT_EQ(r.code, kExitFailure);
    EXPECT_NE(r.err.find("expected count 16000"), std::string::npos);
}

TEST(ConvertCheck, RejectsCorruptFiles)
{
    const auto dir = scratch("corrupt");
    Dataset ds;
    ds.feature_dim = 2;
    ds.class_count = 8;
    ds.examples = {{{1.0, 2.0}, 7}};
    auto bytes = encode_native(ds);
    bytes[bytes.size() - 2] = 8; // label out of range
    write_file((dir / "bad.flds").string(), bytes);
    auto r = call({"convert-check", (dir / "bad.flds").string()});
    EXPECT_EQ(r.code, kExitFailure);
    EXPECT_NE(r.err.find("byte offset"), std::string::npos);
    EXPECT_EQ(call({"convert-check", (dir / "nothing.flds").string()}).code, kExitFailure);
    EXPECT_EQ(call({"convert-check"}).code, kExitUsage);
}

TEST(BenchOverhead, PrintsTable)
{
    const auto r = call({"bench-overhead"});
    ASSERT_EQ(r.code, kExitOk);
    EXPECT_NE(r.out.find("cnn,cfa,-,1488,2976,2.98"), std::string::npos);
    EXPECT_NE(r.out.find("2nn,cfa-ge,10,16680,333600,333.60"), std::string::npos);
}

TEST(RunCommand, WritesOutputsPlotAndSummary)
{
    const auto dir = scratch("run");
    auto args = std::vector<std::string>{"run", "--out", (dir / "o").string(), "--plot", (dir / "loss.png").string(),
                                         "--target", "10"};
    for (auto f : tiny_run_flags()) args.push_back(f);
    const auto r = call(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("rounds to val_loss<=10: min=0 max=0 unreached=0"), std::string::npos);
    EXPECT_TRUE(std::filesystem::exists(dir / "o" / "metrics.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "o" / "node_003.flw"));
    std::ifstream curves(dir / "o" / "loss_curves.csv");
    std::string head;
    std::getline(curves, head);
    EXPECT_EQ(head, "round,node,val_loss");
    const auto png = read_file((dir / "loss.png").string());
    ASSERT_GT(png.size(), 33u);
    EXPECT_EQ(std::string(png.begin() + 1, png.begin() + 4), "PNG");
    EXPECT_EQ(be32(png, 16), 640u);
    EXPECT_EQ(be32(png, 20), 400u);
}

TEST(RunCommand, UnitEpsWarns)
{
    auto args = std::vector<std::string>{"run", "-eps", "1"};
    for (auto f : tiny_run_flags()) args.push_back(f);
    const auto r = call(args);
    EXPECT_EQ(r.code, kExitOk);
    EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(RunCommand, DivergenceExitCode)
{
    auto args = std::vector<std::string>{"run", "-mu", "1e300", "--algo", "isolated"};
    for (auto f : tiny_run_flags()) args.push_back(f);
    const auto r = call(args);
    EXPECT_EQ(r.code, kExitDiverged);
    EXPECT_NE(r.err.find("divergence"), std::string::npos);
}

TEST(Workers, EnvironmentCap)
{
    ::setenv("FLSIM_WORKERS", "2", 1);
    EXPECT_EQ(effective_workers(8), 2u);
    EXPECT_EQ(effective_workers(1), 1u);
    ::unsetenv("FLSIM_WORKERS");
    EXPECT_EQ(effective_workers(8), 8u);
}

TEST(Png, PixelsSurviveEncoding)
{
    Canvas c(5, 3);
    c.set(1, 2, {10, 20, 30});
    c.line(0, 0, 4, 0, {200, 0, 0});
    const auto png = c.encode_png();
    // chunk layout: signature, IHDR (25 bytes), IDAT
    const std::uint32_t zlen = be32(png, 33);
    EXPECT_EQ(std::string(png.begin() + 37, png.begin() + 41), "IDAT");
    std::vector<unsigned char> raw(3 * (5 * 3 + 1));
    uLongf rlen = raw.size();
    ASSERT_EQ(uncompress(raw.data(), &rlen, reinterpret_cast<const unsigned char*>(png.data() + 41), zlen), Z_OK);
    ASSERT_EQ(rlen, raw.size());
    const std::size_t row = 16;
    EXPECT_EQ(raw[0], 0);
    EXPECT_EQ(raw[1 + 3 * 4], 200);
    EXPECT_EQ(raw[2 * row + 1 + 3], 10);
    EXPECT_EQ(raw[2 * row + 1 + 5], 30);
    EXPECT_EQ(raw[row + 1], 255);
    const auto crc = crc32(0L, reinterpret_cast<const unsigned char*>(png.data() + 12), 17);
    EXPECT_EQ(be32(png, 29), crc);
}
