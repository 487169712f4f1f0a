#pragma once

#include "flsim/config.hpp"
#include "flsim/engine.hpp"
#include "flsim/plot.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace flsim::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Parsed command line. `settings` holds config-file keys overlaid by flags.
struct CliInvocation {
    std::string subcommand;
    Settings settings;
    std::string config_path;
    std::vector<std::string> grid; // sweep: key=v1,v2,...
    std::string plot;              // run: optional PNG path
    std::optional<double> target;  // run: loss threshold for the summary
    // synth
    std::string kind = "radar";
    std::size_t count = 1000;
    // convert-check
    std::string file;
    std::optional<std::size_t> expect_count, expect_dim, expect_classes;
    // bench-overhead
    unsigned bits = 16;
    bool help = false;
    std::string help_text;
};

/// "-l1" style multi-letter single-dash flags become "--l1".
inline std::vector<std::string> normalize_flags(std::vector<std::string> args)
{
    static const std::set<std::string> multi{"-l1", "-l2", "-mu", "-eps", "-ro"};
    for (auto& a : args) {
        const auto eq = a.find('=');
        const std::string head = a.substr(0, eq);
        if (multi.contains(head)) a = "-" + a;
    }
    return args;
}

namespace detail {

struct FlagBinding {
    std::string key;
    std::string value;
    CLI::Option* opt = nullptr;
};

inline void add_sim_flags(CLI::App& app, std::vector<FlagBinding>& b)
{
    struct Def {
        const char* flags;
        const char* key;
        const char* help;
        bool numeric;
    };
    static const Def defs[] = {
        {"--l1", "l1", "gradient-exchange rate, first trainable layer", true},
        {"--l2", "l2", "gradient-exchange rate, second trainable layer", true},
        {"--mu", "mu", "local SGD rate", true},
        {"--eps", "eps", "consensus step size", true},
        {"-K,--K", "K", "number of devices (default 80)", true},
        {"-N,--N", "N", "neighbors per device (default 2)", true},
        {"-T,--T", "T", "number of rounds (default 60)", true},
        {"--ro", "ro", "MEWMA parameter", true},
        {"--algo", "algo", "cfa | cfa-ge | fa | centralized | isolated", false},
        {"--model", "model", "cnn | 2nn | mnist-1fc | toy", false},
        {"--seed", "seed", "run seed", true},
        {"--out", "out", "output directory", false},
        {"--mu-s", "mu_s", "server rate (FA, centralized)", true},
        {"-B,--B", "B", "mini-batch size", true},
        {"--topology", "topology", "line | ring | full | kregular[:d] | file:PATH, phases a@0;b@30", false},
        {"--partition", "partition", "iid | noniid | noniid:LO-HI", false},
        {"--dataset", "dataset", "synth-radar:N | synth-digits:N | idx:IMG,LBL | FLDS path", false},
        {"--valset", "valset", "validation dataset, same forms as --dataset", false},
        {"--Ek", "Ek", "examples per device, or comma list", false},
        {"--noise", "noise", "synthetic data noise", true},
        {"--alternate", "alternate", "comma list of rounds run as FA", false},
        {"--momentum", "momentum", "none | classic | nesterov", false},
        {"--ro-momentum", "ro_momentum", "momentum decay", true},
        {"--quantize-bits", "quantize_bits", "8 | 16 | 32", true},
        {"--val-every", "val_every", "validation stride in rounds", true},
        {"--workers", "workers", "worker threads", true},
    };
    b.reserve(std::size(defs) + 4);
    for (const auto& d : defs) {
        b.push_back({d.key, {}, nullptr});
        auto* o = app.add_option(d.flags, b.back().value, d.help);
        if (d.numeric) o->check(CLI::Number);
        b.back().opt = o;
    }
}

inline void collect(const std::vector<FlagBinding>& b, Settings& s)
{
    for (const auto& f : b)
        if (f.opt->count() > 0) s[f.key] = f.value;
}

} // namespace detail

/// Parses argv (without the program name). Throws UsageError; sets `help`
/// with the rendered text for -h.
inline CliInvocation parse_args(const std::vector<std::string>& argv_in)
{
    CliInvocation inv;
    CLI::App app{"Decentralized federated learning simulator", "flsim"};
    app.require_subcommand(1);
    std::vector<detail::FlagBinding> run_flags, sweep_flags;
    bool timing = false, quantize_numerics = false;

    auto* run = app.add_subcommand("run", "run one simulation");
    run->add_option("--config", inv.config_path, "key=value config file");
    detail::add_sim_flags(*run, run_flags);
    run->add_flag("--timing", timing, "record per-node update time");
    run->add_flag("--quantize-numerics", quantize_numerics, "apply exchange quantization to the numbers");
    run->add_option("--plot", inv.plot, "write a PNG of the validation loss curves");
    run->add_option("--target", inv.target, "report rounds to reach this validation loss");

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset as FLDS");
    synth->add_option("--kind", inv.kind, "radar | digits")->check(CLI::IsMember({"radar", "digits"}));
    synth->add_option("-n,--count", inv.count, "number of examples")->check(CLI::PositiveNumber);
    synth->add_option("--seed", inv.settings["seed"], "seed");
    synth->add_option("--noise", inv.settings["noise"], "noise level")->check(CLI::Number);
    synth->add_option("--out", inv.file, "output path")->required();

    auto* check = app.add_subcommand("convert-check", "validate an FLDS file");
    check->add_option("file", inv.file, "FLDS file")->required();
    check->add_option("--expect-count", inv.expect_count, "required example count");
    check->add_option("--expect-dim", inv.expect_dim, "required feature length");
    check->add_option("--expect-classes", inv.expect_classes, "required class count");

    auto* bench = app.add_subcommand("bench-overhead", "print per-round transmitted bytes");
    bench->add_option("--bits", inv.bits, "bits per parameter")->check(CLI::IsMember({8u, 16u, 32u}));

    auto* sweep = app.add_subcommand("sweep", "run a grid of configurations");
    sweep->add_option("--config", inv.config_path, "base config file");
    detail::add_sim_flags(*sweep, sweep_flags);
    sweep->add_option("--grid", inv.grid, "key=v1,v2,... (repeatable)")->required();

    std::vector<std::string> args = normalize_flags(argv_in);
    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        inv.help = true;
        inv.help_text = (app.get_subcommands().empty() ? &app : app.get_subcommands().front())->help();
        return inv;
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    const CLI::App* sub = app.get_subcommands().front();
    inv.subcommand = sub->get_name();
    if (inv.subcommand == "synth") {
        if (inv.settings["seed"].empty()) inv.settings.erase("seed");
        if (inv.settings["noise"].empty()) inv.settings.erase("noise");
        return inv;
    }
    if (inv.subcommand == "run" || inv.subcommand == "sweep") {
        Settings s;
        if (!inv.config_path.empty()) {
            try {
                s = load_settings(inv.config_path);
            } catch (const ConfigError& e) {
                throw UsageError(e.what());
            }
        }
        detail::collect(inv.subcommand == "run" ? run_flags : sweep_flags, s);
        if (timing) s["timing"] = "1";
        if (quantize_numerics) s["quantize_numerics"] = "1";
        inv.settings = std::move(s);
        try {
            config_from_settings(inv.settings).validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        for (const auto& g : inv.grid)
            if (g.find('=') == std::string::npos) throw UsageError("--grid expects key=v1,v2,... got '" + g + "'");
    }
    return inv;
}

/// Worker count: the requested value (0 = hardware), capped by FLSIM_WORKERS.
inline std::size_t effective_workers(std::size_t requested)
{
    std::size_t w = requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
    if (const char* env = std::getenv("FLSIM_WORKERS")) {
        try {
            const auto cap = std::stoul(env);
            if (cap > 0) w = std::min<std::size_t>(w, cap);
        } catch (const std::exception&) {
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct GridAxis {
    std::string key;
    std::vector<std::string> values;
};

inline std::vector<GridAxis> parse_grid(const std::vector<std::string>& specs)
{
    std::vector<GridAxis> axes;
    for (const auto& g : specs) {
        const auto eq = g.find('=');
        if (eq == std::string::npos) throw UsageError("grid axis needs key=values: " + g);
        GridAxis a{trim(g.substr(0, eq)), {}};
        std::istringstream in(g.substr(eq + 1));
        std::string v;
        while (std::getline(in, v, ',')) {
            v = trim(v);
            if (!v.empty()) a.values.push_back(v);
        }
        if (a.values.empty()) throw UsageError("grid axis '" + a.key + "' has no values");
        axes.push_back(std::move(a));
    }
    if (axes.empty()) throw UsageError("empty grid");
    return axes;
}

/// Cartesian product over the axes, deduplicated by config hash (first kept).
inline std::vector<Settings> expand_grid(const Settings& base, const std::vector<GridAxis>& axes)
{
    std::vector<Settings> points{base};
    for (const auto& a : axes) {
        std::vector<Settings> next;
        for (const auto& p : points)
            for (const auto& v : a.values) {
                Settings s = p;
                s[a.key] = v;
                next.push_back(std::move(s));
            }
        points = std::move(next);
    }
    std::set<std::uint64_t> seen;
    std::vector<Settings> unique;
    for (auto& p : points)
        if (seen.insert(config_hash(p)).second) unique.push_back(std::move(p));
    return unique;
}

struct SweepRow {
    Settings point;
    bool ok = false;
    std::string error;
    std::vector<RoundMetrics> metrics;
};

/// Runs every grid point; a failing point yields a failed row, the rest go on.
inline std::vector<SweepRow> run_sweep(const Settings& base, const std::vector<GridAxis>& axes, std::size_t workers)
{
    const auto points = expand_grid(base, axes);
    std::vector<SweepRow> rows(points.size());
    // one worker per point; each engine runs single-threaded inside
    parallel_for(points.size(), workers, [&](std::size_t i) {
        rows[i].point = points[i];
        try {
            SimConfig c = config_from_settings(points[i]);
            c.workers = 1;
            rows[i].metrics = run(c).metrics;
            rows[i].ok = true;
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });
    return rows;
}

inline std::string csv_field(const std::string& v)
{
    if (v.find_first_of(",\"\n") == std::string::npos) return v;
    std::string out = "\"";
    for (char ch : v) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

/// Grid columns, status, then the metrics columns.
inline std::string sweep_csv(const std::vector<GridAxis>& axes, const std::vector<SweepRow>& rows)
{
    std::string out;
    for (const auto& a : axes) out += a.key + ",";
    out += "status,";
    out += kMetricsHeader;
    out += '\n';
    for (const auto& r : rows) {
        std::string prefix;
        for (const auto& a : axes) prefix += csv_field(r.point.at(a.key)) + ",";
        if (!r.ok) {
            out += prefix + csv_field("failed: " + r.error) + ",,,,,,,,\n";
            continue;
        }
        for (const auto& m : r.metrics) out += prefix + "ok," + metrics_row(m) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_run(const CliInvocation& inv, std::ostream& out, std::ostream& err)
{
    SimConfig cfg = config_from_settings(inv.settings);
    cfg.workers = effective_workers(cfg.workers);
    if (cfg.uses_graph() && cfg.hyper.eps >= 1.0)
        err << "warning: eps = 1 sits on the boundary of the stable interval (0, 1/Delta)\n";
    RunResult res;
    try {
        res = run(cfg);
    } catch (const DivergenceError& e) {
        err << e.what() << '\n';
        return kExitDiverged;
    }
    if (!cfg.out.empty()) {
        write_outputs(res, cfg.out);
        std::ofstream(std::filesystem::path(cfg.out) / "loss_curves.csv", std::ios::binary) << loss_curves_csv(res.metrics);
    }
    if (!inv.plot.empty()) write_file(inv.plot, plot_loss_curves(res.metrics).encode_png());

    double sum = 0.0, acc = 0.0;
    std::size_t n = 0;
    for (const auto& m : res.metrics)
        if (m.round == cfg.T) {
            sum += m.val_loss;
            acc += m.val_acc;
            ++n;
        }
    out << fmt::format("algo={} model={} K={} T={} params={}\n", to_string(cfg.algo), cfg.model, cfg.K, cfg.T,
                       res.arch.parameter_count());
    out << fmt::format("final mean val_loss={:.6f} val_acc={:.4f}\n", sum / static_cast<double>(n),
                       acc / static_cast<double>(n));
    out << fmt::format("total tx bytes={}\n", [&] {
        std::uint64_t t = 0;
        for (const auto& m : res.metrics) t += m.tx_bytes;
        return t;
    }());
    if (inv.target) {
        const auto tr = rounds_to_target(res.metrics, *inv.target);
        out << fmt::format("rounds to val_loss<={}: min={} max={} unreached={}\n", *inv.target,
                           tr.min ? std::to_string(*tr.min) : "-", tr.max ? std::to_string(*tr.max) : "-",
                           tr.unreached.size());
    }
    return kExitOk;
}

inline int cmd_synth(const CliInvocation& inv, std::ostream& out)
{
    const std::uint64_t seed = inv.settings.contains("seed") ? std::stoull(inv.settings.at("seed")) : 1;
    const double noise = inv.settings.contains("noise") ? std::stod(inv.settings.at("noise")) : -1.0;
    Dataset ds = inv.kind == "radar" ? (noise < 0 ? synth_radar(seed, inv.count) : synth_radar(seed, inv.count, 8, 512, noise))
                                     : (noise < 0 ? synth_digits(seed, inv.count)
                                                  : synth_digits(seed, inv.count, 10, 784, noise));
    save_native(inv.file, ds);
    out << fmt::format("wrote {} examples (dim {}, {} classes) to {}\n", ds.size(), ds.feature_dim, ds.class_count, inv.file);
    return kExitOk;
}

inline int cmd_convert_check(const CliInvocation& inv, std::ostream& out, std::ostream& err)
{
    Dataset ds;
    try {
        ds = load_native(inv.file);
    } catch (const std::exception& e) {
        err << inv.file << ": " << e.what() << '\n';
        return kExitFailure;
    }
    out << fmt::format("{}: count={} dim={} classes={}\n", inv.file, ds.size(), ds.feature_dim, ds.class_count);
    const auto hist = ds.class_histogram();
    for (std::size_t c = 0; c < hist.size(); ++c) out << fmt::format("  class {}: {}\n", c, hist[c]);
    bool ok = true;
    auto expect = [&](const char* what, const std::optional<std::size_t>& want, std::size_t got) {
        if (want && *want != got) {
            err << fmt::format("{}: expected {} {}, found {}\n", inv.file, what, *want, got);
            ok = false;
        }
    };
    expect("count", inv.expect_count, ds.size());
    expect("dim", inv.expect_dim, ds.feature_dim);
    expect("classes", inv.expect_classes, ds.class_count);
    return ok ? kExitOk : kExitFailure;
}

inline int cmd_bench_overhead(const CliInvocation& inv, std::ostream& out)
{
    out << "model,algo,degree,params,bytes,kbytes\n";
    for (const char* model : {"cnn", "2nn"}) {
        const std::size_t P = default_parameter_count(model);
        const auto cfa = overhead_bytes(Algorithm::cfa, P, 0, inv.bits);
        out << fmt::format("{},cfa,-,{},{},{:.2f}\n", model, P, cfa, static_cast<double>(cfa) / 1000.0);
        out << fmt::format("{},fa,-,{},{},{:.2f}\n", model, P, cfa, static_cast<double>(cfa) / 1000.0);
        for (std::size_t d : {2, 6, 10}) {
            const auto ge = overhead_bytes(Algorithm::cfa_ge, P, d, inv.bits);
            out << fmt::format("{},cfa-ge,{},{},{},{:.2f}\n", model, d, P, ge, static_cast<double>(ge) / 1000.0);
        }
    }
    return kExitOk;
}

inline int cmd_sweep(const CliInvocation& inv, std::ostream& out)
{
    const auto axes = parse_grid(inv.grid);
    Settings base = inv.settings;
    const std::size_t workers = effective_workers(
        base.contains("workers") ? std::stoul(base.at("workers")) : 0);
    const auto rows = run_sweep(base, axes, workers);
    const std::string csv = sweep_csv(axes, rows);
    if (base.contains("out")) {
        std::filesystem::create_directories(base.at("out"));
        std::ofstream(std::filesystem::path(base.at("out")) / "sweep.csv", std::ios::binary) << csv;
    } else {
        out << csv;
    }
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.ok ? 0 : 1;
    if (base.contains("out")) out << fmt::format("{} points, {} failed\n", rows.size(), failed);
    return kExitOk;
}

/// Entry point; returns the process exit code.
inline int main_with_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CliInvocation inv;
    try {
        inv = parse_args(args);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\nrun 'flsim --help' for usage\n";
        return kExitUsage;
    }
    if (inv.help) {
        out << inv.help_text;
        return kExitOk;
    }
    try {
        if (inv.subcommand == "run") return cmd_run(inv, out, err);
        if (inv.subcommand == "synth") return cmd_synth(inv, out);
        if (inv.subcommand == "convert-check") return cmd_convert_check(inv, out, err);
        if (inv.subcommand == "bench-overhead") return cmd_bench_overhead(inv, out);
        if (inv.subcommand == "sweep") return cmd_sweep(inv, out);
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

} // namespace flsim::cli
