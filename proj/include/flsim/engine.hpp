#pragma once

#include "flsim/checkpoint.hpp"
#include "flsim/dataset.hpp"
#include "flsim/fedalgos.hpp"
#include "flsim/partition.hpp"
#include "flsim/topology.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace flsim {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A node produced a non-finite parameter.
struct DivergenceError : std::runtime_error {
    DivergenceError(std::size_t node_, std::size_t round_)
        : std::runtime_error(fmt::format("divergence: node {} has non-finite parameters after round {}", node_, round_)),
          node(node_), round(round_)
    {
    }
    std::size_t node;
    std::size_t round;
};

// ---------------------------------------------------------------------------
// Overhead accounting
// ---------------------------------------------------------------------------

/// Bytes a device transmits per round: one model for CFA and FA, one
/// gradient tensor set per neighbor for CFA-GE, nothing for local-only modes.
inline std::uint64_t overhead_bytes(Algorithm algo, std::size_t parameter_count, std::size_t degree, unsigned bits = 16)
{
    check_bits(bits);
    const std::uint64_t model = static_cast<std::uint64_t>(parameter_count) * bits / 8;
    switch (algo) {
    case Algorithm::cfa:
    case Algorithm::fa: return model;
    case Algorithm::cfa_ge: return model * degree;
    case Algorithm::centralized:
    case Algorithm::isolated: return 0;
    }
    return 0;
}

/// Parameter count of a named model at its default input/class sizes.
inline std::size_t default_parameter_count(std::string_view model)
{
    if (model == "cnn") return cnn().parameter_count();
    if (model == "2nn") return two_nn().parameter_count();
    if (model == "mnist-1fc") return mnist_1fc().parameter_count();
    throw ConfigError("no default size for model '" + std::string(model) + "'");
}

inline std::uint64_t overhead_bytes(Algorithm algo, std::string_view model, std::size_t degree, unsigned bits = 16)
{
    return overhead_bytes(algo, default_parameter_count(model), degree, bits);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Row `round` = state after that many rounds; round 0 is the shared start.
struct RoundMetrics {
    std::size_t round = 0;
    std::size_t node = 0;
    std::string algo;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double val_acc = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t tx_bytes = 0;
    std::uint64_t cum_tx_bytes = 0;
    double update_ms = 0.0;
};

inline constexpr std::string_view kMetricsHeader = "round,node,algo,val_loss,val_acc,tx_bytes,cum_tx_bytes,update_ms";

inline std::string metrics_row(const RoundMetrics& m)
{
    return fmt::format("{},{},{},{:.10g},{:.10g},{},{},{:.10g}", m.round, m.node, m.algo, m.val_loss, m.val_acc,
                       m.tx_bytes, m.cum_tx_bytes, m.update_ms);
}

inline void write_metrics_csv(std::ostream& out, const std::vector<RoundMetrics>& rows)
{
    out << kMetricsHeader << '\n';
    for (const auto& r : rows) out << metrics_row(r) << '\n';
}

inline std::string metrics_csv(const std::vector<RoundMetrics>& rows)
{
    std::string s(kMetricsHeader);
    s += '\n';
    for (const auto& r : rows) {
        s += metrics_row(r);
        s += '\n';
    }
    return s;
}

struct TargetRounds {
    std::optional<std::size_t> min; // empty when no node reached the target
    std::optional<std::size_t> max; // empty when any node never reached it
    std::vector<std::size_t> unreached;
    std::map<std::size_t, std::size_t> per_node;
};

/// Earliest round at which each node's validation loss is <= threshold.
/// Rows without a validation result (NaN) are ignored.
inline TargetRounds rounds_to_target(const std::vector<RoundMetrics>& rows, double threshold = 0.5)
{
    if (rows.empty()) throw std::invalid_argument("rounds_to_target: no metrics");
    std::set<std::size_t> nodes;
    TargetRounds out;
    for (const auto& r : rows) {
        nodes.insert(r.node);
        if (std::isnan(r.val_loss) || r.val_loss > threshold) continue;
        auto [it, fresh] = out.per_node.try_emplace(r.node, r.round);
        if (!fresh) it->second = std::min(it->second, r.round);
    }
    for (auto k : nodes)
        if (!out.per_node.contains(k)) out.unreached.push_back(k);
    if (!out.per_node.empty()) {
        std::size_t lo = std::numeric_limits<std::size_t>::max(), hi = 0;
        for (const auto& [k, t] : out.per_node) {
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
        out.min = lo;
        if (out.unreached.empty()) out.max = hi;
    }
    return out;
}

/// ln(1 / (1 - gamma_G)) / gamma_L
inline double convergence_bound(double gamma_G, double gamma_L)
{
    if (!(gamma_G > 0.0 && gamma_G < 1.0)) throw std::domain_error("convergence_bound: gamma_G must lie in (0,1)");
    if (!(gamma_L > 0.0)) throw std::domain_error("convergence_bound: gamma_L must be positive");
    return std::log(1.0 / (1.0 - gamma_G)) / gamma_L;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SimConfig {
    Algorithm algo = Algorithm::cfa_ge;
    std::string model = "cnn";
    std::size_t K = 80;
    std::size_t N = 2; // k-regular degree
    std::size_t T = 60;
    HyperParams hyper;
    std::uint64_t seed = 1;

    // line | ring | full | kregular[:d] | file:PATH, or phases "spec@r0;spec@r1"
    std::string topology = "kregular";
    bool allow_disconnected = false;
    PartitionSpec partition;

    // synth-radar:N | synth-digits:N | idx:IMAGES,LABELS | path to an FLDS file
    std::string dataset = "synth-radar:2000";
    std::string valset = "synth-radar:400";
    double noise = -1.0; // synthetic noise level; < 0 keeps the generator default

    std::vector<std::size_t> alternate; // rounds run as FA
    double fa_fraction = 1.0;
    double drop = 0.0; // per-message loss probability

    std::size_t workers = 0; // 0 = hardware concurrency
    std::size_t val_every = 1;
    bool timing = false;
    bool track_spread = false;
    std::string out;

    // In-memory overrides of dataset / valset / topology.
    std::optional<Dataset> train_data;
    std::optional<Dataset> val_data;
    std::optional<TopologySchedule> schedule;

    bool uses_graph() const
    {
        if (algo == Algorithm::cfa || algo == Algorithm::cfa_ge) return true;
        return false;
    }

    void validate() const
    {
        hyper.validate();
        if (K == 0) throw ConfigError("K must be at least 1");
        if (T == 0) throw ConfigError("T must be at least 1");
        if (val_every == 0) throw ConfigError("val_every must be at least 1");
        if (!(fa_fraction > 0.0 && fa_fraction <= 1.0)) throw ConfigError("fa_fraction must lie in (0,1]");
        if (!(drop >= 0.0 && drop < 1.0)) throw ConfigError("drop must lie in [0,1)");
        for (auto r : alternate)
            if (r >= T) throw ConfigError(fmt::format("alternate round {} is not below T={}", r, T));
        if (uses_graph() && !schedule && topology.rfind("kregular", 0) == 0 && topology.find(':') == std::string::npos &&
            N == 0)
            throw ConfigError("consensus needs at least one neighbor: N must be >= 1");
        if (uses_graph() && K < 2) throw ConfigError("consensus needs K >= 2");
    }
};

// ---------------------------------------------------------------------------
// Resolution of dataset and topology specs
// ---------------------------------------------------------------------------

inline Dataset resolve_dataset(const std::string& spec, std::uint64_t seed, double noise)
{
    auto count_after = [&](std::string_view prefix) -> std::size_t {
        const std::string n = spec.substr(prefix.size());
        try {
            std::size_t used = 0;
            const auto v = std::stoul(n, &used);
            if (used != n.size() || v == 0) throw std::invalid_argument(n);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("bad example count in dataset spec '" + spec + "'");
        }
    };
    if (spec.rfind("synth-radar:", 0) == 0)
        return noise < 0.0 ? synth_radar(seed, count_after("synth-radar:"))
                           : synth_radar(seed, count_after("synth-radar:"), 8, 512, noise);
    if (spec.rfind("synth-digits:", 0) == 0)
        return noise < 0.0 ? synth_digits(seed, count_after("synth-digits:"))
                           : synth_digits(seed, count_after("synth-digits:"), 10, 784, noise);
    if (spec.rfind("idx:", 0) == 0) {
        const auto rest = spec.substr(4);
        const auto comma = rest.find(',');
        if (comma == std::string::npos) throw ConfigError("idx dataset spec needs IMAGES,LABELS");
        return load_idx(rest.substr(0, comma), rest.substr(comma + 1));
    }
    if (spec.empty()) throw ConfigError("empty dataset spec");
    return load_native(spec);
}

inline Topology resolve_topology(const std::string& spec, std::size_t K, std::size_t N, std::uint64_t seed,
                                 bool allow_disconnected)
{
    if (spec == "line") return line_topology(K);
    if (spec == "ring") return ring_topology(K);
    if (spec == "full") return full_topology(K);
    if (spec.rfind("kregular", 0) == 0) {
        std::size_t d = N;
        if (spec.size() > 8) {
            if (spec[8] != ':') throw ConfigError("bad topology '" + spec + "'");
            try {
                d = std::stoul(spec.substr(9));
            } catch (const std::exception&) {
                throw ConfigError("bad degree in topology '" + spec + "'");
            }
        }
        return k_regular(K, d, seed);
    }
    if (spec.rfind("file:", 0) == 0) {
        const auto bytes = read_file(spec.substr(5));
        Topology t = Topology::from_text(std::string(bytes.begin(), bytes.end()), allow_disconnected);
        if (t.size() != K) throw ConfigError(fmt::format("topology file has {} nodes, K is {}", t.size(), K));
        return t;
    }
    throw ConfigError("unknown topology '" + spec + "' (line, ring, full, kregular[:d], file:PATH)");
}

/// "ring" or "kregular@0;ring@30": each phase runs until the next one starts.
inline TopologySchedule resolve_schedule(const std::string& spec, std::size_t K, std::size_t N, std::size_t T,
                                         std::uint64_t seed, bool allow_disconnected)
{
    std::vector<std::pair<std::size_t, std::string>> parts;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const auto semi = spec.find(';', start);
        const std::string piece = spec.substr(start, semi == std::string::npos ? std::string::npos : semi - start);
        if (!piece.empty()) {
            const auto at = piece.rfind('@');
            std::size_t begin = 0;
            std::string name = piece;
            if (at != std::string::npos) {
                name = piece.substr(0, at);
                try {
                    begin = std::stoul(piece.substr(at + 1));
                } catch (const std::exception&) {
                    throw ConfigError("bad phase start in topology '" + piece + "'");
                }
            }
            parts.emplace_back(begin, name);
        }
        if (semi == std::string::npos) break;
        start = semi + 1;
    }
    if (parts.empty()) throw ConfigError("empty topology spec");
    std::sort(parts.begin(), parts.end());
    std::vector<TopologySchedule::Phase> phases;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t end = p + 1 < parts.size() ? parts[p + 1].first : std::max(T, parts[p].first + 1);
        phases.push_back({parts[p].first, end,
                          resolve_topology(parts[p].second, K, N, derive_seed(seed, {stream::topology, p}), allow_disconnected)});
    }
    return TopologySchedule(std::move(phases), T);
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Runs fn(0..n-1) on up to `workers` threads. Results must be written by
/// index; the first failing index (lowest) is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn)
{
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    std::vector<std::exception_ptr> errors(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

struct RunResult {
    Architecture arch;
    std::vector<RoundMetrics> metrics;
    std::vector<ModelParams> final_models;
    std::vector<std::size_t> shard_sizes;
    std::vector<double> spread; // max pairwise model distance after each round (when tracked)
};

namespace detail {

inline std::vector<std::size_t> sample_participants(std::size_t K, double fraction, std::uint64_t seed, std::size_t round)
{
    const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(K))), 1, K);
    std::vector<std::size_t> all(K);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (n == K) return all;
    Rng rng = make_rng(seed, {stream::participation, round});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(n);
    std::sort(all.begin(), all.end());
    return all;
}

inline bool dropped(double p, std::uint64_t seed, std::size_t round, std::size_t from, std::size_t to)
{
    if (p <= 0.0) return false;
    Rng rng = make_rng(seed, {stream::drops, round, from, to});
    return std::bernoulli_distribution(p)(rng);
}

} // namespace detail

/// Runs T rounds. Each round: freeze last round's publications, deliver them
/// along the active topology, run every node's transition against the frozen
/// snapshot, check for divergence, validate.
inline RunResult run(const SimConfig& cfg)
{
    cfg.validate();
    const Dataset train = cfg.train_data ? *cfg.train_data : resolve_dataset(cfg.dataset, cfg.seed, cfg.noise);
    const Dataset val = cfg.val_data ? *cfg.val_data
                                     : resolve_dataset(cfg.valset, derive_seed(cfg.seed, {stream::synth, 0x76616cULL}), cfg.noise);
    train.validate();
    val.validate();
    if (val.feature_dim != train.feature_dim || val.class_count != train.class_count)
        throw ConfigError("validation set shape differs from training set");

    RunResult res{make_architecture(cfg.model, train.feature_dim, train.class_count), {}, {}, {}, {}};
    const Architecture& arch = res.arch;
    const std::size_t K = cfg.K;
    const HyperParams& h = cfg.hyper;

    PartitionSpec pspec = cfg.partition;
    pspec.seed = derive_seed(cfg.seed, {stream::partition});
    const std::vector<Shard> shards = partition(train, K, pspec);
    for (const auto& s : shards) {
        res.shard_sizes.push_back(s.size());
        if (h.B > s.size() && cfg.algo != Algorithm::fa)
            throw ConfigError(fmt::format("batch size {} exceeds shard {} of size {}", h.B, s.owner, s.size()));
    }

    std::optional<TopologySchedule> schedule = cfg.schedule;
    if (!schedule && cfg.uses_graph())
        schedule = resolve_schedule(cfg.topology, K, cfg.N, cfg.T, cfg.seed, cfg.allow_disconnected);
    if (schedule && schedule->node_count() != K) throw ConfigError("topology node count differs from K");

    const ModelParams w0 = arch.initialize(derive_seed(cfg.seed, {stream::init}));
    const std::size_t P = w0.parameter_count();
    const std::string algo_name(to_string(cfg.algo));
    const std::set<std::size_t> fa_rounds(cfg.alternate.begin(), cfg.alternate.end());
    const std::size_t workers = cfg.workers;

    std::vector<NodeState> nodes;
    for (std::size_t k = 0; k < K; ++k) nodes.push_back(initial_state(k, w0));
    std::vector<std::optional<ExchangeMsg>> board(K);
    std::vector<std::uint64_t> cum(K, 0);
    bool restart = false;      // first consensus round after an FA phase
    bool server_live = false;  // previous round was FA
    ModelParams server = w0;
    const Shard pooled = cfg.algo == Algorithm::centralized ? pool_shards(shards) : Shard{};
    GradientSet central_velocity = zeros_like<GradientTag>(w0);

    const std::size_t report_nodes = cfg.algo == Algorithm::centralized ? 1 : K;
    auto validate_round = [&](std::size_t round, const std::vector<std::uint64_t>& tx, const std::vector<double>& ms) {
        const bool due = round == 0 || round == cfg.T || round % cfg.val_every == 0;
        std::vector<Evaluation> ev(report_nodes, Evaluation{std::numeric_limits<double>::quiet_NaN(),
                                                            std::numeric_limits<double>::quiet_NaN()});
        if (due) parallel_for(report_nodes, workers, [&](std::size_t k) { ev[k] = evaluate(arch, nodes[k].model, val.examples); });
        for (std::size_t k = 0; k < report_nodes; ++k) {
            cum[k] += tx[k];
            res.metrics.push_back({round, k, algo_name, ev[k].loss, ev[k].accuracy, tx[k], cum[k], cfg.timing ? ms[k] : 0.0});
        }
    };
    validate_round(0, std::vector<std::uint64_t>(K, 0), std::vector<double>(K, 0.0));

    using clock = std::chrono::steady_clock;
    auto elapsed_ms = [](clock::time_point a) {
        return std::chrono::duration<double, std::milli>(clock::now() - a).count();
    };

    for (std::size_t r = 0; r < cfg.T; ++r) {
        std::vector<std::uint64_t> tx(K, 0);
        std::vector<double> ms(K, 0.0);
        const bool fa_round_now = cfg.algo == Algorithm::fa || fa_rounds.contains(r);

        if (fa_round_now) {
            if (!server_live) server = weighted_average(nodes, shards);
            const auto t0 = clock::now();
            const auto parts = detail::sample_participants(K, cfg.fa_fraction, cfg.seed, r);
            server = fa_round(arch, server, parts, shards, h);
            const double took = elapsed_ms(t0);
            for (auto k : parts) {
                tx[k] = overhead_bytes(Algorithm::fa, P, 0, h.quantize_bits);
                ms[k] = took / static_cast<double>(parts.size());
            }
            for (auto& n : nodes) {
                n.model = server;
                n.aggregate = server;
                n.round = r + 1;
            }
            for (auto& b : board) b.reset();
            server_live = true;
            restart = true;
        } else if (cfg.algo == Algorithm::centralized) {
            const auto t0 = clock::now();
            nodes[0].model = local_pass(arch, std::move(nodes[0].model), central_velocity, pooled, h, h.mu_s, cfg.seed, r);
            ms[0] = elapsed_ms(t0);
        } else if (cfg.algo == Algorithm::isolated) {
            server_live = false;
            parallel_for(K, workers, [&](std::size_t k) {
                const auto t0 = clock::now();
                MixingRow none;
                NodeContext ctx{arch, shards[k], h, none, cfg.seed, r};
                nodes[k] = isolated_round(std::move(nodes[k]), ctx);
                ms[k] = elapsed_ms(t0);
            });
        } else {
            server_live = false;
            const Topology& topo = schedule->at(r);
            const MixingWeights mix = mixing_weights(topo, res.shard_sizes);
            const std::vector<NodeState> snapshot = nodes;
            const bool four_stage = cfg.algo == Algorithm::cfa_ge && r < h.warmup && !restart;
            std::vector<std::optional<ExchangeMsg>> next(K);
            parallel_for(K, workers, [&](std::size_t k) {
                const auto t0 = clock::now();
                Inbox inbox;
                if (!restart)
                    for (auto i : topo.neighbors(k))
                        if (board[i] && !detail::dropped(cfg.drop, cfg.seed, r, i, k)) inbox.push_back(&*board[i]);
                NodeContext ctx{arch, shards[k], h, mix.rows[k], cfg.seed, r};
                RoundOutput out;
                if (cfg.algo == Algorithm::cfa) {
                    out = cfa_round(snapshot[k], inbox, ctx);
                } else if (four_stage) {
                    std::vector<NeighborView> views;
                    for (auto i : topo.neighbors(k)) views.push_back({i, &snapshot[i].model, &shards[i]});
                    out = cfa_ge_round_4stage(snapshot[k], views, inbox, ctx);
                } else {
                    out = cfa_ge_round_2stage(snapshot[k], inbox, topo.neighbors(k), ctx);
                }
                nodes[k] = std::move(out.state);
                next[k] = std::move(out.msg);
                ms[k] = elapsed_ms(t0);
                tx[k] = overhead_bytes(cfg.algo, P, topo.degree(k), h.quantize_bits);
            });
            board = std::move(next);
            restart = false;
        }

        for (std::size_t k = 0; k < report_nodes; ++k)
            if (!all_finite(nodes[k].model)) throw DivergenceError(k, r + 1);
        if (cfg.track_spread) {
            std::vector<ModelParams> models;
            for (std::size_t k = 0; k < report_nodes; ++k) models.push_back(nodes[k].model);
            res.spread.push_back(max_pairwise_distance(models));
        }
        validate_round(r + 1, tx, ms);
    }

    for (std::size_t k = 0; k < report_nodes; ++k) res.final_models.push_back(nodes[k].model);
    return res;
}

/// Writes metrics.csv and one FLW1 checkpoint per node under `dir`.
inline void write_outputs(const RunResult& res, const std::string& dir)
{
    std::filesystem::create_directories(dir);
    std::ofstream csv(std::filesystem::path(dir) / "metrics.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write metrics under " + dir);
    write_metrics_csv(csv, res.metrics);
    for (std::size_t k = 0; k < res.final_models.size(); ++k)
        save_checkpoint((std::filesystem::path(dir) / fmt::format("node_{:03}.flw", k)).string(), res.final_models[k]);
}

} // namespace flsim
