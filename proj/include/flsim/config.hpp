#pragma once

#include "flsim/engine.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace flsim {

/// Flat key=value settings; later assignments win.
using Settings = std::map<std::string, std::string>;

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Parses "key = value" lines; '#' starts a comment.
inline Settings parse_settings(const std::string& text, const std::string& origin = "config")
{
    Settings out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("{}:{}: expected key=value", origin, lineno));
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError(fmt::format("{}:{}: empty key", origin, lineno));
        out[key] = trim(t.substr(eq + 1));
    }
    return out;
}

inline Settings load_settings(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_settings(ss.str(), path);
}

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& v)
{
    T out{};
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw ConfigError(fmt::format("{}: invalid value '{}'", key, v));
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, v));
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v)
{
    std::vector<T> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_number<T>(key, item));
    }
    return out;
}

} // namespace detail

inline const std::vector<std::string>& known_keys()
{
    static const std::vector<std::string> keys{
        "algo", "model", "K", "N", "T", "B", "mu", "mu_s", "eps", "l1", "l2", "beta_self", "ro", "ro_momentum", "seed",
        "topology", "partition", "quantize_bits", "quantize_numerics", "alternate", "dataset", "valset", "out",
        // extensions
        "Ek", "momentum", "warmup", "fa_fraction", "workers", "val_every", "timing", "drop", "noise",
        "allow_disconnected"};
    return keys;
}

/// Builds a SimConfig. Rates not given fall back to the defaults for the
/// network size; mu_s defaults to mu.
inline SimConfig config_from_settings(const Settings& s)
{
    for (const auto& [k, v] : s)
        if (std::find(known_keys().begin(), known_keys().end(), k) == known_keys().end())
            throw ConfigError("unknown config key '" + k + "'");
    auto has = [&](const char* k) { return s.contains(k); };
    auto get = [&](const char* k) -> const std::string& { return s.at(k); };
    using detail::parse_bool;
    using detail::parse_number;

    SimConfig c;
    if (has("K")) c.K = parse_number<std::size_t>("K", get("K"));
    if (has("N")) c.N = parse_number<std::size_t>("N", get("N"));
    c.hyper = table_defaults(c.K, c.N);

    if (has("algo")) c.algo = parse_algorithm(get("algo"));
    if (has("model")) c.model = get("model");
    if (has("T")) c.T = parse_number<std::size_t>("T", get("T"));
    if (has("B")) c.hyper.B = parse_number<std::size_t>("B", get("B"));
    if (has("mu")) c.hyper.mu = parse_number<double>("mu", get("mu"));
    c.hyper.mu_s = has("mu_s") ? parse_number<double>("mu_s", get("mu_s")) : c.hyper.mu;
    if (has("eps")) c.hyper.eps = parse_number<double>("eps", get("eps"));
    if (has("l1") || has("l2")) {
        const double fallback = c.hyper.grad_rates.empty() ? 0.0 : c.hyper.grad_rates.front();
        const double l1 = has("l1") ? parse_number<double>("l1", get("l1")) : fallback;
        const double l2 = has("l2") ? parse_number<double>("l2", get("l2")) : l1;
        c.hyper.grad_rates = {l1, l2};
    }
    if (has("beta_self")) c.hyper.beta_self = parse_number<double>("beta_self", get("beta_self"));
    if (has("ro")) c.hyper.ro = parse_number<double>("ro", get("ro"));
    if (has("ro_momentum")) c.hyper.ro_momentum = parse_number<double>("ro_momentum", get("ro_momentum"));
    if (has("momentum")) c.hyper.momentum = parse_momentum(get("momentum"));
    if (has("warmup")) c.hyper.warmup = parse_number<std::size_t>("warmup", get("warmup"));
    if (has("quantize_bits")) c.hyper.quantize_bits = parse_number<unsigned>("quantize_bits", get("quantize_bits"));
    if (has("quantize_numerics")) c.hyper.quantize_numerics = parse_bool("quantize_numerics", get("quantize_numerics"));
    if (has("seed")) c.seed = parse_number<std::uint64_t>("seed", get("seed"));
    if (has("topology")) c.topology = get("topology");
    if (has("allow_disconnected")) c.allow_disconnected = parse_bool("allow_disconnected", get("allow_disconnected"));

    if (has("partition")) {
        // iid | noniid | noniid:LO-HI (class subset size range)
        const std::string& p = get("partition");
        if (p == "iid") {
            c.partition.scheme = PartitionScheme::iid;
        } else if (p.rfind("noniid", 0) == 0) {
            c.partition.scheme = PartitionScheme::noniid;
            if (p.size() > 6) {
                const auto dash = p.find('-', 7);
                if (p[6] != ':' || dash == std::string::npos) throw ConfigError("partition: expected noniid:LO-HI");
                c.partition.min_classes = parse_number<std::size_t>("partition", p.substr(7, dash - 7));
                c.partition.max_classes = parse_number<std::size_t>("partition", p.substr(dash + 1));
            }
        } else {
            throw ConfigError("partition: expected iid, noniid or noniid:LO-HI, got '" + p + "'");
        }
    }
    if (has("Ek")) {
        // one size for every node, or an explicit per-node list
        const auto sizes = detail::parse_list<std::size_t>("Ek", get("Ek"));
        if (sizes.size() == 1) c.partition.per_node = sizes.front();
        else c.partition.sizes = sizes;
    }
    if (has("alternate")) c.alternate = detail::parse_list<std::size_t>("alternate", get("alternate"));
    if (has("fa_fraction")) c.fa_fraction = parse_number<double>("fa_fraction", get("fa_fraction"));
    if (has("dataset")) c.dataset = get("dataset");
    if (has("valset")) c.valset = get("valset");
    if (has("noise")) c.noise = parse_number<double>("noise", get("noise"));
    if (has("workers")) c.workers = parse_number<std::size_t>("workers", get("workers"));
    if (has("val_every")) c.val_every = parse_number<std::size_t>("val_every", get("val_every"));
    if (has("timing")) c.timing = parse_bool("timing", get("timing"));
    if (has("drop")) c.drop = parse_number<double>("drop", get("drop"));
    if (has("out")) c.out = get("out");
    return c;
}

/// Stable textual form of the settings that define a run (sorted keys).
inline std::string canonical_settings(const Settings& s)
{
    std::string out;
    for (const auto& [k, v] : s) {
        if (k == "out" || k == "workers") continue;
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

/// FNV-1a over the canonical settings.
inline std::uint64_t config_hash(const Settings& s)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canonical_settings(s)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace flsim
