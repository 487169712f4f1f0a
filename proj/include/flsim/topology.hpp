#pragma once

#include "flsim/rng.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

struct TopologyError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Interaction graph: neighbors(k) is the set of nodes k receives from,
/// self excluded. Connectivity is checked at construction unless waived.
class Topology {
public:
    Topology() = default;

    Topology(std::size_t K, std::vector<std::vector<std::size_t>> neighbors, bool allow_disconnected = false)
        : neighbors_(std::move(neighbors))
    {
        if (K == 0) throw TopologyError("topology: K must be positive");
        if (neighbors_.size() != K) throw TopologyError("topology: need one neighbor list per node");
        for (std::size_t k = 0; k < K; ++k) {
            auto& n = neighbors_[k];
            std::sort(n.begin(), n.end());
            if (std::adjacent_find(n.begin(), n.end()) != n.end())
                throw TopologyError("topology: duplicate neighbor of node " + std::to_string(k));
            for (auto i : n) {
                if (i >= K) throw TopologyError("topology: neighbor id out of range at node " + std::to_string(k));
                if (i == k) throw TopologyError("topology: self-loop at node " + std::to_string(k));
            }
        }
        if (!allow_disconnected && !connected())
            throw TopologyError("topology: graph is not connected");
    }

    std::size_t size() const { return neighbors_.size(); }
    const std::vector<std::size_t>& neighbors(std::size_t k) const { return neighbors_.at(k); }
    std::size_t degree(std::size_t k) const { return neighbors_.at(k).size(); }

    bool has_edge(std::size_t from, std::size_t to) const
    {
        const auto& n = neighbors_.at(to);
        return std::binary_search(n.begin(), n.end(), from);
    }

    std::size_t max_degree() const
    {
        std::size_t m = 0;
        for (const auto& n : neighbors_) m = std::max(m, n.size());
        return m;
    }

    /// Degree shared by every node, or nullopt-like 0 when degrees differ.
    std::size_t uniform_degree() const
    {
        const std::size_t d = neighbors_.front().size();
        for (const auto& n : neighbors_)
            if (n.size() != d) return 0;
        return d;
    }

    bool symmetric() const
    {
        for (std::size_t k = 0; k < size(); ++k)
            for (auto i : neighbors_[k])
                if (!has_edge(k, i)) return false;
        return true;
    }

    /// Strong connectivity (plain connectivity for symmetric graphs).
    bool connected() const
    {
        const std::size_t K = size();
        if (K <= 1) return true;
        auto reach = [&](bool reverse) {
            std::vector<std::vector<std::size_t>> adj(K);
            for (std::size_t k = 0; k < K; ++k)
                for (auto i : neighbors_[k]) {
                    if (reverse) adj[k].push_back(i);
                    else adj[i].push_back(k);
                }
            std::vector<bool> seen(K, false);
            std::queue<std::size_t> q;
            q.push(0);
            seen[0] = true;
            std::size_t count = 1;
            while (!q.empty()) {
                const auto u = q.front();
                q.pop();
                for (auto v : adj[u])
                    if (!seen[v]) {
                        seen[v] = true;
                        ++count;
                        q.push(v);
                    }
            }
            return count == K;
        };
        return reach(false) && reach(true);
    }

    /// One line per node: "k: i,j,..."
    std::string to_text() const
    {
        std::ostringstream out;
        for (std::size_t k = 0; k < size(); ++k) {
            out << k << ':';
            for (std::size_t j = 0; j < neighbors_[k].size(); ++j) out << (j == 0 ? " " : ",") << neighbors_[k][j];
            out << '\n';
        }
        return out.str();
    }

    static Topology from_text(const std::string& text, bool allow_disconnected = false)
    {
        std::istringstream in(text);
        std::string line;
        std::vector<std::vector<std::size_t>> nb;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            const auto colon = line.find(':');
            if (colon == std::string::npos) throw TopologyError("topology text line " + std::to_string(lineno) + ": missing ':'");
            std::size_t k = 0;
            try {
                k = std::stoul(line.substr(0, colon));
            } catch (const std::exception&) {
                throw TopologyError("topology text line " + std::to_string(lineno) + ": bad node id");
            }
            if (k != nb.size()) throw TopologyError("topology text line " + std::to_string(lineno) + ": node ids must be 0,1,2,... in order");
            std::vector<std::size_t> ids;
            std::string rest = line.substr(colon + 1);
            std::replace(rest.begin(), rest.end(), ',', ' ');
            std::istringstream items(rest);
            std::string tok;
            while (items >> tok) {
                try {
                    ids.push_back(std::stoul(tok));
                } catch (const std::exception&) {
                    throw TopologyError("topology text line " + std::to_string(lineno) + ": bad neighbor '" + tok + "'");
                }
            }
            nb.push_back(std::move(ids));
        }
        const std::size_t K = nb.size();
        return Topology(K, std::move(nb), allow_disconnected);
    }

    friend bool operator==(const Topology&, const Topology&) = default;

private:
    std::vector<std::vector<std::size_t>> neighbors_;
};

/// Path 0 - 1 - ... - (K-1).
inline Topology line_topology(std::size_t K)
{
    if (K < 2) throw TopologyError("line_topology: K must be at least 2");
    std::vector<std::vector<std::size_t>> nb(K);
    for (std::size_t k = 0; k + 1 < K; ++k) {
        nb[k].push_back(k + 1);
        nb[k + 1].push_back(k);
    }
    return Topology(K, std::move(nb));
}

/// Cycle 0 - 1 - ... - (K-1) - 0.
inline Topology ring_topology(std::size_t K)
{
    if (K < 3) throw TopologyError("ring_topology: K must be at least 3");
    std::vector<std::vector<std::size_t>> nb(K);
    for (std::size_t k = 0; k < K; ++k) {
        nb[k].push_back((k + 1) % K);
        nb[k].push_back((k + K - 1) % K);
    }
    return Topology(K, std::move(nb));
}

inline Topology full_topology(std::size_t K)
{
    if (K < 2) throw TopologyError("full_topology: K must be at least 2");
    std::vector<std::vector<std::size_t>> nb(K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t i = 0; i < K; ++i)
            if (i != k) nb[k].push_back(i);
    return Topology(K, std::move(nb));
}

/// Random connected simple graph with every node of the given degree.
/// Stubs are paired at random, rejecting self-loops and repeated edges; a
/// dead end or a disconnected result retries with the next sub-seed, up to
/// 100 attempts.
inline Topology k_regular(std::size_t K, std::size_t degree, std::uint64_t seed)
{
    if (degree < 2) throw TopologyError("k_regular: degree must be at least 2");
    if (degree >= K) throw TopologyError("k_regular: degree must be below K");
    if ((K * degree) % 2 != 0) throw TopologyError("k_regular: K*degree must be even");

    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
        Rng rng = make_rng(seed, {stream::topology, attempt});
        std::vector<std::size_t> stubs;
        stubs.reserve(K * degree);
        for (std::size_t k = 0; k < K; ++k) stubs.insert(stubs.end(), degree, k);
        std::shuffle(stubs.begin(), stubs.end(), rng);

        std::vector<std::set<std::size_t>> adj(K);
        bool ok = true;
        std::vector<std::size_t> candidates;
        while (!stubs.empty()) {
            const std::size_t u = stubs.back();
            stubs.pop_back();
            candidates.clear();
            for (std::size_t j = 0; j < stubs.size(); ++j)
                if (stubs[j] != u && !adj[u].contains(stubs[j])) candidates.push_back(j);
            if (candidates.empty()) {
                ok = false;
                break;
            }
            std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
            const std::size_t j = candidates[pick(rng)];
            const std::size_t v = stubs[j];
            stubs[j] = stubs.back();
            stubs.pop_back();
            adj[u].insert(v);
            adj[v].insert(u);
        }
        if (!ok) continue;
        std::vector<std::vector<std::size_t>> nb(K);
        for (std::size_t k = 0; k < K; ++k) nb[k].assign(adj[k].begin(), adj[k].end());
        Topology t(K, std::move(nb), true);
        if (t.connected()) return t;
    }
    throw TopologyError("k_regular: no connected graph found in 100 attempts");
}

/// Per-node row of model mixing weights alpha_{k,i}, keyed by neighbor id.
using MixingRow = std::map<std::size_t, double>;

struct MixingWeights {
    std::vector<MixingRow> rows;
};

/// alpha_{k,i} = E_i / sum_{j in N_k} E_j.
inline MixingWeights mixing_weights(const Topology& topo, const std::vector<std::size_t>& shard_sizes)
{
    if (shard_sizes.size() != topo.size()) throw TopologyError("mixing_weights: need one shard size per node");
    for (std::size_t k = 0; k < shard_sizes.size(); ++k)
        if (shard_sizes[k] == 0) throw TopologyError("mixing_weights: node " + std::to_string(k) + " has an empty shard");
    MixingWeights w;
    w.rows.resize(topo.size());
    for (std::size_t k = 0; k < topo.size(); ++k) {
        double total = 0.0;
        for (auto i : topo.neighbors(k)) total += static_cast<double>(shard_sizes[i]);
        for (auto i : topo.neighbors(k)) w.rows[k][i] = static_cast<double>(shard_sizes[i]) / total;
    }
    return w;
}

/// Open interval (lo, hi).
struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const { return x > lo && x < hi; }
};

/// Stable consensus step sizes (0, 1/Delta), Delta = max_k sum_i alpha_{k,i}.
inline Interval epsilon_bound(const MixingWeights& weights)
{
    double delta = 0.0;
    for (const auto& row : weights.rows) {
        double s = 0.0;
        for (const auto& [i, a] : row) s += a;
        delta = std::max(delta, s);
    }
    return {0.0, delta > 0.0 ? 1.0 / delta : std::numeric_limits<double>::infinity()};
}

/// Piecewise-constant topology over rounds [0, T).
class TopologySchedule {
public:
    struct Phase {
        std::size_t begin = 0; // inclusive
        std::size_t end = 0;   // exclusive
        Topology topology;
    };

    TopologySchedule() = default;

    TopologySchedule(std::vector<Phase> phases, std::size_t total_rounds) : phases_(std::move(phases))
    {
        if (phases_.empty()) throw TopologyError("topology schedule: no phases");
        std::sort(phases_.begin(), phases_.end(), [](const Phase& a, const Phase& b) { return a.begin < b.begin; });
        std::size_t expect = 0;
        for (const auto& p : phases_) {
            if (p.end <= p.begin) throw TopologyError("topology schedule: empty or reversed phase");
            if (p.begin > expect) throw TopologyError("topology schedule: gap before round " + std::to_string(p.begin));
            if (p.begin < expect) throw TopologyError("topology schedule: overlap at round " + std::to_string(p.begin));
            if (p.topology.size() != phases_.front().topology.size())
                throw TopologyError("topology schedule: phases disagree on node count");
            expect = p.end;
        }
        if (expect < total_rounds) throw TopologyError("topology schedule: rounds from " + std::to_string(expect) + " are not covered");
    }

    static TopologySchedule constant(Topology t, std::size_t total_rounds)
    {
        return TopologySchedule({Phase{0, std::max<std::size_t>(total_rounds, 1), std::move(t)}}, total_rounds);
    }

    const Topology& at(std::size_t round) const
    {
        for (const auto& p : phases_)
            if (round >= p.begin && round < p.end) return p.topology;
        throw TopologyError("topology schedule: round " + std::to_string(round) + " outside schedule");
    }

    const std::vector<Phase>& phases() const { return phases_; }
    std::size_t node_count() const { return phases_.front().topology.size(); }

private:
    std::vector<Phase> phases_;
};

} // namespace flsim
