#pragma once

#include "flsim/dataset.hpp"
#include "flsim/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace flsim {

struct PartitionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Local example set of one device. `source_indices` point into the parent
/// Dataset, `examples` is the owned copy used for training.
struct Shard {
    std::size_t owner = 0;
    std::vector<std::size_t> source_indices;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
};

enum class PartitionScheme { iid, noniid };

struct PartitionSpec {
    PartitionScheme scheme = PartitionScheme::iid;

    // Shard sizes, first match wins: explicit sizes, fractions of |dataset|,
    // a common per-node size, or an even split of the whole dataset.
    std::vector<std::size_t> sizes;
    std::vector<double> fractions;
    std::size_t per_node = 0;

    // Non-IID: explicit class subset per node, or random subsets whose size is
    // uniform over [min_classes, max_classes] (0 = class count).
    std::vector<std::vector<std::size_t>> class_subsets;
    std::size_t min_classes = 2;
    std::size_t max_classes = 0;

    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<std::size_t> resolve_sizes(const Dataset& ds, std::size_t K, const PartitionSpec& spec)
{
    std::vector<std::size_t> sizes;
    if (!spec.sizes.empty()) {
        if (spec.sizes.size() != K) throw PartitionError("partition: sizes list must have one entry per node");
        sizes = spec.sizes;
    } else if (!spec.fractions.empty()) {
        if (spec.fractions.size() != K) throw PartitionError("partition: fractions list must have one entry per node");
        const double total = std::accumulate(spec.fractions.begin(), spec.fractions.end(), 0.0);
        if (total > 1.0 + 1e-9) throw PartitionError("partition: fractions sum to more than 1");
        for (double f : spec.fractions) {
            if (f <= 0.0) throw PartitionError("partition: fractions must be positive");
            sizes.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(ds.size()) + 1e-9)));
        }
    } else {
        const std::size_t each = spec.per_node > 0 ? spec.per_node : ds.size() / K;
        sizes.assign(K, each);
    }
    for (std::size_t k = 0; k < K; ++k)
        if (sizes[k] == 0) throw PartitionError("partition: node " + std::to_string(k) + " would get no examples");
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total > ds.size()) {
        throw PartitionError("partition: requested " + std::to_string(total) + " examples but dataset has " +
                             std::to_string(ds.size()));
    }
    return sizes;
}

inline std::vector<std::vector<std::size_t>> resolve_subsets(const Dataset& ds, std::size_t K,
                                                              const PartitionSpec& spec, Rng& rng)
{
    const std::size_t C = ds.class_count;
    auto covers = [C](const std::vector<std::vector<std::size_t>>& subsets) {
        std::set<std::size_t> seen;
        for (const auto& s : subsets) seen.insert(s.begin(), s.end());
        return seen.size() == C;
    };

    if (!spec.class_subsets.empty()) {
        if (spec.class_subsets.size() != K) throw PartitionError("partition: class_subsets needs one entry per node");
        for (std::size_t k = 0; k < K; ++k) {
            if (spec.class_subsets[k].empty())
                throw PartitionError("partition: node " + std::to_string(k) + " has an empty class subset");
            for (auto c : spec.class_subsets[k])
                if (c >= C) throw PartitionError("partition: node " + std::to_string(k) + " names unknown class");
        }
        if (!covers(spec.class_subsets)) throw PartitionError("partition: class subsets do not cover every class");
        return spec.class_subsets;
    }

    const std::size_t hi = spec.max_classes == 0 ? C : std::min(spec.max_classes, C);
    const std::size_t lo = std::clamp<std::size_t>(spec.min_classes, 1, hi);
    std::uniform_int_distribution<std::size_t> subset_size(lo, hi);
    std::vector<std::size_t> all(C);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::vector<std::vector<std::size_t>> subsets(K);
        for (auto& s : subsets) {
            std::shuffle(all.begin(), all.end(), rng);
            s.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(subset_size(rng)));
            std::sort(s.begin(), s.end());
        }
        if (covers(subsets)) return subsets;
    }
    throw PartitionError("partition: random class subsets failed to cover every class");
}

} // namespace detail

/// Splits `ds` into K disjoint shards. IID shards are uniform draws; non-IID
/// node k draws only from its class subset.
inline std::vector<Shard> partition(const Dataset& ds, std::size_t K, const PartitionSpec& spec)
{
    if (K == 0) throw PartitionError("partition: K must be positive");
    if (ds.size() == 0) throw PartitionError("partition: empty dataset");
    const auto sizes = detail::resolve_sizes(ds, K, spec);
    Rng rng = make_rng(spec.seed, {stream::partition});

    std::vector<Shard> shards(K);
    for (std::size_t k = 0; k < K; ++k) shards[k].owner = k;

    if (spec.scheme == PartitionScheme::iid) {
        std::vector<std::size_t> order(ds.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t at = 0;
        for (std::size_t k = 0; k < K; ++k) {
            shards[k].source_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                                            order.begin() + static_cast<std::ptrdiff_t>(at + sizes[k]));
            at += sizes[k];
        }
    } else {
        const auto subsets = detail::resolve_subsets(ds, K, spec, rng);
        std::vector<std::vector<std::size_t>> pools(ds.class_count);
        for (std::size_t h = 0; h < ds.size(); ++h) pools[ds.examples[h].y].push_back(h);
        for (auto& p : pools) std::shuffle(p.begin(), p.end(), rng);
        std::vector<bool> taken(ds.size(), false);

        for (std::size_t k = 0; k < K; ++k) {
            std::vector<std::size_t> avail;
            for (auto c : subsets[k])
                for (auto h : pools[c])
                    if (!taken[h]) avail.push_back(h);
            if (avail.size() < sizes[k]) {
                throw PartitionError("partition: node " + std::to_string(k) + " needs " + std::to_string(sizes[k]) +
                                     " examples but its class subset has only " + std::to_string(avail.size()) +
                                     " left");
            }
            // partial Fisher-Yates
            for (std::size_t i = 0; i < sizes[k]; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, avail.size() - 1);
                std::swap(avail[i], avail[pick(rng)]);
                taken[avail[i]] = true;
            }
            avail.resize(sizes[k]);
            shards[k].source_indices = std::move(avail);
        }
    }

    for (auto& s : shards) {
        std::sort(s.source_indices.begin(), s.source_indices.end());
        s.examples.reserve(s.source_indices.size());
        for (auto h : s.source_indices) s.examples.push_back(ds.examples[h]);
    }
    return shards;
}

/// Seeded shuffle of the shard split into ceil(E_k / B) batches of indices
/// into shard.examples; the last batch may be short. The order depends on
/// (seed, epoch, owner) only.
inline std::vector<std::vector<std::size_t>> minibatches(const Shard& shard, std::size_t B, std::uint64_t seed,
                                                         std::uint64_t epoch)
{
    if (B == 0) throw std::invalid_argument("minibatches: batch size must be positive");
    if (B > shard.size()) {
        throw std::invalid_argument("minibatches: batch size " + std::to_string(B) + " exceeds shard size " +
                                    std::to_string(shard.size()));
    }
    std::vector<std::size_t> order(shard.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, {stream::batches, epoch, shard.owner});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < order.size(); at += B) {
        const std::size_t end = std::min(order.size(), at + B);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

inline Batch gather(const Shard& shard, const std::vector<std::size_t>& indices)
{
    Batch b;
    b.reserve(indices.size());
    for (auto i : indices) b.push_back(&shard.examples.at(i));
    return b;
}

/// Concatenation of several shards, used by the centralized baseline.
inline Shard pool_shards(const std::vector<Shard>& shards, std::size_t owner = 0)
{
    Shard pooled;
    pooled.owner = owner;
    for (const auto& s : shards) {
        pooled.source_indices.insert(pooled.source_indices.end(), s.source_indices.begin(), s.source_indices.end());
        pooled.examples.insert(pooled.examples.end(), s.examples.begin(), s.examples.end());
    }
    return pooled;
}

} // namespace flsim
