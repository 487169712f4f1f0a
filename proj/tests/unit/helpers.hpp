#pragma once

#include "flsim/nn.hpp"
#include "flsim/partition.hpp"
#include "flsim/rng.hpp"

#include <random>
#include <vector>

namespace flsim::testing {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

inline std::vector<Example> random_examples(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed)
{
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Example> out(n);
    for (std::size_t h = 0; h < n; ++h) {
        out[h].x.resize(dim);
        for (auto& v : out[h].x) v = u(rng);
        out[h].y = h % classes;
    }
    return out;
}

inline Shard random_shard(std::size_t owner, std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed)
{
    Shard s;
    s.owner = owner;
    s.examples = random_examples(n, dim, classes, seed);
    for (std::size_t i = 0; i < n; ++i) s.source_indices.push_back(i);
    return s;
}

/// Parameters drawn uniformly from [-scale, scale].
inline ModelParams random_model(const Architecture& arch, std::uint64_t seed, double scale = 0.5)
{
    return arch.initialize(seed, scale);
}

} // namespace flsim::testing
