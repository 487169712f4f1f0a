#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace flsim {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a run seed and a list of tags
/// (round, node, purpose...). Order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept
{
    std::uint64_t h = splitmix64(seed);
    for (auto t : tags) {
        h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
    }
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags)
{
    return Rng{derive_seed(seed, tags)};
}

// Purpose tags keep streams for different consumers apart.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t batches = 2;
inline constexpr std::uint64_t partition = 3;
inline constexpr std::uint64_t topology = 4;
inline constexpr std::uint64_t participation = 5;
inline constexpr std::uint64_t drops = 6;
inline constexpr std::uint64_t synth = 7;
} // namespace stream

} // namespace flsim
