#pragma once

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <random>

namespace excusum {

/// SplitMix64 finalizer; used to derive independent stream seeds from a master seed.
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of the `index`-th substream of `master`. Independent of scheduling.
[[nodiscard]] constexpr std::uint64_t substream_seed(std::uint64_t master, std::uint64_t index) noexcept {
    return splitmix64(splitmix64(master) ^ splitmix64(index + 0x5851f42d4c957f2dULL));
}

using Engine = std::mt19937_64;

/// Boost distributions produce the same variates on every standard library.
using NormalDistribution = boost::random::normal_distribution<double>;
using ExponentialDistribution = boost::random::exponential_distribution<double>;

[[nodiscard]] inline Engine substream(std::uint64_t master, std::uint64_t index) {
    return Engine(substream_seed(master, index));
}

}  // namespace excusum
