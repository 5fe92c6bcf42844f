#pragma once

#include <cstdint>
#include <random>

namespace wncs {

/// SplitMix64 step, used to derive independent stream seeds from one master seed.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Per-purpose generators. Stream k is seeded with the k-th SplitMix64
/// output of the master seed, in the declaration order below, so adding
/// noise never shifts the channel sample path.
struct RngStreams {
    std::mt19937_64 channel;
    std::mt19937_64 compute;
    std::mt19937_64 ca_link;
    std::mt19937_64 sc_link;
    std::mt19937_64 noise;

    explicit RngStreams(std::uint64_t master) {
        std::uint64_t s = master;
        channel.seed(splitmix64(s));
        compute.seed(splitmix64(s));
        ca_link.seed(splitmix64(s));
        sc_link.seed(splitmix64(s));
        noise.seed(splitmix64(s));
    }
};

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

}  // namespace wncs
