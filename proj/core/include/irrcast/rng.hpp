#ifndef IRRCAST_RNG_HPP
#define IRRCAST_RNG_HPP

#include <cstdint>
#include <random>

namespace irrcast {

using Rng = std::mt19937_64;

/// Mixes several integers into one seed (splitmix64 finalizer per word),
/// so sweep cells get independent streams from (seed, method, rate, ...).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0x9e3779b97f4a7c15ULL,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
    auto finalize = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t s = finalize(a);
    s = finalize(s ^ finalize(b));
    s = finalize(s ^ finalize(c));
    s = finalize(s ^ finalize(d));
    return s;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

} // namespace irrcast

#endif // IRRCAST_RNG_HPP
