#pragma once

#include <cstdint>
#include <random>

namespace horizon {

/// splitmix64 step; used to derive independent per-path seeds from the
/// master seed so that path order and thread count never change results.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Deterministic per-path engine: seed = H(master, stream, path).
inline std::mt19937_64 path_rng(std::uint64_t master, std::uint64_t stream, std::uint64_t path) {
    std::uint64_t s = master;
    std::uint64_t a = splitmix64(s);
    s ^= stream + 0x632BE59BD9B4E019ULL;
    std::uint64_t b = splitmix64(s);
    s ^= path + 0x9E3779B97F4A7C15ULL;
    std::uint64_t c = splitmix64(s);
    return std::mt19937_64(a ^ (b * 0x2545F4914F6CDD1DULL) ^ (c << 1));
}

}  // namespace horizon
