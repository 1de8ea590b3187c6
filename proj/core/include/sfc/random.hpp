#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace sfc {

// Purposes tag independent random streams so that, e.g., adding a channel
// or switching on membrane noise never shifts another stream.
enum class stream_purpose : std::uint32_t {
    poisson = 1,
    mismatch = 2,
    membrane_noise = 3,
    dataset = 4,
    shuffle = 5,
    presentation = 6,
    init = 7,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Mixes (seed, index, purpose) into a single 64-bit key.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t index, stream_purpose purpose) noexcept {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ (index * 0xd1b54a32d192ed03ULL));
    k = splitmix64(k ^ (static_cast<std::uint64_t>(purpose) * 0x8cb92ba72f3d8dd7ULL));
    return k;
}

// Derives a child seed, used to hand out per-iteration or per-sample seeds.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, stream_purpose purpose) noexcept {
    return stream_key(seed, index, purpose);
}

using rng_engine = std::mt19937_64;

inline rng_engine make_stream(std::uint64_t seed, std::uint64_t index, stream_purpose purpose) {
    return rng_engine{stream_key(seed, index, purpose)};
}

// Uniform in [0, 1) with 53 bits, independent of the standard library's
// distribution implementations so streams are identical across toolchains.
inline double uniform01(rng_engine& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double exponential(rng_engine& rng, double rate) {
    return -std::log1p(-uniform01(rng)) / rate;
}

// Box-Muller; discards the second variate to keep the stream stateless.
inline double standard_normal(rng_engine& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace sfc
