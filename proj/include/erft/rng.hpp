#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace erft {

// SplitMix64: the toolkit's named deterministic generator (64-bit state,
// Steele et al. output mix). Every random quantity in the pipeline is drawn
// from one of these, seeded through derive_seed(), so a single top-level
// seed reproduces a run bit-for-bit on any platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, bound) by rejection-free scaling (Lemire);
    // integer-only so selections are identical across platforms.
    std::uint64_t next_below(std::uint64_t bound) {
        const std::uint64_t x = next_u64();
        return static_cast<std::uint64_t>((static_cast<__uint128_t>(x) * bound) >> 64);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    // Standard normal via Box-Muller; consumes exactly two draws per call.
    float normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(6.283185307179586 * u2));
    }

private:
    std::uint64_t state_;
};

// Key derivation: fan a top-level seed out to independent streams,
// tagged by role ("select", "backbone", "scene", ...) and an index.
// FNV-1a over the tag, mixed with the seed and index through SplitMix64.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view role, std::uint64_t index = 0) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char ch : role) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001B3ull;
    }
    SplitMix64 mix(seed ^ h);
    mix.next_u64();
    SplitMix64 mix2(mix.next_u64() + 0x9E3779B97F4A7C15ull * index);
    return mix2.next_u64();
}

} // namespace erft
