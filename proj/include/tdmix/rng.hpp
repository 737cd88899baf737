#pragma once

#include <cstdint>
#include <string_view>

namespace tdmix {

// Deterministic, platform-independent randomness. All sampling in the library
// goes through these generators; std::random distributions are avoided because
// their output is implementation-defined.

/// SplitMix64 step; used for seeding and for deriving per-purpose streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over a string tag; combined with a base seed to derive stream seeds.
inline std::uint64_t hash_tag(std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// xoshiro256++ (Blackman & Vigna, public domain reference implementation).
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [-1, 1).
    double next_symmetric() { return 2.0 * next_u01() - 1.0; }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        // Lemire-style rejection-free enough for our n << 2^64 use; bias < 2^-53.
        return static_cast<std::uint64_t>(next_u01() * static_cast<double>(n));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

/// Derive an independent stream from (base_seed, purpose, index). This is the
/// one splitting rule used everywhere: results are reproducible for any worker
/// count because streams depend only on these three values.
inline Rng make_stream(std::uint64_t base_seed, std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t mix = base_seed ^ hash_tag(purpose);
    mix ^= 0x9e3779b97f4a7c15ULL * (index + 1);
    std::uint64_t sm = mix;
    return Rng(splitmix64(sm));
}

}  // namespace tdmix
