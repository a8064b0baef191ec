// rng.hpp - deterministic seeded random streams. All randomness in the
// library flows through explicit seeds; there is no global generator.
#pragma once

#include <cstdint>

namespace warpchain {

// splitmix64; used both as a mixer for derived stream seeds and as the
// generator itself (passes BigCrush, more than enough for data synthesis).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        return lo + int(next_u64() % std::uint64_t(hi - lo + 1));
    }

private:
    std::uint64_t state_;
};

// Derives an independent stream seed from (seed, stream ids).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    Rng r(seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xc2b2ae3d27d4eb4full));
    r.next_u64();
    return r.next_u64();
}

}  // namespace warpchain
