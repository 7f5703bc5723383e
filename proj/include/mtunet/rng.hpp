#pragma once

#include <cstdint>
#include <vector>

namespace mtunet {

/// PCG32 (XSH-RR 64/32). Identical (seed, stream) pairs yield identical
/// sequences on every platform; this is the only entropy source in the library.
class Pcg32 {
public:
    Pcg32(std::uint64_t seed, std::uint64_t stream) : state_(0), inc_((stream << 1u) | 1u) {
        next();
        state_ += seed;
        next();
    }

    std::uint32_t next() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    /// Uniform in [0, 1).
    double next_double() { return static_cast<double>(next()) * 0x1p-32; }

    /// Uniform in (0, 1); never hits either endpoint.
    double next_double_open() { return (static_cast<double>(next()) + 0.5) * 0x1p-32; }

    /// Uniform integer in [0, n), unbiased via rejection sampling.
    std::uint32_t next_below(std::uint32_t n) {
        std::uint32_t threshold = (0u - n) % n;
        for (;;) {
            std::uint32_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Per-episode seed derivation: order-independent yet fully deterministic.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(base ^ index);
}

/// Fisher-Yates shuffle driven by a Pcg32.
template <class T>
void shuffle(std::vector<T>& v, Pcg32& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = rng.next_below(static_cast<std::uint32_t>(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace mtunet
