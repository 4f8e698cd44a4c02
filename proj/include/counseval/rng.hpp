#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace counseval {

// 64-bit FNV-1a. Used for feature hashing and config fingerprints.
inline constexpr std::uint64_t kFnvBasis = 1469598103934665603ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = kFnvBasis) {
    for (unsigned char c : data) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Deterministic RNG. Wraps std::mt19937_64 (whose output sequence the
// standard pins down exactly) and supplies its own bounded-int, uniform,
// gaussian and shuffle so no implementation-defined distribution code is
// involved. Identical seeds give identical streams on every platform.
class DetRng {
public:
    explicit DetRng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next() { return gen_(); }

    // Unbiased integer in [0, n) via rejection sampling.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("DetRng::bounded: n must be > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (stateless variant, one value per call).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Fisher-Yates with our own bounded().
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream derived from the original seed, not from the
    // current position, so per-item streams do not depend on draw order.
    DetRng derive(std::uint64_t stream) const {
        std::uint64_t s = seed_ ^ (0xA0761D6478BD642FULL + stream * 0xE7037ED1A0B428DBULL);
        return DetRng(splitmix64(s));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace counseval
