#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nascell {

/// Deterministic random source. All randomness in the project flows through
/// this wrapper so that runs are reproducible from a single seed: the raw
/// mt19937_64 stream is standardized, and the derived draws below avoid
/// std::*_distribution, whose outputs differ between standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. No spare-value caching, so the state
    /// is fully captured by the underlying generator.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) *
                         std::cos(2.0 * 3.14159265358979323846 * u2);
        return mean + stddev * z;
    }

    /// Uniform integer in [0, n) by rejection sampling (unbiased).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % n;
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream oss;
        oss << gen_;
        return oss.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream iss(state);
        iss >> gen_;
        if (iss.fail()) throw std::invalid_argument("Rng::deserialize: bad state string");
    }

private:
    std::mt19937_64 gen_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(const char* s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace detail

/// Derives an independent stream seed from (master seed, purpose tag, index).
/// Used so that e.g. per-epoch batch shuffles are reproducible from the
/// master seed alone, which keeps checkpoint resume bit-compatible.
inline std::uint64_t derive_seed(std::uint64_t master, const char* tag, std::uint64_t index = 0) {
    return detail::splitmix64(master ^ detail::fnv1a(tag) ^ detail::splitmix64(index + 1));
}

} // namespace nascell
