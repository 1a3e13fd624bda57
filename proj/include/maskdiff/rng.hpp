#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace maskdiff {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic random stream. Draw helpers avoid std::uniform_* distributions
// (their output is implementation-defined); everything here is fully pinned
// by the mt19937_64 bit stream, so equal seeds give equal results on any
// conforming standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // Stream `index` under a master seed. Counter-based: each (master, index)
    // pair maps to an independent seed, so runs can be generated in any order.
    static Rng stream(uint64_t master, uint64_t index) {
        return Rng(splitmix64(splitmix64(master) ^
                              (0x9E3779B97F4A7C15ull * (index + 1))));
    }

    uint64_t next() { return eng_(); }

    // [0, 1), 53-bit resolution
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    // (0, 1); never returns 0, safe to feed log()
    double uniform_open() { return (double(next() >> 11) + 0.5) * 0x1.0p-53; }

    // 0..n-1, unbiased via rejection
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be > 0");
        uint64_t threshold = (~uint64_t(0)) - (~uint64_t(0)) % n;
        uint64_t x;
        do {
            x = next();
        } while (x >= threshold);
        return x % n;
    }

    double gumbel() { return -std::log(-std::log(uniform_open())); }

    // Index draw proportional to non-negative weights (need not be normalized).
    // Walks the cumulative sum; if rounding pushes the draw past the end,
    // falls back to the last positive-weight entry.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w))
                throw std::invalid_argument("Rng::categorical: weights must be finite and >= 0");
            total += w;
        }
        if (total <= 0.0)
            throw std::invalid_argument("Rng::categorical: total weight must be > 0");
        double u = uniform() * total;
        double acc = 0.0;
        int last_positive = -1;
        for (size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) last_positive = int(i);
            acc += weights[i];
            if (u < acc) return last_positive;
        }
        return last_positive;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace maskdiff
