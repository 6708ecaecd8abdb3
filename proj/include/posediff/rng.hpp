#ifndef POSEDIFF_RNG_HPP
#define POSEDIFF_RNG_HPP

#include <cstdint>
#include <random>

#include "tensor.hpp"

namespace posediff {

// Seeded random source. Every stochastic component owns one of these; nothing
// in the library touches global RNG state.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    // Independent substream: stable mix of (seed, stream index).
    static Rng stream(uint64_t seed, uint64_t index) {
        uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
        h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        h *= 0xff51afd7ed558ccdull;
        h ^= h >> 33;
        return Rng(h);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(eng_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(eng_);
    }
    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive range
        return std::uniform_int_distribution<int64_t>(lo, hi)(eng_);
    }
    uint64_t bits() { return eng_(); }

    template <typename T>
    Tensor<T> normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& x : t.v) {
            x = static_cast<T>(normal(mean, stddev));
        }
        return t;
    }

    template <typename T>
    Tensor<T> uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor<T> t(std::move(shape));
        for (auto& x : t.v) {
            x = static_cast<T>(uniform(lo, hi));
        }
        return t;
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

}  // namespace posediff

#endif  // POSEDIFF_RNG_HPP
