#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "ktan/tensor.hpp"

namespace ktan {

// Purpose-keyed substreams so that, e.g., student init draws the same values
// whether or not a teacher was initialized earlier in the run.
enum class RngStream : uint64_t {
    dataset = 1,
    teacher_init = 2,
    student_init = 3,
    discriminator_init = 4,
    regressor_init = 5,
    aux_head_init = 6,
    batcher = 7,
    augment = 8,
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG with hand-rolled transforms; std:: distributions are
// implementation-defined, which would break bit-reproducibility claims.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

    static Rng stream(uint64_t seed, RngStream which) {
        return Rng(splitmix64(seed ^ (static_cast<uint64_t>(which) * 0x9e3779b97f4a7c15ULL)));
    }

    uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two uniform draws per sample.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased [0, n) via rejection on the top bits.
    int64_t uniform_int(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return static_cast<int64_t>(x % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> perm(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(uniform_int(i + 1))]);
        return perm;
    }

    template <typename T>
    void fill_normal(Tensor<T>& t, double stddev) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal() * stddev);
    }

    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace ktan
