#pragma once
// Deterministic random numbers. Everything downstream (datasets, training,
// sampling) derives from explicit u64 seeds so runs are bit-reproducible;
// no std::random distributions, whose output is implementation-defined.

#include <cmath>
#include <cstdint>

namespace fw {

// splitmix64 step: advances state and returns a well-mixed 64-bit word.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive an independent child seed from a parent seed and a stream index.
inline std::uint64_t child_seed(std::uint64_t parent, std::uint64_t stream) {
    std::uint64_t s = parent ^ (0x632be59bd9b4e019ull * (stream + 1));
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n), n > 0.
    int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

    // Standard normal via Box-Muller. Draws two uniforms per call and
    // discards the second variate: no hidden cache, so the draw sequence
    // depends only on call count.
    double normal() {
        double u1 = uniform();
        // Avoid log(0); offset keeps u1 in (0, 1].
        u1 = 1.0 - u1;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    Rng split(std::uint64_t stream) { return Rng(child_seed(state_, stream)); }

private:
    std::uint64_t state_;
};

}  // namespace fw
