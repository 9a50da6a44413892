#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace raypose::rng {

// Stateless mixer for deriving independent stream seeds (per frame, per eye)
// from one run seed.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t index) {
    return splitmix64(base ^ splitmix64(stream ^ splitmix64(index)));
}

// Uniform double in [0, 1) with 53 random bits. The standard distributions
// are implementation-defined, so all draws go through these helpers to keep
// outputs identical across library versions.
inline double uniform_unit(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_open(std::mt19937_64& g) {  // (0, 1)
    double u;
    do {
        u = uniform_unit(g);
    } while (u == 0.0);
    return u;
}

inline double uniform_range(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(g);
}

inline double gaussian(std::mt19937_64& g) {  // Box-Muller, one sample per pair
    const double u1 = uniform_open(g);
    const double u2 = uniform_unit(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline double laplace(std::mt19937_64& g) {  // inverse CDF, scale 1
    const double u = uniform_open(g) - 0.5;
    return u < 0.0 ? std::log1p(2.0 * u) : -std::log1p(-2.0 * u);
}

inline double beta22(std::mt19937_64& g) {  // median of three uniforms ~ Beta(2,2)
    double a = uniform_unit(g);
    double b = uniform_unit(g);
    double c = uniform_unit(g);
    if (a > b) std::swap(a, b);
    if (b > c) std::swap(b, c);
    if (a > b) std::swap(a, b);
    return b;
}

}  // namespace raypose::rng
