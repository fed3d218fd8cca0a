#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mtkd {

/// Seeded generator with platform-independent derived distributions.
/// std::mt19937_64's raw sequence is fixed by the standard; the standard
/// distributions are not, so the conversions live here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one draw per call).
    double normal();

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    /// Uniform integer in [lo, hi].
    int range(int lo, int hi) { return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1))); }

    /// Fisher-Yates shuffle of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

    /// Independent child stream (splitmix64 of a fresh draw).
    Rng split();

private:
    std::mt19937_64 engine_;
};

}  // namespace mtkd
