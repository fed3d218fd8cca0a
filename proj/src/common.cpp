#include "mtkd/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mtkd {

double log_add_exp(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_sum_exp(const double* values, std::size_t n) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) hi = std::max(hi, values[i]);
    if (hi == -std::numeric_limits<double>::infinity()) return hi;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::exp(values[i] - hi);
    return hi + std::log(acc);
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t result = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        // result * (n - k + i) / i stays integral at every step
        const std::uint64_t num = n - k + i;
        if (result > std::numeric_limits<std::uint64_t>::max() / num) {
            return std::numeric_limits<std::uint64_t>::max();
        }
        result = result * num / i;
    }
    return result;
}

}  // namespace mtkd
