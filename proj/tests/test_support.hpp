#pragma once

#include "mtkd/lattice.hpp"
#include "mtkd/nn.hpp"
#include "mtkd/random.hpp"
#include "mtkd/teachers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mtkd::testing {

/// Random normalized lattice; log-values are log-softmax of N(0, spread^2) logits.
inline DistributionLattice random_lattice(std::size_t T, std::size_t U, std::size_t V, Rng& rng,
                                          double spread = 1.5) {
    std::vector<double> values(T * (U + 1) * V);
    for (std::size_t row = 0; row < T * (U + 1); ++row) {
        double* r = values.data() + row * V;
        for (std::size_t k = 0; k < V; ++k) r[k] = spread * rng.normal();
        const double lse = log_sum_exp(r, V);
        for (std::size_t k = 0; k < V; ++k) r[k] -= lse;
    }
    return DistributionLattice::from_log_probs(T, U, V, std::move(values));
}

inline LabelSequence random_labels(std::size_t U, std::size_t V, Rng& rng) {
    LabelSequence y(U);
    for (auto& token : y) token = 1 + static_cast<int>(rng.below(V - 1));
    return y;
}

inline Matrix random_frames(Eigen::Index T, Eigen::Index D, Rng& rng) {
    Matrix m(T, D);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

/// Inverse of flatten_params.
template <class Model>
void assign_flat(Model& model, const std::vector<double>& x) {
    std::size_t offset = 0;
    for (auto& v : param_views(model)) {
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(offset),
                  x.begin() + static_cast<std::ptrdiff_t>(offset + v.values.size()), v.values.begin());
        offset += v.values.size();
    }
}

// Upper 0.1% points of the chi-square distribution, indexed by degrees of freedom.
inline double chi_square_999(std::size_t dof) {
    static const double table[] = {0.0, 10.828, 13.816, 16.266, 18.467};
    return table[dof];
}

struct DrawStats {
    std::vector<double> freq;
    double chi_square = 0.0;
};

inline DrawStats draw(const std::vector<double>& probs, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> counts(probs.size(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[sample_teacher(probs, rng)];
    DrawStats s;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        s.freq.push_back(static_cast<double>(counts[k]) / static_cast<double>(n));
        if (probs[k] > 0.0) {
            const double expected = probs[k] * static_cast<double>(n);
            const double diff = static_cast<double>(counts[k]) - expected;
            s.chi_square += diff * diff / expected;
        }
    }
    return s;
}

/// Central differences of a scalar function at `x`.
template <class F>
std::vector<double> central_differences(std::vector<double> x, F&& f, double step = 1e-4) {
    std::vector<double> grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double saved = x[i];
        x[i] = saved + step;
        const double plus = f(x);
        x[i] = saved - step;
        const double minus = f(x);
        x[i] = saved;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

/// Relative error |a - n| / max(|a|, |n|, floor). Entries whose magnitude is
/// below `floor` are effectively compared in absolute terms at floor * error.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& numeric, double floor = 1e-3) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
    }
    return worst;
}

/// Pascal's triangle, independent of mtkd::binomial.
inline std::uint64_t pascal(std::size_t n, std::size_t k) {
    std::vector<std::vector<std::uint64_t>> row(n + 1, std::vector<std::uint64_t>(n + 1, 0));
    for (std::size_t i = 0; i <= n; ++i) {
        row[i][0] = 1;
        for (std::size_t j = 1; j <= i; ++j) row[i][j] = row[i - 1][j - 1] + row[i - 1][j];
    }
    return k <= n ? row[n][k] : 0;
}

}  // namespace mtkd::testing
