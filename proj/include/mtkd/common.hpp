#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtkd {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Vocabulary index reserved for the blank symbol everywhere in the library.
inline constexpr int kBlank = 0;

/// Lower bound applied to student log-probabilities inside cross-entropies.
inline constexpr double kLogClamp = -80.0;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two operands disagree on (T, U, V, D) or similar.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An input violates a documented invariant (normalization, ranges, sums).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Brute-force enumeration refused because the alignment count exceeds the guard.
class OracleTooLargeError : public Error {
public:
    using Error::Error;
};

/// A precondition on scalar arguments failed (beam < 1, lambda < 0, N < 2, ...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Scalar loss together with its gradient. The layout of `grad` is defined by
/// the producing function.
struct LossWithGrad {
    double value = 0.0;
    std::vector<double> grad;
};

double log_add_exp(double a, double b);
double log_sum_exp(const double* values, std::size_t n);

/// Binomial coefficient C(n, k); saturates at UINT64_MAX.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

}  // namespace mtkd
