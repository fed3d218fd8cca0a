#pragma once

#include "mtkd/common.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace mtkd {

/// Target token sequence y_1..y_U. Tokens are vocabulary indices, never blank.
using LabelSequence = std::vector<int>;

/// Per-node output distributions of a transducer over all (frame, label-prefix)
/// pairs: a (T, U+1, V) tensor stored as log-probabilities, row-major in (t, u, k).
class DistributionLattice {
public:
    DistributionLattice() = default;

    /// Uniform lattice (every row is 1/V).
    DistributionLattice(std::size_t frames, std::size_t labels, std::size_t vocab);

    static DistributionLattice from_log_probs(std::size_t frames, std::size_t labels,
                                              std::size_t vocab, std::vector<double> log_values);
    static DistributionLattice from_probs(std::size_t frames, std::size_t labels,
                                          std::size_t vocab, const std::vector<double>& probs);

    std::size_t frames() const { return frames_; }
    std::size_t labels() const { return labels_; }
    std::size_t vocab() const { return vocab_; }
    std::size_t size() const { return log_values_.size(); }

    std::size_t index(std::size_t t, std::size_t u, std::size_t k) const {
        return (t * (labels_ + 1) + u) * vocab_ + k;
    }

    double log_prob(std::size_t t, std::size_t u, std::size_t k) const {
        return log_values_[index(t, u, k)];
    }
    double& log_prob(std::size_t t, std::size_t u, std::size_t k) {
        return log_values_[index(t, u, k)];
    }
    double prob(std::size_t t, std::size_t u, std::size_t k) const;

    std::span<const double> row(std::size_t t, std::size_t u) const {
        return {log_values_.data() + index(t, u, 0), vocab_};
    }

    const std::vector<double>& log_values() const { return log_values_; }
    std::vector<double>& log_values() { return log_values_; }

    /// Largest |logsumexp(row)| over all rows.
    double max_normalization_error() const;

    /// Throws ValidationError when shape invariants fail or a row does not sum
    /// to one within `tolerance`.
    void validate(double tolerance = 1e-6) const;

private:
    std::size_t frames_ = 0;
    std::size_t labels_ = 0;
    std::size_t vocab_ = 0;
    std::vector<double> log_values_;
};

/// One emission in a lattice path. A blank step leaves node (t, u) for (t+1, u);
/// a label step leaves (t, u) for (t, u+1) emitting y_{u+1}.
struct AlignmentStep {
    int t = 0;
    int u = 0;
    int symbol = kBlank;

    bool operator==(const AlignmentStep&) const = default;
};

/// Symbol stored on label steps of alignments enumerated without a label sequence.
inline constexpr int kUnboundLabel = -1;

/// Monotone path from (0, 0) to (T, U): T blank steps and U label steps,
/// ending with the blank at (T-1, U).
struct Alignment {
    std::vector<AlignmentStep> steps;

    bool operator==(const Alignment&) const = default;
};

/// Default guard on the number of paths the brute-force routines may visit.
inline constexpr std::uint64_t kOracleGuard = 1'000'000;

/// C(T+U-1, U), the number of valid alignments.
std::uint64_t alignment_count(std::size_t frames, std::size_t labels);

void validate_labels(const LabelSequence& y, std::size_t vocab);

/// Whether a lattice operation insists on normalized rows. Gradient checks
/// perturb individual log-values and need `skip`.
enum class RowCheck { require_normalized, skip };

/// Checks shape and lattice-compatibility of `y`; throws ShapeError /
/// ValidationError.
void check_lattice_and_labels(const DistributionLattice& lattice, const LabelSequence& y,
                              RowCheck rows = RowCheck::require_normalized);

/// True iff `path` satisfies every Alignment invariant for a (T, U) lattice.
/// When `y` is given, label steps must carry the matching token; otherwise
/// they may carry kUnboundLabel.
bool is_valid_alignment(const Alignment& path, std::size_t frames, std::size_t labels,
                        const LabelSequence* y = nullptr);

/// -log P(y|X) by forward-backward in the log domain. `grad` has the lattice
/// layout and holds d loss / d log Z(t,u,k); only the blank and the next-label
/// entries of each node are nonzero.
LossWithGrad rnnt_loss(const DistributionLattice& lattice, const LabelSequence& y,
                       RowCheck rows = RowCheck::require_normalized);

/// Forward variables log alpha(t, u), row-major T x (U+1). Exposed for tests.
std::vector<double> rnnt_forward_variables(const DistributionLattice& lattice,
                                           const LabelSequence& y);

/// Exhaustive oracle: sums the linear-domain probability of every alignment
/// with compensated summation and returns -log of the total.
double brute_force_loss(const DistributionLattice& lattice, const LabelSequence& y,
                        std::uint64_t guard = kOracleGuard);

/// Every valid alignment in lexicographic order (blank before label).
std::vector<Alignment> enumerate_alignments(std::size_t frames, std::size_t labels,
                                            std::uint64_t guard = kOracleGuard);
std::vector<Alignment> enumerate_alignments(std::size_t frames, const LabelSequence& y,
                                            std::uint64_t guard = kOracleGuard);

/// Sum of log Z along the path.
double alignment_log_prob(const DistributionLattice& lattice, const Alignment& path);

/// Viterbi path. Among equal-probability paths the one taking the blank step
/// first at the earliest divergence wins.
Alignment one_best_alignment(const DistributionLattice& lattice, const LabelSequence& y);

}  // namespace mtkd
