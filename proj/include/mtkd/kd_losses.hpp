#pragma once

#include "mtkd/common.hpp"
#include "mtkd/lattice.hpp"

#include <span>
#include <string>
#include <vector>

namespace mtkd {

/// Which lattice rows the lattice-level KD sums cover.
///   label_rows: rows u = 0..U-1, the nodes that have a next label y_{u+1}
///               (1-based label index u = 1..U). Default.
///   all_nodes:  every row u = 0..U.
enum class KdRows { label_rows, all_nodes };

/// Three-bucket view of a lattice: per node log p(next label), log p(blank),
/// log p(everything else). Layout (T, U+1, 3).
class CollapsedLattice {
public:
    static constexpr std::size_t kCorrect = 0;
    static constexpr std::size_t kBlankBucket = 1;
    static constexpr std::size_t kOther = 2;

    CollapsedLattice() = default;
    CollapsedLattice(std::size_t frames, std::size_t labels, std::vector<double> log_values);

    std::size_t frames() const { return frames_; }
    std::size_t labels() const { return labels_; }
    std::size_t size() const { return log_values_.size(); }
    std::size_t index(std::size_t t, std::size_t u, std::size_t bucket) const {
        return (t * (labels_ + 1) + u) * 3 + bucket;
    }
    double log_prob(std::size_t t, std::size_t u, std::size_t bucket) const {
        return log_values_[index(t, u, bucket)];
    }
    double prob(std::size_t t, std::size_t u, std::size_t bucket) const;

    const std::vector<double>& log_values() const { return log_values_; }
    std::vector<double>& log_values() { return log_values_; }

    /// Every triple sums to one within `tolerance`.
    void validate(double tolerance = 1e-6) const;

private:
    std::size_t frames_ = 0;
    std::size_t labels_ = 0;
    std::vector<double> log_values_;
};

/// Cross-entropy of student rows against teacher rows, summed over nodes.
/// Gradient is w.r.t. student log-values (lattice layout).
LossWithGrad full_lattice_kd(const DistributionLattice& teacher, const DistributionLattice& student,
                             KdRows rows = KdRows::label_rows);

/// Bucket sums per node. At row u = U there is no next label and the
/// correct-symbol bucket holds probability 0.
CollapsedLattice collapse(const DistributionLattice& lattice, const LabelSequence& y);

/// Pulls a gradient w.r.t. collapsed log-values back onto the full lattice's
/// log-values.
std::vector<double> collapse_backward(const DistributionLattice& lattice, const LabelSequence& y,
                                      std::span<const double> grad_collapsed);

/// Three-bucket cross-entropy. Gradient w.r.t. student collapsed log-values.
LossWithGrad collapsed_kd(const CollapsedLattice& teacher, const CollapsedLattice& student,
                          KdRows rows = KdRows::label_rows);

/// Teacher distribution at one node of its 1-best path, as stored for training.
struct PathNodeTarget {
    int t = 0;
    int u = 0;
    std::vector<double> probs;
};

/// Teacher rows read along `path`.
std::vector<PathNodeTarget> path_targets(const DistributionLattice& teacher, const Alignment& path);

struct OneBestKdResult {
    double value = 0.0;
    /// d loss / d student log-values, lattice layout.
    std::vector<double> grad;
    std::size_t nodes_used = 0;
    /// Set when the time shift pushed every node past the last frame.
    bool empty = false;
};

/// Cross-entropy along the teacher's 1-best path. The student node for path
/// node (t, u) is read at (t + tau, u); nodes with t + tau >= T are dropped.
OneBestKdResult one_best_kd(std::span<const PathNodeTarget> targets,
                            const DistributionLattice& student, std::size_t tau = 0);
OneBestKdResult one_best_kd(const DistributionLattice& teacher, const DistributionLattice& student,
                            const Alignment& path, std::size_t tau = 0);

enum class Distance { L1, L2 };

/// Per-teacher linear map from the student embedding space (D_S) into a
/// teacher's space (D_T).
struct LossNet {
    Matrix weight;  // D_T x D_S
    Matrix bias;    // D_T x 1

    LossNet() = default;
    LossNet(std::size_t student_dim, std::size_t teacher_dim);

    std::size_t input_dim() const { return static_cast<std::size_t>(weight.cols()); }
    std::size_t output_dim() const { return static_cast<std::size_t>(weight.rows()); }

    static LossNet identity(std::size_t dim);
    /// Row-wise application to a T x D_S sequence.
    Matrix apply(const Matrix& frames) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        f(prefix + "weight", weight);
        f(prefix + "bias", bias);
    }
};

struct EmbeddingKdResult {
    double value = 0.0;
    Matrix grad_student;  // T x D_S
    Matrix grad_weight;   // D_T x D_S
    Matrix grad_bias;     // D_T x 1
};

/// (1/T) * sum over t < T - tau of Dist(LossNet(student_{t+tau}), teacher_t).
/// The distance is summed over embedding dimensions. The student lags the
/// teacher by `tau` frames, so its first tau frames and the teacher's last tau
/// frames have no partner.
EmbeddingKdResult embedding_kd(const Matrix& student, const Matrix& teacher, const LossNet& lossnet,
                               Distance dist, std::size_t tau = 0);

/// Frame-averaged L1 error between projected student and teacher, the
/// checkpoint-selection criterion. Equal to embedding_kd with Distance::L1.
double embedding_l1(const Matrix& student, const Matrix& teacher, const LossNet& lossnet,
                    std::size_t tau = 0);

/// Interpolation weights for multi-teacher alignment KD.
struct KDWeights {
    std::size_t tau = 0;
    double lambda = 0.5;
    std::vector<double> omegas;

    /// omegas nonnegative and summing to one within 1e-9; lambda >= 0.
    void validate() const;
};

void validate_omegas(std::span<const double> omegas);

/// sum_n omega_n * L_n.
double nbest_kd(std::span<const double> per_teacher_losses, std::span<const double> omegas);

/// L_rnnt + lambda * L_nbest. The gradient w.r.t. (rnnt, nbest) is (1, lambda).
double final_loss(double rnnt, double nbest, double lambda);

}  // namespace mtkd
