#include "mtkd/kd_losses.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mtkd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// -q * log p with 0 log 0 := 0 and log p clamped from below. Accumulates the
// gradient w.r.t. log p into `grad`.
double cross_entropy_term(double teacher_prob, double student_log_prob, double* grad) {
    if (teacher_prob == 0.0) return 0.0;
    if (student_log_prob > kLogClamp) {
        *grad += -teacher_prob;
        return -teacher_prob * student_log_prob;
    }
    return -teacher_prob * kLogClamp;
}

std::size_t row_limit(std::size_t labels, KdRows rows) {
    return rows == KdRows::all_nodes ? labels + 1 : labels;
}

}  // namespace

CollapsedLattice::CollapsedLattice(std::size_t frames, std::size_t labels,
                                   std::vector<double> log_values)
    : frames_(frames), labels_(labels), log_values_(std::move(log_values)) {
    if (frames < 1) throw ValidationError("collapsed lattice: T must be >= 1");
    if (log_values_.size() != frames * (labels + 1) * 3) {
        throw ShapeError("collapsed lattice: value count does not match (T, U+1, 3)");
    }
}

double CollapsedLattice::prob(std::size_t t, std::size_t u, std::size_t bucket) const {
    return std::exp(log_prob(t, u, bucket));
}

void CollapsedLattice::validate(double tolerance) const {
    for (std::size_t t = 0; t < frames_; ++t) {
        for (std::size_t u = 0; u <= labels_; ++u) {
            const double lse = log_sum_exp(log_values_.data() + index(t, u, 0), 3);
            if (!(std::abs(lse) <= tolerance)) {
                throw ValidationError("collapsed lattice: triple does not sum to one");
            }
        }
    }
}

LossWithGrad full_lattice_kd(const DistributionLattice& teacher, const DistributionLattice& student,
                             KdRows rows) {
    if (teacher.frames() != student.frames() || teacher.labels() != student.labels() ||
        teacher.vocab() != student.vocab()) {
        throw ShapeError("full_lattice_kd: teacher and student shapes differ");
    }
    LossWithGrad out;
    out.grad.assign(student.size(), 0.0);
    const std::size_t last_row = row_limit(student.labels(), rows);
    for (std::size_t t = 0; t < student.frames(); ++t) {
        for (std::size_t u = 0; u < last_row; ++u) {
            for (std::size_t k = 0; k < student.vocab(); ++k) {
                const std::size_t i = student.index(t, u, k);
                out.value += cross_entropy_term(std::exp(teacher.log_values()[i]),
                                                student.log_values()[i], &out.grad[i]);
            }
        }
    }
    return out;
}

CollapsedLattice collapse(const DistributionLattice& lattice, const LabelSequence& y) {
    if (y.size() != lattice.labels()) {
        throw ShapeError("collapse: label sequence length does not match lattice U");
    }
    validate_labels(y, lattice.vocab());
    const std::size_t U = lattice.labels();
    std::vector<double> values(lattice.frames() * (U + 1) * 3, kNegInf);
    std::vector<double> rest;
    rest.reserve(lattice.vocab());
    for (std::size_t t = 0; t < lattice.frames(); ++t) {
        for (std::size_t u = 0; u <= U; ++u) {
            const int correct = u < U ? y[u] : -1;
            rest.clear();
            for (std::size_t k = 1; k < lattice.vocab(); ++k) {
                if (static_cast<int>(k) != correct) rest.push_back(lattice.log_prob(t, u, k));
            }
            const std::size_t base = (t * (U + 1) + u) * 3;
            if (correct > 0) {
                values[base + CollapsedLattice::kCorrect] =
                    lattice.log_prob(t, u, static_cast<std::size_t>(correct));
            }
            values[base + CollapsedLattice::kBlankBucket] = lattice.log_prob(t, u, kBlank);
            values[base + CollapsedLattice::kOther] =
                rest.empty() ? kNegInf : log_sum_exp(rest.data(), rest.size());
        }
    }
    return CollapsedLattice(lattice.frames(), U, std::move(values));
}

std::vector<double> collapse_backward(const DistributionLattice& lattice, const LabelSequence& y,
                                      std::span<const double> grad_collapsed) {
    const CollapsedLattice collapsed = collapse(lattice, y);
    if (grad_collapsed.size() != collapsed.size()) {
        throw ShapeError("collapse_backward: gradient size does not match collapsed lattice");
    }
    const std::size_t U = lattice.labels();
    std::vector<double> grad(lattice.size(), 0.0);
    for (std::size_t t = 0; t < lattice.frames(); ++t) {
        for (std::size_t u = 0; u <= U; ++u) {
            const int correct = u < U ? y[u] : -1;
            const double g_other = grad_collapsed[collapsed.index(t, u, CollapsedLattice::kOther)];
            const double log_other = collapsed.log_prob(t, u, CollapsedLattice::kOther);
            for (std::size_t k = 0; k < lattice.vocab(); ++k) {
                const std::size_t i = lattice.index(t, u, k);
                if (k == kBlank) {
                    grad[i] = grad_collapsed[collapsed.index(t, u, CollapsedLattice::kBlankBucket)];
                } else if (static_cast<int>(k) == correct) {
                    grad[i] = grad_collapsed[collapsed.index(t, u, CollapsedLattice::kCorrect)];
                } else if (log_other != kNegInf) {
                    // d logsumexp / d member = member share of the bucket
                    grad[i] = g_other * std::exp(lattice.log_prob(t, u, k) - log_other);
                }
            }
        }
    }
    return grad;
}

LossWithGrad collapsed_kd(const CollapsedLattice& teacher, const CollapsedLattice& student,
                          KdRows rows) {
    if (teacher.frames() != student.frames() || teacher.labels() != student.labels()) {
        throw ShapeError("collapsed_kd: teacher and student shapes differ");
    }
    LossWithGrad out;
    out.grad.assign(student.size(), 0.0);
    const std::size_t last_row = row_limit(student.labels(), rows);
    for (std::size_t t = 0; t < student.frames(); ++t) {
        for (std::size_t u = 0; u < last_row; ++u) {
            for (std::size_t b = 0; b < 3; ++b) {
                const std::size_t i = student.index(t, u, b);
                out.value += cross_entropy_term(std::exp(teacher.log_values()[i]),
                                                student.log_values()[i], &out.grad[i]);
            }
        }
    }
    return out;
}

std::vector<PathNodeTarget> path_targets(const DistributionLattice& teacher, const Alignment& path) {
    if (!is_valid_alignment(path, teacher.frames(), teacher.labels())) {
        throw ShapeError("path_targets: path does not fit the lattice");
    }
    std::vector<PathNodeTarget> targets;
    targets.reserve(path.steps.size());
    for (const auto& step : path.steps) {
        PathNodeTarget node{step.t, step.u, std::vector<double>(teacher.vocab())};
        for (std::size_t k = 0; k < teacher.vocab(); ++k) {
            node.probs[k] = teacher.prob(step.t, step.u, k);
        }
        targets.push_back(std::move(node));
    }
    return targets;
}

OneBestKdResult one_best_kd(std::span<const PathNodeTarget> targets,
                            const DistributionLattice& student, std::size_t tau) {
    OneBestKdResult out;
    out.grad.assign(student.size(), 0.0);
    for (const auto& node : targets) {
        if (node.probs.size() != student.vocab()) {
            throw ShapeError("one_best_kd: teacher row size differs from student V");
        }
        if (node.t < 0 || node.u < 0 || static_cast<std::size_t>(node.u) > student.labels() ||
            static_cast<std::size_t>(node.t) >= student.frames()) {
            throw ShapeError("one_best_kd: path node outside the student lattice");
        }
        const std::size_t shifted = static_cast<std::size_t>(node.t) + tau;
        if (shifted >= student.frames()) continue;
        ++out.nodes_used;
        for (std::size_t k = 0; k < student.vocab(); ++k) {
            const std::size_t i = student.index(shifted, static_cast<std::size_t>(node.u), k);
            out.value += cross_entropy_term(node.probs[k], student.log_values()[i], &out.grad[i]);
        }
    }
    out.empty = out.nodes_used == 0;
    return out;
}

OneBestKdResult one_best_kd(const DistributionLattice& teacher, const DistributionLattice& student,
                            const Alignment& path, std::size_t tau) {
    if (teacher.frames() != student.frames() || teacher.labels() != student.labels() ||
        teacher.vocab() != student.vocab()) {
        throw ShapeError("one_best_kd: teacher and student shapes differ");
    }
    const auto targets = path_targets(teacher, path);
    return one_best_kd(targets, student, tau);
}

LossNet::LossNet(std::size_t student_dim, std::size_t teacher_dim)
    : weight(Matrix::Zero(static_cast<Eigen::Index>(teacher_dim),
                          static_cast<Eigen::Index>(student_dim))),
      bias(Matrix::Zero(static_cast<Eigen::Index>(teacher_dim), 1)) {}

LossNet LossNet::identity(std::size_t dim) {
    LossNet net(dim, dim);
    net.weight.setIdentity();
    return net;
}

Matrix LossNet::apply(const Matrix& frames) const {
    Matrix out = frames * weight.transpose();
    out.rowwise() += bias.col(0).transpose();
    return out;
}

EmbeddingKdResult embedding_kd(const Matrix& student, const Matrix& teacher, const LossNet& lossnet,
                               Distance dist, std::size_t tau) {
    const auto T = static_cast<std::size_t>(student.rows());
    if (T < 1 || student.cols() < 1) throw ShapeError("embedding_kd: empty student sequence");
    if (static_cast<std::size_t>(teacher.rows()) != T) {
        throw ShapeError("embedding_kd: student and teacher frame counts differ");
    }
    if (lossnet.input_dim() != static_cast<std::size_t>(student.cols()) ||
        lossnet.output_dim() != static_cast<std::size_t>(teacher.cols()) ||
        static_cast<std::size_t>(lossnet.bias.rows()) != lossnet.output_dim() || lossnet.bias.cols() != 1) {
        throw ShapeError("embedding_kd: LossNet does not map D_S to D_T");
    }
    if (tau >= T) throw PreconditionError("embedding_kd: tau must be < T");
    if (!student.allFinite() || !teacher.allFinite()) {
        throw ValidationError("embedding_kd: non-finite embedding value");
    }

    EmbeddingKdResult out;
    out.grad_student = Matrix::Zero(student.rows(), student.cols());
    out.grad_weight = Matrix::Zero(lossnet.weight.rows(), lossnet.weight.cols());
    out.grad_bias = Matrix::Zero(lossnet.bias.rows(), 1);
    const double scale = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t + tau < T; ++t) {
        const auto s = static_cast<Eigen::Index>(t + tau);
        const Vector projected = lossnet.weight * student.row(s).transpose() + lossnet.bias.col(0);
        const Vector diff = projected - teacher.row(static_cast<Eigen::Index>(t)).transpose();
        Vector g(diff.size());
        if (dist == Distance::L1) {
            out.value += scale * diff.cwiseAbs().sum();
            for (Eigen::Index i = 0; i < diff.size(); ++i) {
                g[i] = diff[i] > 0.0 ? scale : (diff[i] < 0.0 ? -scale : 0.0);
            }
        } else {
            out.value += scale * diff.squaredNorm();
            g = 2.0 * scale * diff;
        }
        out.grad_bias.col(0) += g;
        out.grad_weight += g * student.row(s);
        out.grad_student.row(s) += (lossnet.weight.transpose() * g).transpose();
    }
    return out;
}

double embedding_l1(const Matrix& student, const Matrix& teacher, const LossNet& lossnet,
                    std::size_t tau) {
    return embedding_kd(student, teacher, lossnet, Distance::L1, tau).value;
}

void validate_omegas(std::span<const double> omegas) {
    if (omegas.empty()) throw ValidationError("weights: no teacher weights given");
    double sum = 0.0;
    for (double w : omegas) {
        if (!(w >= 0.0)) throw ValidationError("weights: negative teacher weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        std::ostringstream os;
        os << "weights: teacher weights sum to " << sum << ", expected 1";
        throw ValidationError(os.str());
    }
}

void KDWeights::validate() const {
    validate_omegas(omegas);
    if (!(lambda >= 0.0)) throw PreconditionError("weights: lambda must be >= 0");
}

double nbest_kd(std::span<const double> per_teacher_losses, std::span<const double> omegas) {
    if (per_teacher_losses.size() != omegas.size()) {
        throw ShapeError("nbest_kd: loss count differs from weight count");
    }
    validate_omegas(omegas);
    double total = 0.0;
    for (std::size_t n = 0; n < omegas.size(); ++n) total += omegas[n] * per_teacher_losses[n];
    return total;
}

double final_loss(double rnnt, double nbest, double lambda) {
    if (!(lambda >= 0.0)) throw PreconditionError("final_loss: lambda must be >= 0");
    return rnnt + lambda * nbest;
}

}  // namespace mtkd
