#include "mtkd/lattice.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mtkd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_shape(std::size_t frames, std::size_t labels, std::size_t vocab) {
    if (frames < 1) throw ValidationError("lattice: T must be >= 1");
    if (vocab < 2) throw ValidationError("lattice: V must be >= 2");
    (void)labels;
}

// Neumaier's variant of Kahan summation.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

void check_guard(std::size_t frames, std::size_t labels, std::uint64_t guard) {
    const std::uint64_t count = alignment_count(frames, labels);
    if (count > guard) {
        std::ostringstream os;
        os << "too large for oracle: C(T+U-1, U) = " << count << " exceeds guard " << guard;
        throw OracleTooLargeError(os.str());
    }
}

void enumerate_rec(int t, int u, int frames, int labels, const LabelSequence* y,
                   std::vector<AlignmentStep>& prefix, std::vector<Alignment>& out) {
    if (t == frames - 1 && u == labels) {
        prefix.push_back({t, u, kBlank});
        out.push_back(Alignment{prefix});
        prefix.pop_back();
        return;
    }
    if (t < frames - 1) {
        prefix.push_back({t, u, kBlank});
        enumerate_rec(t + 1, u, frames, labels, y, prefix, out);
        prefix.pop_back();
    }
    if (u < labels) {
        prefix.push_back({t, u, y ? (*y)[static_cast<std::size_t>(u)] : kUnboundLabel});
        enumerate_rec(t, u + 1, frames, labels, y, prefix, out);
        prefix.pop_back();
    }
}

}  // namespace

DistributionLattice::DistributionLattice(std::size_t frames, std::size_t labels, std::size_t vocab)
    : frames_(frames), labels_(labels), vocab_(vocab) {
    check_shape(frames, labels, vocab);
    log_values_.assign(frames * (labels + 1) * vocab, -std::log(static_cast<double>(vocab)));
}

DistributionLattice DistributionLattice::from_log_probs(std::size_t frames, std::size_t labels,
                                                        std::size_t vocab,
                                                        std::vector<double> log_values) {
    check_shape(frames, labels, vocab);
    if (log_values.size() != frames * (labels + 1) * vocab) {
        throw ShapeError("lattice: value count does not match (T, U+1, V)");
    }
    DistributionLattice lattice;
    lattice.frames_ = frames;
    lattice.labels_ = labels;
    lattice.vocab_ = vocab;
    lattice.log_values_ = std::move(log_values);
    return lattice;
}

DistributionLattice DistributionLattice::from_probs(std::size_t frames, std::size_t labels,
                                                    std::size_t vocab,
                                                    const std::vector<double>& probs) {
    std::vector<double> logs(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] < 0.0) throw ValidationError("lattice: negative probability");
        logs[i] = std::log(probs[i]);
    }
    return from_log_probs(frames, labels, vocab, std::move(logs));
}

double DistributionLattice::prob(std::size_t t, std::size_t u, std::size_t k) const {
    return std::exp(log_prob(t, u, k));
}

double DistributionLattice::max_normalization_error() const {
    double worst = 0.0;
    for (std::size_t t = 0; t < frames_; ++t) {
        for (std::size_t u = 0; u <= labels_; ++u) {
            const double lse = log_sum_exp(log_values_.data() + index(t, u, 0), vocab_);
            if (!std::isfinite(lse)) return std::numeric_limits<double>::infinity();
            worst = std::max(worst, std::abs(lse));
        }
    }
    return worst;
}

void DistributionLattice::validate(double tolerance) const {
    check_shape(frames_, labels_, vocab_);
    for (double v : log_values_) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
            throw ValidationError("lattice: non-finite log-probability");
        }
    }
    const double err = max_normalization_error();
    if (!(err <= tolerance)) {
        std::ostringstream os;
        os << "lattice: rows not normalized (max |logsumexp| = " << err << ")";
        throw ValidationError(os.str());
    }
}

std::uint64_t alignment_count(std::size_t frames, std::size_t labels) {
    if (frames == 0) return 0;
    return binomial(frames + labels - 1, labels);
}

void validate_labels(const LabelSequence& y, std::size_t vocab) {
    for (int token : y) {
        if (token < 0 || static_cast<std::size_t>(token) >= vocab) {
            throw ValidationError("labels: token out of vocabulary range");
        }
        if (token == kBlank) throw ValidationError("labels: blank token in label sequence");
    }
}

void check_lattice_and_labels(const DistributionLattice& lattice, const LabelSequence& y,
                              RowCheck rows) {
    if (y.size() != lattice.labels()) {
        std::ostringstream os;
        os << "shape mismatch: label sequence has " << y.size() << " tokens, lattice has U = "
           << lattice.labels();
        throw ShapeError(os.str());
    }
    validate_labels(y, lattice.vocab());
    if (rows == RowCheck::require_normalized) lattice.validate();
}

bool is_valid_alignment(const Alignment& path, std::size_t frames, std::size_t labels,
                        const LabelSequence* y) {
    if (frames == 0 || path.steps.size() != frames + labels) return false;
    int t = 0;
    int u = 0;
    std::size_t blanks = 0;
    for (const auto& step : path.steps) {
        if (step.t != t || step.u != u) return false;
        if (static_cast<std::size_t>(t) >= frames) return false;
        if (step.symbol == kBlank) {
            ++t;
            ++blanks;
        } else {
            if (static_cast<std::size_t>(u) >= labels) return false;
            if (y != nullptr) {
                if (step.symbol != (*y)[static_cast<std::size_t>(u)]) return false;
            } else if (step.symbol != kUnboundLabel && step.symbol <= 0) {
                return false;
            }
            ++u;
        }
    }
    return blanks == frames && static_cast<std::size_t>(u) == labels &&
           path.steps.back().symbol == kBlank;
}

std::vector<double> rnnt_forward_variables(const DistributionLattice& lattice,
                                           const LabelSequence& y) {
    const std::size_t T = lattice.frames();
    const std::size_t U = lattice.labels();
    std::vector<double> alpha(T * (U + 1), kNegInf);
    auto a = [&](std::size_t t, std::size_t u) -> double& { return alpha[t * (U + 1) + u]; };
    a(0, 0) = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u <= U; ++u) {
            if (t == 0 && u == 0) continue;
            double v = kNegInf;
            if (t > 0) v = a(t - 1, u) + lattice.log_prob(t - 1, u, kBlank);
            if (u > 0) {
                v = log_add_exp(v, a(t, u - 1) + lattice.log_prob(t, u - 1, y[u - 1]));
            }
            a(t, u) = v;
        }
    }
    return alpha;
}

LossWithGrad rnnt_loss(const DistributionLattice& lattice, const LabelSequence& y,
                       RowCheck rows) {
    check_lattice_and_labels(lattice, y, rows);
    const std::size_t T = lattice.frames();
    const std::size_t U = lattice.labels();

    const std::vector<double> alpha = rnnt_forward_variables(lattice, y);
    std::vector<double> beta(T * (U + 1), kNegInf);
    auto a = [&](std::size_t t, std::size_t u) { return alpha[t * (U + 1) + u]; };
    auto b = [&](std::size_t t, std::size_t u) -> double& { return beta[t * (U + 1) + u]; };

    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t u = U + 1; u-- > 0;) {
            double v = kNegInf;
            if (t + 1 < T) {
                v = lattice.log_prob(t, u, kBlank) + b(t + 1, u);
            } else if (u == U) {
                v = lattice.log_prob(t, u, kBlank);
            }
            if (u < U) v = log_add_exp(v, lattice.log_prob(t, u, y[u]) + b(t, u + 1));
            b(t, u) = v;
        }
    }

    const double log_likelihood = a(T - 1, U) + lattice.log_prob(T - 1, U, kBlank);
    LossWithGrad out;
    out.value = -log_likelihood;
    out.grad.assign(lattice.size(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t u = 0; u <= U; ++u) {
            double next = kNegInf;
            if (t + 1 < T) {
                next = b(t + 1, u);
            } else if (u == U) {
                next = 0.0;
            }
            if (next != kNegInf) {
                out.grad[lattice.index(t, u, kBlank)] =
                    -std::exp(a(t, u) + lattice.log_prob(t, u, kBlank) + next - log_likelihood);
            }
            if (u < U) {
                out.grad[lattice.index(t, u, static_cast<std::size_t>(y[u]))] =
                    -std::exp(a(t, u) + lattice.log_prob(t, u, y[u]) + b(t, u + 1) -
                              log_likelihood);
            }
        }
    }
    return out;
}

std::vector<Alignment> enumerate_alignments(std::size_t frames, std::size_t labels,
                                            std::uint64_t guard) {
    if (frames < 1) throw ValidationError("enumerate_alignments: T must be >= 1");
    check_guard(frames, labels, guard);
    std::vector<Alignment> out;
    out.reserve(alignment_count(frames, labels));
    std::vector<AlignmentStep> prefix;
    prefix.reserve(frames + labels);
    enumerate_rec(0, 0, static_cast<int>(frames), static_cast<int>(labels), nullptr, prefix, out);
    return out;
}

std::vector<Alignment> enumerate_alignments(std::size_t frames, const LabelSequence& y,
                                            std::uint64_t guard) {
    if (frames < 1) throw ValidationError("enumerate_alignments: T must be >= 1");
    check_guard(frames, y.size(), guard);
    std::vector<Alignment> out;
    out.reserve(alignment_count(frames, y.size()));
    std::vector<AlignmentStep> prefix;
    prefix.reserve(frames + y.size());
    enumerate_rec(0, 0, static_cast<int>(frames), static_cast<int>(y.size()), &y, prefix, out);
    return out;
}

double alignment_log_prob(const DistributionLattice& lattice, const Alignment& path) {
    double total = 0.0;
    for (const auto& step : path.steps) {
        total += lattice.log_prob(step.t, step.u, step.symbol);
    }
    return total;
}

double brute_force_loss(const DistributionLattice& lattice, const LabelSequence& y,
                        std::uint64_t guard) {
    check_lattice_and_labels(lattice, y);
    const auto paths = enumerate_alignments(lattice.frames(), y, guard);
    CompensatedSum total;
    for (const auto& path : paths) {
        double p = 1.0;
        for (const auto& step : path.steps) p *= lattice.prob(step.t, step.u, step.symbol);
        total.add(p);
    }
    return -std::log(total.value());
}

Alignment one_best_alignment(const DistributionLattice& lattice, const LabelSequence& y) {
    check_lattice_and_labels(lattice, y);
    const std::size_t T = lattice.frames();
    const std::size_t U = lattice.labels();

    // best[t][u]: highest log-probability of any path suffix from (t, u) to the end.
    std::vector<double> best(T * (U + 1), kNegInf);
    auto g = [&](std::size_t t, std::size_t u) -> double& { return best[t * (U + 1) + u]; };
    auto blank_score = [&](std::size_t t, std::size_t u) {
        if (t + 1 < T) return lattice.log_prob(t, u, kBlank) + g(t + 1, u);
        return u == U ? lattice.log_prob(t, u, kBlank) : kNegInf;
    };
    auto label_score = [&](std::size_t t, std::size_t u) {
        return u < U ? lattice.log_prob(t, u, y[u]) + g(t, u + 1) : kNegInf;
    };
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t u = U + 1; u-- > 0;) {
            g(t, u) = std::max(blank_score(t, u), label_score(t, u));
        }
    }

    Alignment path;
    path.steps.reserve(T + U);
    std::size_t t = 0;
    std::size_t u = 0;
    while (t < T) {
        bool take_blank = blank_score(t, u) >= label_score(t, u);
        if (u == U) take_blank = true;
        if (t + 1 == T && u < U) take_blank = false;
        if (take_blank) {
            path.steps.push_back({static_cast<int>(t), static_cast<int>(u), kBlank});
            ++t;
        } else {
            path.steps.push_back({static_cast<int>(t), static_cast<int>(u), y[u]});
            ++u;
        }
    }
    return path;
}

}  // namespace mtkd
