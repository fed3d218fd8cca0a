#include "mtkd/teachers.hpp"

#include "mtkd/config.hpp"
#include "mtkd/optim.hpp"

#include <cmath>
#include <sstream>

namespace mtkd {
namespace {

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

void round_to_float(Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
    }
}

std::string mode_name(TeacherMode mode) { return mode == TeacherMode::linear ? "linear" : "posterior"; }

TeacherMode parse_mode(const std::string& name) {
    if (name == "linear") return TeacherMode::linear;
    if (name == "posterior") return TeacherMode::posterior;
    throw ConfigError("teacher: unknown mode '" + name + "' (expected linear or posterior)");
}

}  // namespace

std::atomic<std::uint64_t> Teacher::forward_calls_{0};

void TeacherSpec::validate(std::size_t input_dim) const {
    if (id.empty()) throw ValidationError("teacher: empty id");
    const std::size_t hi = feature_hi == 0 ? input_dim : feature_hi;
    if (feature_lo >= hi || hi > input_dim) {
        std::ostringstream os;
        os << "teacher '" << id << "': feature range [" << feature_lo << ", " << hi
           << ") outside input_dim " << input_dim;
        throw ValidationError(os.str());
    }
    if (past < 0 || future < 0) throw ValidationError("teacher '" + id + "': negative context");
    if (embed_dim == 0) throw ValidationError("teacher '" + id + "': embed_dim must be > 0");
    if (head_fit_batch == 0) throw ValidationError("teacher '" + id + "': head_fit_batch must be > 0");
}

void to_json(nlohmann::json& j, const TeacherSpec& s) {
    j = nlohmann::json{{"id", s.id},
                       {"mode", mode_name(s.mode)},
                       {"feature_lo", s.feature_lo},
                       {"feature_hi", s.feature_hi},
                       {"past", s.past},
                       {"future", s.future},
                       {"embed_dim", s.embed_dim},
                       {"seed", s.seed},
                       {"sharpness", s.sharpness},
                       {"head_fit_steps", s.head_fit_steps},
                       {"head_fit_batch", s.head_fit_batch},
                       {"head_lr", s.head_lr},
                       {"head_pred_embed", s.head_pred_embed},
                       {"head_pred_hidden", s.head_pred_hidden},
                       {"head_joint_dim", s.head_joint_dim}};
}

void from_json(const nlohmann::json& j, TeacherSpec& s) {
    const std::string where = "teacher";
    check_keys(j, {"id", "mode", "feature_lo", "feature_hi", "past", "future", "embed_dim", "seed",
                   "sharpness", "head_fit_steps", "head_fit_batch", "head_lr", "head_pred_embed",
                   "head_pred_hidden", "head_joint_dim"},
               where);
    const TeacherSpec d;
    if (!j.contains("id")) throw ConfigError("teacher: missing key 'id'");
    s.id = config_value(j, "id", d.id, where);
    s.mode = parse_mode(config_value(j, "mode", mode_name(d.mode), where));
    s.feature_lo = config_value(j, "feature_lo", d.feature_lo, where);
    s.feature_hi = config_value(j, "feature_hi", d.feature_hi, where);
    s.past = config_value(j, "past", d.past, where);
    s.future = config_value(j, "future", d.future, where);
    s.embed_dim = config_value(j, "embed_dim", d.embed_dim, where);
    s.seed = config_value(j, "seed", d.seed, where);
    s.sharpness = config_value(j, "sharpness", d.sharpness, where);
    s.head_fit_steps = config_value(j, "head_fit_steps", d.head_fit_steps, where);
    s.head_fit_batch = config_value(j, "head_fit_batch", d.head_fit_batch, where);
    s.head_lr = config_value(j, "head_lr", d.head_lr, where);
    s.head_pred_embed = config_value(j, "head_pred_embed", d.head_pred_embed, where);
    s.head_pred_hidden = config_value(j, "head_pred_hidden", d.head_pred_hidden, where);
    s.head_joint_dim = config_value(j, "head_joint_dim", d.head_joint_dim, where);
}

std::vector<TeacherSpec> default_teacher_specs(const TaskConfig& task) {
    const std::size_t half = task.input_dim / 2;
    TeacherSpec a;
    a.id = "w2v2";
    a.feature_lo = 0;
    a.feature_hi = half;
    a.embed_dim = 12;
    a.seed = 101;

    TeacherSpec b;
    b.id = "hubert";
    b.feature_lo = half;
    b.feature_hi = task.input_dim;
    b.embed_dim = 10;
    b.seed = 202;

    TeacherSpec c;
    c.id = "wavlm";
    c.past = 2;
    c.future = 2;
    c.embed_dim = 16;
    c.seed = 303;
    return {a, b, c};
}

Teacher::Teacher(const TeacherSpec& spec, std::size_t input_dim, std::size_t vocab)
    : spec_(spec), input_dim_(input_dim) {
    spec_.validate(input_dim);
    if (spec_.feature_hi == 0) spec_.feature_hi = input_dim;
    const std::size_t slice = spec_.feature_hi - spec_.feature_lo;
    const std::size_t per_frame = spec_.mode == TeacherMode::linear ? slice : vocab;
    weight_ = Matrix::Zero(idx(spec_.embed_dim),
                           idx(per_frame * static_cast<std::size_t>(spec_.past + spec_.future + 1)));
    bias_ = Matrix::Zero(idx(spec_.embed_dim), 1);
    prototypes_ = spec_.mode == TeacherMode::posterior ? Matrix::Zero(idx(vocab), idx(slice))
                                                       : Matrix::Zero(0, 0);
    head_ = TransducerHead(spec_.embed_dim, vocab, spec_.head_pred_embed, spec_.head_pred_hidden,
                           spec_.head_joint_dim);
}

Teacher Teacher::blank(const TeacherSpec& spec, std::size_t input_dim, std::size_t vocab) {
    return Teacher(spec, input_dim, vocab);
}

Teacher::Teacher(const TeacherSpec& spec, const SyntheticTask& task)
    : Teacher(spec, task.config().input_dim, task.config().vocab) {
    Rng rng(spec_.seed);
    const double scale = spec_.mode == TeacherMode::linear
                             ? 1.0 / std::sqrt(static_cast<double>(weight_.cols()))
                             : 1.5 / std::sqrt(static_cast<double>(spec_.past + spec_.future + 1));
    for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = scale * rng.normal();
    if (spec_.mode == TeacherMode::posterior) {
        for (Eigen::Index i = 0; i < bias_.size(); ++i) bias_.data()[i] = rng.uniform(-0.5, 0.5);
        prototypes_ = task.prototypes().middleCols(idx(spec_.feature_lo), prototypes_.cols());
    }
    Rng head_rng = rng.split();
    head_.init(head_rng);
    freeze();

    if (spec_.head_fit_steps == 0) return;
    const std::size_t pool = std::max<std::size_t>(64, spec_.head_fit_batch);
    std::vector<Matrix> embeddings;
    std::vector<LabelSequence> labels;
    for (const auto& utt : task.split("teacher-fit-" + spec_.id, pool)) {
        embeddings.push_back(embed(utt.features));
        labels.push_back(utt.tokens);
    }
    Optimizer adam(OptimizerKind::adam);
    std::size_t cursor = 0;
    for (std::size_t step = 0; step < spec_.head_fit_steps; ++step) {
        TransducerHead grads = head_;
        zero_params(grads);
        for (std::size_t b = 0; b < spec_.head_fit_batch; ++b, cursor = (cursor + 1) % pool) {
            TransducerHead::Cache cache;
            const auto lattice = head_.lattice(embeddings[cursor], labels[cursor], &cache);
            const auto loss = rnnt_loss(lattice, labels[cursor]);
            head_.backward(cache, embeddings[cursor], loss.grad, grads);
        }
        for (auto& v : param_views(grads)) {
            for (double& g : v.values) g /= static_cast<double>(spec_.head_fit_batch);
        }
        adam.step(head_, grads, spec_.head_lr);
    }
    freeze();
}

void Teacher::freeze() {
    round_to_float(weight_);
    round_to_float(bias_);
    round_to_float(prototypes_);
    head_.visit([](const std::string&, Matrix& m) { round_to_float(m); }, "");
}

std::uint64_t Teacher::forward_calls() { return forward_calls_.load(); }
void Teacher::reset_forward_calls() { forward_calls_.store(0); }

Matrix Teacher::embed(const Matrix& features) const {
    ++forward_calls_;
    if (static_cast<std::size_t>(features.cols()) != input_dim_) {
        std::ostringstream os;
        os << "teacher '" << spec_.id << "': feature dimension " << features.cols() << " != "
           << input_dim_;
        throw ShapeError(os.str());
    }
    if (features.rows() < 1) throw ValidationError("teacher: no input frames");
    const Matrix slice = features.middleCols(idx(spec_.feature_lo), idx(spec_.feature_hi - spec_.feature_lo));
    if (spec_.mode == TeacherMode::linear) {
        return build_window(slice, spec_.past, spec_.future) * weight_.transpose();
    }
    const Eigen::Index V = prototypes_.rows();
    Matrix posterior(slice.rows(), V);
    std::vector<double> scores(static_cast<std::size_t>(V));
    for (Eigen::Index t = 0; t < slice.rows(); ++t) {
        for (Eigen::Index c = 0; c < V; ++c) {
            scores[static_cast<std::size_t>(c)] = -spec_.sharpness * (slice.row(t) - prototypes_.row(c)).squaredNorm();
        }
        const double lse = log_sum_exp(scores.data(), scores.size());
        for (Eigen::Index c = 0; c < V; ++c) posterior(t, c) = std::exp(scores[static_cast<std::size_t>(c)] - lse);
    }
    Matrix pre = build_window(posterior, spec_.past, spec_.future) * weight_.transpose();
    pre.rowwise() += bias_.col(0).transpose();
    return pre.array().tanh().matrix();
}

TeacherLabels teacher_labels(const Teacher& teacher, const Matrix& features, const LabelSequence& y) {
    TeacherLabels out;
    out.embeddings = teacher.embed(features);
    out.lattice = teacher.head().lattice(out.embeddings, y);
    out.one_best = one_best_alignment(out.lattice, y);
    return out;
}

LabelSequence pseudo_transcribe(const Teacher& teacher, const Matrix& features, int beam) {
    return beam_search_decode(teacher.embed(features), teacher.head(), beam).tokens;
}

double measure_dev_wer(const Teacher& teacher, const std::vector<Utterance>& utterances, int beam) {
    if (utterances.empty()) throw ValidationError("dev wer: no utterances");
    std::vector<LabelSequence> hyps, refs;
    for (const auto& utt : utterances) {
        hyps.push_back(pseudo_transcribe(teacher, utt.features, beam));
        refs.push_back(utt.tokens);
    }
    return token_error_rate(hyps, refs);
}

// ---- teacher selection ---------------------------------------------------------

SamplingKind parse_sampling(const std::string& name) {
    if (name == "uniform") return SamplingKind::uniform;
    if (name == "wer" || name == "wer_based") return SamplingKind::wer_based;
    if (name == "similarity" || name == "similarity_based") return SamplingKind::similarity_based;
    throw ConfigError("unknown sampling strategy '" + name + "' (expected uniform, wer or similarity)");
}

std::string to_string(SamplingKind kind) {
    switch (kind) {
        case SamplingKind::uniform: return "uniform";
        case SamplingKind::wer_based: return "wer";
        case SamplingKind::similarity_based: return "similarity";
    }
    return "?";
}

void validate_probs(std::span<const double> probs) {
    if (probs.empty()) throw ValidationError("sampling: empty probability vector");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw ValidationError("sampling: negative or NaN probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("sampling: probabilities do not sum to 1");
}

std::vector<double> uniform_probs(std::size_t n) {
    if (n == 0) throw PreconditionError("uniform sampling: need at least one teacher");
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> wer_probs(std::span<const double> wers) {
    const std::size_t n = wers.size();
    if (n < 2) throw PreconditionError("wer sampling: need at least two teachers");
    double total = 0.0;
    for (double w : wers) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("wer sampling: every WER must be > 0");
        total += w;
    }
    std::vector<double> probs(n);
    for (std::size_t i = 0; i < n; ++i) {
        probs[i] = (total - wers[i]) / total / static_cast<double>(n - 1);
    }
    return probs;
}

std::optional<double> mean_cosine(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("similarity: student and teacher shapes differ");
    }
    double sum = 0.0;
    std::size_t frames = 0;
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
        const double na = a.row(t).norm();
        const double nb = b.row(t).norm();
        if (na == 0.0 || nb == 0.0) continue;
        sum += a.row(t).dot(b.row(t)) / (na * nb);
        ++frames;
    }
    if (frames == 0) return std::nullopt;
    return sum / static_cast<double>(frames);
}

SimilarityResult similarity_probs(std::span<const Matrix> projected_student,
                                  std::span<const Matrix> teachers, SimilarityMap map) {
    if (projected_student.size() != teachers.size() || teachers.empty()) {
        throw ShapeError("similarity: need one projected student per teacher");
    }
    SimilarityResult out;
    double total = 0.0;
    for (std::size_t n = 0; n < teachers.size(); ++n) {
        const auto cos = mean_cosine(projected_student[n], teachers[n]);
        double s = 0.0;
        if (cos) s = map == SimilarityMap::shifted ? (*cos + 1.0) / 2.0 : std::max(*cos, 0.0);
        out.similarities.push_back(s);
        total += s;
    }
    if (!(total > 0.0)) {
        out.probs = uniform_probs(teachers.size());
        out.uniform_fallback = true;
        return out;
    }
    for (double s : out.similarities) out.probs.push_back(s / total);
    return out;
}

std::size_t sample_teacher(std::span<const double> probs, Rng& rng) {
    validate_probs(probs);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t n = 0; n < probs.size(); ++n) {
        if (probs[n] <= 0.0) continue;
        cumulative += probs[n];
        last_positive = n;
        if (u < cumulative) return n;
    }
    return last_positive;
}

}  // namespace mtkd
