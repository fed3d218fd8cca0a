#pragma once

#include "mtkd/data.hpp"
#include "mtkd/decode.hpp"
#include "mtkd/nn.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mtkd {

/// How a teacher turns its slice of the input features into embeddings.
///   linear:    e_t = A [x_{t-past}; ...; x_{t+future}]
///   posterior: per-frame softmax over the task prototypes (restricted to the
///              slice, sharpness beta), windowed, then tanh(A q + b)
enum class TeacherMode { linear, posterior };

struct TeacherSpec {
    std::string id;
    TeacherMode mode = TeacherMode::posterior;
    /// Input feature range [feature_lo, feature_hi); hi = 0 means input_dim.
    std::size_t feature_lo = 0;
    std::size_t feature_hi = 0;
    int past = 1;
    int future = 1;
    std::size_t embed_dim = 12;
    std::uint64_t seed = 1;
    double sharpness = 0.5;
    /// Transducer head fitted on the teacher's embeddings at construction.
    std::size_t head_fit_steps = 300;
    std::size_t head_fit_batch = 8;
    double head_lr = 0.01;
    std::size_t head_pred_embed = 8;
    std::size_t head_pred_hidden = 16;
    std::size_t head_joint_dim = 24;

    void validate(std::size_t input_dim) const;
};

void to_json(nlohmann::json& j, const TeacherSpec& s);
void from_json(const nlohmann::json& j, TeacherSpec& s);

/// Three structurally different teachers: the first sees only the first half
/// of the features, the second only the second half, the third all of them
/// with a wider window.
std::vector<TeacherSpec> default_teacher_specs(const TaskConfig& task);

/// Frozen synthetic teacher. Parameters are rounded to float32 once built, so
/// they survive the archive format unchanged.
class Teacher {
public:
    /// Draws the encoder from spec.seed and fits the head on utterances of
    /// `task` (split "teacher-fit-<id>").
    Teacher(const TeacherSpec& spec, const SyntheticTask& task);

    /// Zero parameters of the right shapes, to be filled from a saved copy.
    static Teacher blank(const TeacherSpec& spec, std::size_t input_dim, std::size_t vocab);

    const TeacherSpec& spec() const { return spec_; }
    const std::string& id() const { return spec_.id; }
    std::size_t embed_dim() const { return spec_.embed_dim; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t vocab() const { return head_.vocab_size(); }
    const TransducerHead& head() const { return head_; }

    /// Percentage on a dev split; set by measure_dev_wer or restored from metadata.
    std::optional<double> dev_wer;

    /// Teacher embeddings E^T (T x embed_dim). Counts as one forward call.
    Matrix embed(const Matrix& features) const;

    /// Number of embed() calls in this process, for checking that stored
    /// labels are used instead of recomputation.
    static std::uint64_t forward_calls();
    static void reset_forward_calls();

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        f(prefix + "encoder.weight", weight_);
        f(prefix + "encoder.bias", bias_);
        f(prefix + "encoder.prototypes", prototypes_);
        head_.visit(f, prefix + "head.");
    }

    /// Rounds every parameter to the nearest float32.
    void freeze();

private:
    Teacher(const TeacherSpec& spec, std::size_t input_dim, std::size_t vocab);
    std::size_t window_input_dim() const;

    TeacherSpec spec_;
    std::size_t input_dim_ = 0;
    Matrix weight_;      // embed_dim x (window width * per-frame dim)
    Matrix bias_;        // embed_dim x 1 (zero in linear mode)
    Matrix prototypes_;  // V x slice width (empty in linear mode)
    TransducerHead head_;

    static std::atomic<std::uint64_t> forward_calls_;
};

struct TeacherLabels {
    Matrix embeddings;
    DistributionLattice lattice;
    Alignment one_best;
};

TeacherLabels teacher_labels(const Teacher& teacher, const Matrix& features, const LabelSequence& y);

inline constexpr int kPseudoTranscriptionBeam = 8;

LabelSequence pseudo_transcribe(const Teacher& teacher, const Matrix& features,
                                int beam = kPseudoTranscriptionBeam);

/// TER (%) of pseudo_transcribe over `utterances`.
double measure_dev_wer(const Teacher& teacher, const std::vector<Utterance>& utterances,
                       int beam = kPseudoTranscriptionBeam);

// ---- teacher selection ---------------------------------------------------------

enum class SamplingKind { uniform, wer_based, similarity_based };

SamplingKind parse_sampling(const std::string& name);
std::string to_string(SamplingKind kind);

/// Nonnegative and summing to one within 1e-9, else ValidationError.
void validate_probs(std::span<const double> probs);

std::vector<double> uniform_probs(std::size_t n);

/// p_n = (sum_{k != n} WER_k) / (sum_k WER_k) / (N - 1).
std::vector<double> wer_probs(std::span<const double> wers);

/// How a mean cosine similarity in [-1, 1] becomes a nonnegative weight.
enum class SimilarityMap { shifted, clipped };

struct SimilarityResult {
    std::vector<double> probs;
    std::vector<double> similarities;  // after mapping
    bool uniform_fallback = false;
};

/// Frame-averaged cosine similarity of two equally shaped sequences. Frames
/// where either side has zero norm are skipped; nullopt if none remain.
std::optional<double> mean_cosine(const Matrix& a, const Matrix& b);

/// projected_student[n] is the student embedding mapped by teacher n's
/// LossNet, teachers[n] that teacher's embedding of the same frames.
SimilarityResult similarity_probs(std::span<const Matrix> projected_student,
                                  std::span<const Matrix> teachers,
                                  SimilarityMap map = SimilarityMap::shifted);

/// Inverse-CDF draw. Uses exactly one uniform from `rng` for every call.
std::size_t sample_teacher(std::span<const double> probs, Rng& rng);

}  // namespace mtkd
