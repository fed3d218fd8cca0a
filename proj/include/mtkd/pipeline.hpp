#pragma once

#include "mtkd/data.hpp"
#include "mtkd/kd_losses.hpp"
#include "mtkd/optim.hpp"
#include "mtkd/student.hpp"
#include "mtkd/teachers.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mtkd {

// ---- learning-rate schedules ---------------------------------------------------

/// Warmup (linear initial -> peak), hold at peak, linear decay peak -> final.
/// Phase boundaries sit at warmup * total and (warmup + hold) * total and may
/// fall between integer steps.
struct LrSchedule {
    double initial = 1e-6;
    double peak = 1e-4;
    double final_lr = 5e-6;
    std::size_t total_steps = 1000;
    double warmup = 0.10;
    double hold = 0.40;
    double decay = 0.50;

    void validate() const;
};

/// Learning-rate rows for the 100h and 960h fine-tuning setups.
LrSchedule lr_schedule_100h(std::size_t total_steps);
LrSchedule lr_schedule_960h(std::size_t total_steps);

enum class LrPhase { warmup, hold, decay };

/// One linear piece evaluated at a (possibly fractional) step position, for
/// checking continuity at the boundaries.
double tri_stage_piece(LrPhase phase, double position, const LrSchedule& schedule);

/// Throws PreconditionError unless 0 <= step <= total_steps.
double tri_stage_lr(std::size_t step, const LrSchedule& schedule);

/// peak * min(s / warmup, sqrt(warmup / s)) with s = step + 1.
double noam_lr(std::size_t step, double peak, std::size_t warmup_steps);

// ---- metric records ------------------------------------------------------------

/// Line-delimited records with a fixed field order.
using MetricRecord = nlohmann::ordered_json;

std::string metrics_to_jsonl(const std::vector<MetricRecord>& records);

// ---- stage 1 ---------------------------------------------------------------------

struct PretrainPlan {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double lr = 3e-3;
    std::size_t warmup_steps = 50;
    OptimizerKind optimizer = OptimizerKind::adam;
    SamplingKind sampling = SamplingKind::uniform;
    SimilarityMap similarity_map = SimilarityMap::shifted;
    Distance distance = Distance::L1;
    std::size_t tau = 0;
    double clip_norm = 0.0;
    std::uint64_t seed = 1;
    MaskConfig masking;

    void validate() const;
};

void to_json(nlohmann::json& j, const PretrainPlan& p);
void from_json(const nlohmann::json& j, PretrainPlan& p);

struct TeacherInfo {
    std::string id;
    std::size_t embed_dim = 0;
    std::optional<double> dev_wer;
};

/// Features plus stored teacher embeddings, embeddings[n][i] for teacher n and
/// utterance i. The same teacher id may appear more than once.
struct EmbeddingData {
    std::vector<Matrix> features;
    std::vector<TeacherInfo> teachers;
    std::vector<std::vector<Matrix>> embeddings;

    void validate() const;
};

/// Embeds every utterance with every teacher.
EmbeddingData embed_with_teachers(const std::vector<const Teacher*>& teachers,
                                  const std::vector<Utterance>& utterances);

struct PretrainResult {
    StudentModel model;  // encoder from the selected epoch
    LossNetBank lossnets;
    /// Averaged dev L1 per epoch, entry 0 before any update.
    std::vector<double> dev_l1;
    /// dev_l1_per_teacher[epoch][n].
    std::vector<std::vector<double>> dev_l1_per_teacher;
    std::size_t best_epoch = 0;
    std::vector<double> step_losses;
    std::vector<std::size_t> teacher_draws;
    std::vector<MetricRecord> metrics;
};

/// Mean over utterances of embedding_l1 for each teacher entry.
std::vector<double> dev_l1_per_teacher(const StudentModel& model, const LossNetBank& lossnets,
                                       const EmbeddingData& dev, std::size_t tau);

/// Trains the encoder and per-teacher LossNets on the embedding KD loss with one sampled
/// teacher per utterance. The predictor and joint are left untouched.
PretrainResult pretrain_encoder(const ModelConfig& config, const PretrainPlan& plan,
                                const EmbeddingData& train, const EmbeddingData& dev);

// ---- stage 2 ---------------------------------------------------------------------

struct FinetunePlan {
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double initial_lr = 1e-4;
    double peak_lr = 1e-2;
    double final_lr = 5e-4;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lambda = 0.5;
    std::size_t tau = 0;
    /// Empty means 1/N for every teacher.
    std::vector<double> omegas;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    int beam = 8;
    MaskConfig masking;

    void validate() const;
};

void to_json(nlohmann::json& j, const FinetunePlan& p);
void from_json(const nlohmann::json& j, FinetunePlan& p);

struct LabeledData {
    std::vector<Matrix> features;
    std::vector<LabelSequence> tokens;

    void validate() const;
};

LabeledData labeled_from(const std::vector<Utterance>& utterances);

/// 1-best KD targets, targets[n][i] for teacher n and utterance i.
struct PathTargets {
    std::vector<std::string> teacher_ids;
    std::vector<std::vector<std::vector<PathNodeTarget>>> targets;
};

PathTargets extract_path_targets(const std::vector<const Teacher*>& teachers,
                                 const std::vector<Utterance>& utterances);

struct EvalReport {
    double ter = 0.0;
    std::vector<LabelSequence> hypotheses;
};

EvalReport evaluate(const StudentModel& model, const LabeledData& data, int beam = 8);

struct FinetuneResult {
    StudentModel model;
    std::vector<double> step_losses;
    std::vector<MetricRecord> metrics;
    std::optional<EvalReport> report;
};

/// Minimizes L_rnnt + lambda * sum_n omega_n L_1best(n) under tri_stage_lr.
/// The encoder starts from `encoder_init` when given; predictor and joint are
/// drawn from plan.seed. `eval` (optional) is decoded at the end.
FinetuneResult finetune(const ModelConfig& config, const FinetunePlan& plan, const LabeledData& train,
                        const Encoder* encoder_init = nullptr, const PathTargets* targets = nullptr,
                        const LabeledData* eval = nullptr);

}  // namespace mtkd
