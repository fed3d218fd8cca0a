#pragma once

#include "mtkd/io.hpp"

#include <iosfwd>
#include <string>
#include <vector>

// Artifact-level entry points behind the mtkd command-line tool. Each command
// parses and validates its config, checks its inputs, and only then creates
// the output directory, echoes the effective config to <out>/config.json and
// writes its results. Nothing depends on wall-clock time.
namespace mtkd::commands {

struct GenDataConfig {
    TaskConfig task;
    std::size_t unlabeled = 300;
    std::size_t dev = 40;
    std::size_t train = 80;
    std::size_t test = 100;

    void validate() const;
};

struct GenTeachersConfig {
    /// Empty means the three default teachers for the task.
    std::vector<TeacherSpec> teachers;
    std::string dev_split = "dev";
    int dev_beam = kPseudoTranscriptionBeam;

    void validate() const;
};

struct ExtractLabelsConfig {
    /// Empty means every teacher in the index.
    std::vector<std::string> teachers;
    std::vector<std::string> embed_splits{"unlabeled", "dev"};
    /// Split with reference tokens for 1-best targets; empty skips them.
    std::string path_split = "train";
    /// Split to pseudo-transcribe; empty skips it.
    std::string pseudo_split = "unlabeled";
    int pseudo_beam = kPseudoTranscriptionBeam;

    void validate() const;
};

struct PretrainConfig {
    ModelConfig model;
    PretrainPlan plan;
    std::vector<std::string> teachers;
    std::string train_split = "unlabeled";
    std::string dev_split = "dev";

    void validate() const;
};

struct FinetuneConfig {
    ModelConfig model;
    FinetunePlan plan;
    /// Teachers whose 1-best targets enter the loss when lambda > 0.
    std::vector<std::string> teachers;
    std::string train_split = "train";
    /// Empty skips the final evaluation.
    std::string eval_split = "test";

    void validate() const;
};

struct DecodeConfig {
    std::string split = "test";
    int beam = 8;

    void validate() const;
};

struct AblateConfig {
    ModelConfig model;
    PretrainPlan pretrain;
    FinetunePlan finetune;
    std::vector<std::string> teachers;
    std::vector<SamplingKind> strategies{SamplingKind::uniform, SamplingKind::wer_based,
                                         SamplingKind::similarity_based};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::string train_split = "unlabeled";
    std::string dev_split = "dev";
    std::string finetune_split = "train";
    std::string eval_split = "test";

    void validate() const;
};

void to_json(nlohmann::json& j, const GenDataConfig& c);
void from_json(const nlohmann::json& j, GenDataConfig& c);
void to_json(nlohmann::json& j, const GenTeachersConfig& c);
void from_json(const nlohmann::json& j, GenTeachersConfig& c);
void to_json(nlohmann::json& j, const ExtractLabelsConfig& c);
void from_json(const nlohmann::json& j, ExtractLabelsConfig& c);
void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void to_json(nlohmann::json& j, const FinetuneConfig& c);
void from_json(const nlohmann::json& j, FinetuneConfig& c);
void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);
void to_json(nlohmann::json& j, const AblateConfig& c);
void from_json(const nlohmann::json& j, AblateConfig& c);

/// Writes task.json and <split>.jsonl / <split>.features.tkde for unlabeled,
/// dev, train and test. Unlabeled utterances carry no tokens.
void gen_data(const GenDataConfig& config, const fs::path& out);

/// Builds the teachers, measures their dev WER and saves them with an index.
void gen_teachers(const GenTeachersConfig& config, const fs::path& data, const fs::path& out);

/// Writes <id>.<split>.tkde embeddings, <id>.<path_split>.paths.tkde 1-best
/// targets, <pseudo_split>.pseudo.<id>.jsonl manifests and labels.json.
void extract_labels(const ExtractLabelsConfig& config, const fs::path& data, const fs::path& teachers,
                    const fs::path& out);

/// Stage 1 from stored embeddings only: student.ckpt, metrics.jsonl, summary.json.
void pretrain(const PretrainConfig& config, const fs::path& data, const fs::path& labels, const fs::path& out);

/// Stage 2. `labels` may be empty when lambda = 0; `init` is an optional
/// pretrained checkpoint. Writes student.ckpt, metrics.jsonl and report.json.
void finetune(const FinetuneConfig& config, const fs::path& data, const fs::path& labels, const fs::path& init,
              const fs::path& out);

/// hypotheses.jsonl with one {id, tokens} line per utterance.
void decode(const DecodeConfig& config, const fs::path& data, const fs::path& model, const fs::path& out);

/// eval.json with the TER of the split (tokens required).
void eval(const DecodeConfig& config, const fs::path& data, const fs::path& model, const fs::path& out);

/// Pretrain + finetune + eval per strategy and seed; ablation.jsonl and ablation.md.
void ablate_sampling(const AblateConfig& config, const fs::path& data, const fs::path& labels,
                     const fs::path& out);

/// Full command line (args[0] is the program name). Errors are printed to
/// `err` as one line "error: <kind>: <message>"; returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Short machine-readable tag for an exception type, e.g. "truncated_archive".
std::string error_kind(const std::exception& e);

}  // namespace mtkd::commands
