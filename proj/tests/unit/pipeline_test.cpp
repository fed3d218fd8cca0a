#include "mtkd/pipeline.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace mtkd {
namespace {

using testing::random_labels;

// ---- schedules ---------------------------------------------------------------------

TEST(TriStage, HundredHourValues) {
    const auto s = lr_schedule_100h(1000);
    EXPECT_DOUBLE_EQ(tri_stage_lr(0, s), 1e-6);
    EXPECT_DOUBLE_EQ(tri_stage_lr(100, s), 1e-4);
    EXPECT_DOUBLE_EQ(tri_stage_lr(500, s), 1e-4);
    EXPECT_DOUBLE_EQ(tri_stage_lr(1000, s), 5e-6);
    EXPECT_NEAR(tri_stage_lr(50, s), 0.5 * (1e-6 + 1e-4), 1e-18);
    EXPECT_NEAR(tri_stage_lr(750, s), 0.5 * (1e-4 + 5e-6), 1e-18);
}

TEST(TriStage, NineSixtyHourValues) {
    const auto s = lr_schedule_960h(2000);
    EXPECT_DOUBLE_EQ(tri_stage_lr(0, s), 1e-6);
    EXPECT_DOUBLE_EQ(tri_stage_lr(200, s), 5e-4);
    EXPECT_DOUBLE_EQ(tri_stage_lr(1000, s), 5e-4);
    EXPECT_DOUBLE_EQ(tri_stage_lr(2000, s), 1e-5);
}

TEST(TriStage, ContinuousAtBoundaries) {
    for (std::size_t total : {10u, 333u, 1000u, 4097u}) {
        for (const auto& s : {lr_schedule_100h(total), lr_schedule_960h(total)}) {
            const double b1 = s.warmup * static_cast<double>(total);
            const double b2 = (s.warmup + s.hold) * static_cast<double>(total);
            const double w = tri_stage_piece(LrPhase::warmup, b1, s);
            const double h = tri_stage_piece(LrPhase::hold, b1, s);
            const double d = tri_stage_piece(LrPhase::decay, b2, s);
            EXPECT_LE(std::abs(w - h) / h, 1e-15);
            EXPECT_LE(std::abs(d - s.peak) / s.peak, 1e-15);
        }
    }
}

TEST(TriStage, MonotonePiecesAndRange) {
    const auto s = lr_schedule_100h(97);
    for (std::size_t k = 1; k <= 97; ++k) {
        const double prev = tri_stage_lr(k - 1, s), cur = tri_stage_lr(k, s);
        if (static_cast<double>(k) <= 0.1 * 97) EXPECT_GE(cur, prev);
        if (static_cast<double>(k - 1) >= 0.5 * 97) EXPECT_LE(cur, prev);
        EXPECT_GE(cur, 1e-6);
        EXPECT_LE(cur, 1e-4);
    }
    EXPECT_THROW(tri_stage_lr(98, s), PreconditionError);
    auto bad = s;
    bad.hold = 0.5;
    EXPECT_THROW(tri_stage_lr(0, bad), ValidationError);
    bad = s;
    bad.final_lr = 0.0;
    EXPECT_THROW(tri_stage_lr(0, bad), ValidationError);
}

TEST(Noam, PeaksAtWarmup) {
    EXPECT_DOUBLE_EQ(noam_lr(9, 1.0, 10), 1.0);
    EXPECT_DOUBLE_EQ(noam_lr(0, 1.0, 10), 0.1);
    EXPECT_DOUBLE_EQ(noam_lr(39, 1.0, 10), 0.5);
}

// ---- token error rate ------------------------------------------------------------

std::size_t levenshtein_recursive(const LabelSequence& a, std::size_t i, const LabelSequence& b, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    const std::size_t sub = levenshtein_recursive(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
    const std::size_t del = levenshtein_recursive(a, i + 1, b, j) + 1;
    const std::size_t ins = levenshtein_recursive(a, i, b, j + 1) + 1;
    return std::min({sub, del, ins});
}

TEST(TokenErrorRate, MatchesRecursiveOracle) {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = random_labels(rng.below(7), 4, rng);
        const auto b = random_labels(rng.below(7), 4, rng);
        EXPECT_EQ(edit_distance(a, b), levenshtein_recursive(a, 0, b, 0));
    }
}

TEST(TokenErrorRate, HandValues) {
    EXPECT_DOUBLE_EQ(token_error_rate({{1, 2, 3}}, {{1, 2, 3}}), 0.0);
    EXPECT_DOUBLE_EQ(token_error_rate({{}}, {{1, 2, 3}}), 100.0);
    // one substitution and one insertion over 4 reference tokens
    EXPECT_DOUBLE_EQ(token_error_rate({{1, 4, 3}, {2, 2}}, {{1, 2, 3}, {2}}), 50.0);
    EXPECT_THROW(token_error_rate({{1}}, {{1}, {2}}), ShapeError);
    EXPECT_THROW(token_error_rate({{1}}, {{}}), ValidationError);
}

// ---- pretraining --------------------------------------------------------------------

struct PretrainFixture {
    TaskConfig task_config;
    SyntheticTask task{task_config};
    Teacher teacher{linear_spec(), task};
    EmbeddingData train = embed_with_teachers({&teacher}, task.split("unlabeled", 60));
    EmbeddingData dev = embed_with_teachers({&teacher}, task.split("dev", 20));
    ModelConfig model;

    static TeacherSpec linear_spec() {
        TeacherSpec s;
        s.id = "lin";
        s.mode = TeacherMode::linear;
        s.past = 1;
        s.future = 1;
        s.embed_dim = 6;
        s.head_fit_steps = 0;
        return s;
    }
};

TEST(Pretrain, LinearTeacherIsLearned) {
    const PretrainFixture f;
    PretrainPlan plan;
    plan.epochs = 12;
    plan.lr = 1e-2;
    const auto r = pretrain_encoder(f.model, plan, f.train, f.dev);
    ASSERT_EQ(r.dev_l1.size(), 13u);
    for (std::size_t e = 1; e <= 5; ++e) EXPECT_LT(r.dev_l1[e], r.dev_l1[e - 1]) << "epoch " << e;
    EXPECT_LT(r.dev_l1[r.best_epoch], 0.2 * r.dev_l1[0]);
    EXPECT_EQ(r.teacher_draws, std::vector<std::size_t>{60 * 12});
}

TEST(Pretrain, SelectsEarliestMinimumAndLeavesHeadAlone) {
    const PretrainFixture f;
    PretrainPlan plan;
    plan.epochs = 4;
    plan.lr = 0.3;  // large enough to bounce
    const auto r = pretrain_encoder(f.model, plan, f.train, f.dev);
    std::size_t best = 0;
    for (std::size_t e = 1; e < r.dev_l1.size(); ++e) {
        if (r.dev_l1[e] < r.dev_l1[best]) best = e;
    }
    EXPECT_EQ(r.best_epoch, best);
    EXPECT_DOUBLE_EQ(dev_l1_per_teacher(r.model, r.lossnets, f.dev, 0)[0], r.dev_l1[best]);

    const StudentModel fresh(f.model, plan.seed);
    EXPECT_EQ(flatten_params(r.model.head()), flatten_params(fresh.head()));
}

TEST(Pretrain, IdenticalTeachersReproduceSingleTeacher) {
    const PretrainFixture f;
    EmbeddingData train2 = f.train, dev2 = f.dev;
    train2.teachers.push_back(train2.teachers[0]);
    train2.embeddings.push_back(train2.embeddings[0]);
    dev2.teachers.push_back(dev2.teachers[0]);
    dev2.embeddings.push_back(dev2.embeddings[0]);
    PretrainPlan plan;
    plan.epochs = 3;
    const auto one = pretrain_encoder(f.model, plan, f.train, f.dev);
    const auto two = pretrain_encoder(f.model, plan, train2, dev2);
    EXPECT_EQ(one.step_losses, two.step_losses);
    EXPECT_EQ(one.dev_l1, two.dev_l1);
    EXPECT_EQ(flatten_params(one.model), flatten_params(two.model));
}

TEST(Pretrain, DeterministicMetrics) {
    const PretrainFixture f;
    PretrainPlan plan;
    plan.epochs = 2;
    plan.masking.enabled = true;
    const auto a = pretrain_encoder(f.model, plan, f.train, f.dev);
    const auto b = pretrain_encoder(f.model, plan, f.train, f.dev);
    EXPECT_EQ(metrics_to_jsonl(a.metrics), metrics_to_jsonl(b.metrics));
    plan.seed = 2;
    const auto c = pretrain_encoder(f.model, plan, f.train, f.dev);
    EXPECT_NE(metrics_to_jsonl(a.metrics), metrics_to_jsonl(c.metrics));
}

TEST(Pretrain, WerSamplingNeedsDevWer) {
    const PretrainFixture f;
    EmbeddingData train2 = f.train, dev2 = f.dev;
    train2.teachers.push_back(train2.teachers[0]);
    train2.embeddings.push_back(train2.embeddings[0]);
    dev2.teachers.push_back(dev2.teachers[0]);
    dev2.embeddings.push_back(dev2.embeddings[0]);
    PretrainPlan plan;
    plan.epochs = 1;
    plan.sampling = SamplingKind::wer_based;
    EXPECT_THROW(pretrain_encoder(f.model, plan, train2, dev2), PreconditionError);
    train2.teachers[0].dev_wer = 10.0;
    train2.teachers[1].dev_wer = 30.0;
    const auto r = pretrain_encoder(f.model, plan, train2, dev2);
    EXPECT_GT(r.teacher_draws[0], r.teacher_draws[1]);
}

TEST(Pretrain, SimilaritySamplingRuns) {
    const PretrainFixture f;
    PretrainPlan plan;
    plan.epochs = 1;
    plan.sampling = SamplingKind::similarity_based;
    const auto r = pretrain_encoder(f.model, plan, f.train, f.dev);
    EXPECT_EQ(r.teacher_draws[0], 60u);
}

TEST(PretrainPlan, StrictJson) {
    PretrainPlan p;
    p.distance = Distance::L2;
    p.sampling = SamplingKind::similarity_based;
    p.tau = 2;
    const nlohmann::json j = p;
    const auto back = j.get<PretrainPlan>();
    EXPECT_EQ(nlohmann::json(back), j);
    auto bad = j;
    bad["learning_rate"] = 1.0;
    EXPECT_THROW(bad.get<PretrainPlan>(), ConfigError);
    bad = j;
    bad["distance"] = "l3";
    EXPECT_THROW(bad.get<PretrainPlan>(), ConfigError);
}

// ---- fine-tuning --------------------------------------------------------------------

struct FinetuneFixture {
    TaskConfig task_config;
    SyntheticTask task{task_config};
    std::vector<Utterance> utts = task.split("train", 12);
    LabeledData train = labeled_from(utts);
    ModelConfig model;
    FinetunePlan plan = small_plan();

    static FinetunePlan small_plan() {
        FinetunePlan p;
        p.epochs = 2;
        p.batch_size = 4;
        p.lambda = 0.0;
        return p;
    }
};

TEST(Finetune, LambdaZeroIgnoresTargets) {
    const FinetuneFixture f;
    auto spec = default_teacher_specs(f.task_config)[2];
    spec.head_fit_steps = 10;
    const Teacher teacher(spec, f.task);
    const auto targets = extract_path_targets({&teacher}, f.utts);
    const auto plain = finetune(f.model, f.plan, f.train);
    const auto with_targets = finetune(f.model, f.plan, f.train, nullptr, &targets);
    EXPECT_EQ(plain.step_losses, with_targets.step_losses);
    EXPECT_EQ(flatten_params(plain.model), flatten_params(with_targets.model));

    auto kd = f.plan;
    kd.lambda = 0.5;
    EXPECT_THROW(finetune(f.model, kd, f.train), PreconditionError);
    const auto with_kd = finetune(f.model, kd, f.train, nullptr, &targets);
    EXPECT_NE(with_kd.step_losses, plain.step_losses);
}

TEST(Finetune, IdenticalTeachersReproduceSingleTeacher) {
    const FinetuneFixture f;
    auto spec = default_teacher_specs(f.task_config)[2];
    spec.head_fit_steps = 10;
    const Teacher teacher(spec, f.task);
    const auto one = extract_path_targets({&teacher}, f.utts);
    const auto two = extract_path_targets({&teacher, &teacher}, f.utts);
    auto plan = f.plan;
    plan.lambda = 0.5;
    const auto a = finetune(f.model, plan, f.train, nullptr, &one);
    const auto b = finetune(f.model, plan, f.train, nullptr, &two);
    EXPECT_EQ(a.step_losses, b.step_losses);
    EXPECT_EQ(flatten_params(a.model), flatten_params(b.model));
}

TEST(Finetune, EncoderInitIsCopiedAndShapesChecked) {
    const FinetuneFixture f;
    const StudentModel donor(f.model, 77);
    auto plan = f.plan;
    plan.epochs = 1;
    plan.peak_lr = plan.initial_lr = plan.final_lr = 1e-300;
    const auto r = finetune(f.model, plan, f.train, &donor.encoder());
    const auto a = flatten_params(r.model.encoder()), b = flatten_params(donor.encoder());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);

    ModelConfig other = f.model;
    other.encoder_dim = 10;
    const StudentModel wrong(other, 1);
    EXPECT_THROW(finetune(f.model, plan, f.train, &wrong.encoder()), ShapeError);
}

TEST(Finetune, LearnsAndReportsTer) {
    const FinetuneFixture f;
    const auto test = labeled_from(f.task.split("test", 20));
    auto plan = f.plan;
    plan.epochs = 1;
    const auto r = finetune(f.model, plan, f.train, nullptr, nullptr, &test);
    ASSERT_TRUE(r.report.has_value());
    EXPECT_GE(r.report->ter, 0.0);
    EXPECT_EQ(r.metrics.back()["kind"], "eval");
    EXPECT_EQ(r.metrics.back()["ter"].get<double>(), r.report->ter);
    EXPECT_EQ(r.step_losses.size(), 3u);
}

TEST(FinetunePlan, StrictJsonAndValidation) {
    FinetunePlan p;
    p.omegas = {0.25, 0.75};
    const nlohmann::json j = p;
    EXPECT_EQ(nlohmann::json(j.get<FinetunePlan>()), j);
    auto bad = j;
    bad["lamda"] = 0.5;
    EXPECT_THROW(bad.get<FinetunePlan>(), ConfigError);
    p.lambda = -1.0;
    EXPECT_THROW(p.validate(), PreconditionError);
    p.lambda = 0.5;
    p.omegas = {0.5, 0.6};
    EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Evaluate, EmptyHypothesesScoreHundred) {
    // a joint that always prefers blank emits nothing
    ModelConfig config;
    StudentModel model(config, 3);
    model.head().joint.b_out(0, 0) = 1e3;
    const FinetuneFixture f;
    const auto report = evaluate(model, f.train, 4);
    for (const auto& h : report.hypotheses) EXPECT_TRUE(h.empty());
    EXPECT_DOUBLE_EQ(report.ter, 100.0);
}

}  // namespace
}  // namespace mtkd
