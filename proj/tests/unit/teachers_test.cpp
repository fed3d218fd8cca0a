#include "mtkd/teachers.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace mtkd {
namespace {

using testing::chi_square_999;
using testing::draw;

TaskConfig small_task() {
    TaskConfig t;
    t.seed = 3;
    return t;
}

TEST(UniformProbs, Values) {
    EXPECT_EQ(uniform_probs(1), std::vector<double>{1.0});
    EXPECT_EQ(uniform_probs(4), std::vector<double>(4, 0.25));
    for (double p : uniform_probs(3)) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
    EXPECT_THROW(uniform_probs(0), PreconditionError);
}

TEST(WerProbs, HandValues) {
    const auto two = wer_probs(std::vector<double>{10.0, 30.0});
    EXPECT_DOUBLE_EQ(two[0], 0.75);
    EXPECT_DOUBLE_EQ(two[1], 0.25);
    for (double p : wer_probs(std::vector<double>{7.0, 7.0, 7.0})) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
    const auto three = wer_probs(std::vector<double>{8.65, 8.10, 6.15});
    EXPECT_NEAR(three[0], 0.3111, 5e-5);
    EXPECT_NEAR(three[1], 0.3231, 5e-5);
    EXPECT_NEAR(three[2], 0.3657, 5e-5);
}

TEST(WerProbs, ScaleInvariantAndOrderReversing) {
    Rng rng(41);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.below(5);
        std::vector<double> wers(n);
        for (auto& w : wers) w = rng.uniform(0.5, 60.0);
        const auto p = wer_probs(wers);
        EXPECT_NO_THROW(validate_probs(p));
        std::vector<double> scaled = wers;
        const double c = rng.uniform(0.01, 100.0);
        for (auto& w : scaled) w *= c;
        const auto q = wer_probs(scaled);
        for (std::size_t i = 0; i < n; ++i) {
            EXPECT_NEAR(p[i], q[i], 1e-12);
            for (std::size_t j = 0; j < n; ++j) {
                if (wers[i] < wers[j]) EXPECT_GT(p[i], p[j]);
            }
        }
    }
}

TEST(WerProbs, RejectsBadInput) {
    EXPECT_THROW(wer_probs(std::vector<double>{5.0}), PreconditionError);
    EXPECT_THROW(wer_probs(std::vector<double>{5.0, 0.0}), ValidationError);
    EXPECT_THROW(wer_probs(std::vector<double>{5.0, -1.0}), ValidationError);
}

TEST(SimilarityProbs, IdenticalTeachersGiveUniform) {
    Rng rng(42);
    Matrix e(6, 3);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
    const std::vector<Matrix> students{e, e, e};
    const auto r = similarity_probs(students, students);
    for (double p : r.probs) EXPECT_NEAR(p, 1.0 / 3.0, 1e-12);
    EXPECT_FALSE(r.uniform_fallback);
}

TEST(SimilarityProbs, OrthogonalAndIdentical) {
    Matrix s(2, 2), orth(2, 2);
    s << 1, 0, 0, 1;
    orth << 0, 1, 1, 0;
    const std::vector<Matrix> students{s, s};
    const std::vector<Matrix> teachers{orth, s};
    const auto r = similarity_probs(students, teachers);
    EXPECT_NEAR(r.similarities[0], 0.5, 1e-15);
    EXPECT_NEAR(r.similarities[1], 1.0, 1e-15);
    EXPECT_NEAR(r.probs[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(r.probs[1], 2.0 / 3.0, 1e-15);
}

TEST(SimilarityProbs, MappedValuesNormalizeDirectly) {
    // cosines 0.6 and -0.6 map to 0.8 and 0.2
    Matrix s(1, 2), a(1, 2), b(1, 2);
    s << 1, 0;
    a << 0.6, 0.8;
    b << -0.6, 0.8;
    const std::vector<Matrix> students{s, s};
    const std::vector<Matrix> teachers{a, b};
    const auto r = similarity_probs(students, teachers);
    EXPECT_NEAR(r.probs[0], 0.8, 1e-12);
    EXPECT_NEAR(r.probs[1], 0.2, 1e-12);
}

TEST(SimilarityProbs, SkipsZeroFramesAndFallsBack) {
    Matrix s(2, 2), t(2, 2);
    s << 0, 0, 1, 0;
    t << 1, 1, 1, 0;
    EXPECT_NEAR(*mean_cosine(s, t), 1.0, 1e-15);
    const Matrix zero = Matrix::Zero(2, 2);
    const std::vector<Matrix> students{zero, zero};
    const std::vector<Matrix> teachers{t, t};
    const auto r = similarity_probs(students, teachers);
    EXPECT_TRUE(r.uniform_fallback);
    EXPECT_EQ(r.probs, uniform_probs(2));
}

TEST(SampleTeacher, DegenerateAlwaysPicksSupport) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_teacher(std::vector<double>{1.0, 0.0}, rng), 0u);
    for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_teacher(std::vector<double>{0.0, 1.0}, rng), 1u);
}

TEST(SampleTeacher, FrequenciesMatchEachStrategy) {
    Matrix s(1, 2), a(1, 2), b(1, 2);
    s << 1, 0;
    a << 0.6, 0.8;
    b << -0.6, 0.8;
    const std::vector<Matrix> students{s, s};
    const std::vector<Matrix> teachers{a, b};
    const std::vector<std::vector<double>> cases{
        uniform_probs(3), wer_probs(std::vector<double>{10.0, 30.0}),
        similarity_probs(students, teachers).probs};
    std::uint64_t seed = 100;
    for (const auto& probs : cases) {
        const auto stats = draw(probs, 100000, seed++);
        for (std::size_t k = 0; k < probs.size(); ++k) EXPECT_NEAR(stats.freq[k], probs[k], 0.01);
        EXPECT_LT(stats.chi_square, chi_square_999(probs.size() - 1));
    }
}

TEST(SampleTeacher, UsesOneDrawPerCall) {
    Rng a(9), b(9);
    sample_teacher(std::vector<double>{1.0}, a);
    b.uniform();
    EXPECT_EQ(a.next(), b.next());
}

TEST(Teacher, ConstructionIsDeterministicAndFrozen) {
    const SyntheticTask task(small_task());
    auto spec = default_teacher_specs(task.config())[0];
    spec.head_fit_steps = 5;
    const Teacher a(spec, task);
    const Teacher b(spec, task);
    const auto utt = task.utterance("probe", 0);
    const Matrix ea = a.embed(utt.features);
    EXPECT_EQ(ea, b.embed(utt.features));
    EXPECT_EQ(ea.cols(), 12);
    Teacher c = a;
    for (const auto& v : param_views(c)) {
        for (double x : v.values) EXPECT_EQ(x, static_cast<double>(static_cast<float>(x)));
    }
}

TEST(Teacher, HalfTeachersIgnoreTheOtherHalf) {
    const SyntheticTask task(small_task());
    auto specs = default_teacher_specs(task.config());
    specs[0].head_fit_steps = 0;
    const Teacher first_half(specs[0], task);
    const auto utt = task.utterance("probe", 1);
    Matrix moved = utt.features;
    moved.rightCols(4).array() += 3.0;
    EXPECT_EQ(first_half.embed(utt.features), first_half.embed(moved));
}

TEST(Teacher, LinearModeDependsOnFutureFrames) {
    const SyntheticTask task(small_task());
    TeacherSpec spec;
    spec.id = "lookahead";
    spec.mode = TeacherMode::linear;
    spec.past = 0;
    spec.future = 2;
    spec.head_fit_steps = 0;
    const Teacher teacher(spec, task);
    const auto utt = task.utterance("probe", 2);
    Matrix moved = utt.features;
    moved.row(5).array() += 1.0;
    const Matrix base = teacher.embed(utt.features);
    const Matrix out = teacher.embed(moved);
    for (Eigen::Index t = 0; t < base.rows(); ++t) {
        EXPECT_EQ((out.row(t) - base.row(t)).norm() > 0.0, t >= 3 && t <= 5) << t;
    }
}

TEST(Teacher, LabelsAreValid) {
    const SyntheticTask task(small_task());
    auto spec = default_teacher_specs(task.config())[2];
    spec.head_fit_steps = 20;
    const Teacher teacher(spec, task);
    const auto utt = task.utterance("probe", 3);
    const auto labels = teacher_labels(teacher, utt.features, utt.tokens);
    EXPECT_NO_THROW(labels.lattice.validate(1e-6));
    EXPECT_TRUE(is_valid_alignment(labels.one_best, labels.lattice.frames(), utt.tokens.size(), &utt.tokens));
    const auto again = teacher_labels(teacher, utt.features, utt.tokens);
    EXPECT_EQ(again.embeddings, labels.embeddings);
    EXPECT_EQ(again.lattice.log_values(), labels.lattice.log_values());
    EXPECT_EQ(again.one_best, labels.one_best);
}

TEST(Teacher, ForwardCounter) {
    const SyntheticTask task(small_task());
    auto spec = default_teacher_specs(task.config())[1];
    spec.head_fit_steps = 0;
    const Teacher teacher(spec, task);
    Teacher::reset_forward_calls();
    teacher.embed(task.utterance("probe", 0).features);
    teacher.embed(task.utterance("probe", 1).features);
    EXPECT_EQ(Teacher::forward_calls(), 2u);
}

TEST(PseudoTranscribe, WideBeamScoresAtLeastGreedy) {
    const SyntheticTask task(small_task());
    auto spec = default_teacher_specs(task.config())[0];
    spec.head_fit_steps = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        spec.seed = seed;
        const Teacher teacher(spec, task);
        const auto utt = task.utterance("probe", seed);
        const Matrix e = teacher.embed(utt.features);
        EXPECT_GE(beam_search_decode(e, teacher.head(), 8).score,
                  beam_search_decode(e, teacher.head(), 1).score - 1e-12);
        EXPECT_EQ(pseudo_transcribe(teacher, utt.features), pseudo_transcribe(teacher, utt.features));
    }
}

TEST(PseudoTranscribe, FittedTeacherTranscribesWell) {
    const SyntheticTask task(small_task());
    const Teacher teacher(default_teacher_specs(task.config())[2], task);
    const double wer = measure_dev_wer(teacher, task.split("dev", 40));
    EXPECT_LT(wer, 30.0);
}

TEST(TeacherSpec, JsonRoundTripAndStrictKeys) {
    const auto spec = default_teacher_specs(small_task())[1];
    const nlohmann::json j = spec;
    EXPECT_EQ(nlohmann::json(j.get<TeacherSpec>()), j);
    nlohmann::json bad = j;
    bad["sharpnes"] = 1.0;
    EXPECT_THROW(bad.get<TeacherSpec>(), ConfigError);
}

}  // namespace
}  // namespace mtkd
