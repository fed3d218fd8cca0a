#include "mtkd/student.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

namespace mtkd {
namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.input_dim = 3;
    c.encoder_layers = 2;
    c.encoder_dim = 5;
    c.context_past = 1;
    c.context_future = 1;
    c.embed_dim = 4;
    c.vocab = 4;
    c.pred_embed = 3;
    c.pred_hidden = 4;
    c.joint_dim = 5;
    return c;
}

using testing::assign_flat;
using testing::random_frames;

// RNNT + lambda * 1-best KD + embedding KD, all through one student.
struct Objective {
    const Matrix& features;
    const LabelSequence& y;
    const std::vector<PathNodeTarget>& targets;
    const Matrix& teacher_embed;
    Distance dist;
    std::size_t tau;
    double lambda;

    double value(const StudentModel& model, const LossNet& net) const {
        const auto tape = transducer_forward(model, features, y);
        const double rnnt = rnnt_loss(tape.lattice, y, RowCheck::skip).value;
        const double kd = one_best_kd(targets, tape.lattice, tau).value;
        const double emb = embedding_kd(tape.encoder_out, teacher_embed, net, dist, tau).value;
        return final_loss(rnnt, kd, lambda) + emb;
    }

    void gradient(const StudentModel& model, const LossNet& net, StudentModel& grads,
                  LossNet& net_grads) const {
        const auto tape = transducer_forward(model, features, y);
        auto d = rnnt_loss(tape.lattice, y, RowCheck::skip).grad;
        const auto kd = one_best_kd(targets, tape.lattice, tau);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += lambda * kd.grad[i];
        const auto emb = embedding_kd(tape.encoder_out, teacher_embed, net, dist, tau);
        transducer_backward(model, tape, d, grads, &emb.grad_student);
        net_grads.weight = emb.grad_weight;
        net_grads.bias = emb.grad_bias;
    }
};

void check_full_gradient(const ModelConfig& config, std::uint64_t seed, Distance dist, std::size_t tau) {
    Rng rng(seed);
    StudentModel model(config, seed);
    const Matrix features = random_frames(config.subsample ? 8 : 5, static_cast<Eigen::Index>(config.input_dim), rng);
    const std::size_t T = model.output_frames(static_cast<std::size_t>(features.rows()));
    const LabelSequence y = testing::random_labels(2, config.vocab, rng);
    const auto teacher = testing::random_lattice(T, y.size(), config.vocab, rng);
    const auto targets = path_targets(teacher, one_best_alignment(teacher, y));
    const Matrix teacher_embed = random_frames(static_cast<Eigen::Index>(T), 3, rng);
    LossNet net(config.embed_dim, 3);
    init_uniform(net.weight, config.embed_dim, rng);
    init_uniform(net.bias, config.embed_dim, rng);

    const Objective objective{features, y, targets, teacher_embed, dist, tau, 0.7};
    ASSERT_LE(parameter_count(model) + parameter_count(net), 2000u);

    StudentModel grads = model.zeros_like();
    LossNet net_grads(config.embed_dim, 3);
    objective.gradient(model, net, grads, net_grads);
    auto analytic = flatten_params(grads);
    const auto net_analytic = flatten_params(net_grads);
    analytic.insert(analytic.end(), net_analytic.begin(), net_analytic.end());

    auto x = flatten_params(model);
    const std::size_t n_model = x.size();
    const auto net_x = flatten_params(net);
    x.insert(x.end(), net_x.begin(), net_x.end());
    const auto numeric = testing::central_differences(x, [&](const std::vector<double>& p) {
        StudentModel m = model;
        LossNet n = net;
        assign_flat(m, std::vector<double>(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n_model)));
        assign_flat(n, std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(n_model), p.end()));
        return objective.value(m, n);
    });
    EXPECT_LE(testing::max_relative_error(analytic, numeric), 1e-4);
}

TEST(StudentGradient, FullObjectiveL2) { check_full_gradient(tiny_config(), 31, Distance::L2, 0); }

TEST(StudentGradient, FullObjectiveL1Shifted) { check_full_gradient(tiny_config(), 32, Distance::L1, 1); }

TEST(StudentGradient, SubsampledStreaming) {
    auto c = tiny_config();
    c.subsample = true;
    c.subsample_dim = 4;
    c.streaming = true;
    c.context_future = 0;
    check_full_gradient(c, 33, Distance::L2, 2);
}

TEST(StudentModel, IsDeterministicInSeed) {
    const StudentModel a(tiny_config(), 5);
    const StudentModel b(tiny_config(), 5);
    const StudentModel c(tiny_config(), 6);
    EXPECT_EQ(flatten_params(a), flatten_params(b));
    EXPECT_NE(flatten_params(a), flatten_params(c));
}

TEST(StudentModel, LatticeIsNormalized) {
    Rng rng(1);
    const StudentModel model(tiny_config(), 1);
    const auto tape = transducer_forward(model, random_frames(6, 3, rng), {1, 3, 2});
    EXPECT_NO_THROW(tape.lattice.validate(1e-12));
    EXPECT_EQ(tape.lattice.frames(), 6u);
    EXPECT_EQ(tape.lattice.labels(), 3u);
}

TEST(StudentModel, SubsampleHalvesFrames) {
    auto c = tiny_config();
    c.subsample = true;
    Rng rng(2);
    const StudentModel model(c, 2);
    EXPECT_EQ(model.encode(random_frames(9, 3, rng)).rows(), 4);
    EXPECT_EQ(model.output_frames(9), 4u);
    EXPECT_THROW(model.encode(random_frames(1, 3, rng)), ValidationError);
}

// Perturbing input frame j may only move encoder outputs at frames >= j - lookahead.
void check_receptive_field(const ModelConfig& config, Eigen::Index lookahead) {
    Rng rng(3);
    const StudentModel model(config, 3);
    const Matrix x = random_frames(10, 3, rng);
    const Matrix base = model.encode(x);
    for (Eigen::Index j = 0; j < 10; ++j) {
        Matrix moved = x;
        moved.row(j).array() += 1.0;
        const Matrix out = model.encode(moved);
        for (Eigen::Index t = 0; t < 10; ++t) {
            const bool changed = (out.row(t) - base.row(t)).norm() > 0.0;
            if (t < j - lookahead) {
                EXPECT_FALSE(changed) << "frame " << t << " saw input " << j;
            }
        }
        EXPECT_TRUE((out.row(std::max<Eigen::Index>(0, j - lookahead)) -
                     base.row(std::max<Eigen::Index>(0, j - lookahead)))
                        .norm() > 0.0);
    }
}

TEST(StudentModel, StreamingEncoderIsCausal) {
    auto c = tiny_config();
    c.streaming = true;
    c.context_future = 0;
    check_receptive_field(c, 0);
}

TEST(StudentModel, FutureContextAccumulatesOverLayers) {
    check_receptive_field(tiny_config(), 2);
}

TEST(ModelConfig, RejectsStreamingWithLookahead) {
    auto c = tiny_config();
    c.streaming = true;
    EXPECT_THROW(c.validate(), ValidationError);
    c.context_future = 0;
    EXPECT_NO_THROW(c.validate());
    c.vocab = 1;
    EXPECT_THROW(c.validate(), ValidationError);
}

TEST(ModelConfig, JsonRoundTrip) {
    auto c = tiny_config();
    c.subsample = true;
    const nlohmann::json j = c;
    const auto back = j.get<ModelConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
}

TEST(LossNetBank, SharesNetsByTeacherId) {
    Rng rng(4);
    LossNetBank bank;
    bank.add("a", 4, 3, rng);
    bank.add("b", 4, 5, rng);
    bank.add("a", 4, 3, rng);
    EXPECT_EQ(bank.nets.size(), 2u);
    EXPECT_EQ(bank.index_of("b"), 1u);
    EXPECT_THROW(bank.add("a", 4, 6, rng), ShapeError);
    EXPECT_THROW(bank.index_of("c"), ValidationError);
}

}  // namespace
}  // namespace mtkd
