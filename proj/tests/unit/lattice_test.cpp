#include "mtkd/lattice.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

namespace mtkd {
namespace {

using testing::random_labels;
using testing::random_lattice;

DistributionLattice blank_only_lattice(std::size_t T, std::size_t U, std::size_t V) {
    std::vector<double> probs(T * (U + 1) * V, 0.0);
    for (std::size_t row = 0; row < T * (U + 1); ++row) probs[row * V] = 1.0;
    return DistributionLattice::from_probs(T, U, V, probs);
}

TEST(RnntLoss, AllBlankCertainLatticeHasZeroLoss) {
    const auto lattice = blank_only_lattice(3, 0, 4);
    EXPECT_EQ(rnnt_loss(lattice, {}).value, 0.0);
}

TEST(RnntLoss, UniformTwoByOneMatchesHandEnumeration) {
    // Two alignments of three steps each at probability 1/2 per step.
    const DistributionLattice lattice(2, 1, 2);
    const double expected = -std::log(2.0 * 0.125);
    EXPECT_NEAR(rnnt_loss(lattice, {1}).value, expected, 1e-12);
    EXPECT_NEAR(rnnt_loss(lattice, {1}).value, 1.3863, 5e-5);
}

TEST(RnntLoss, MatchesBruteForceOnRandomFourByThree) {
    Rng rng(7);
    const auto lattice = random_lattice(4, 3, 5, rng);
    const auto y = random_labels(3, 5, rng);
    EXPECT_NEAR(rnnt_loss(lattice, y).value, brute_force_loss(lattice, y), 1e-9);
}

TEST(RnntLoss, MatchesBruteForceAcrossSmallShapes) {
    Rng rng(2024);
    int checked = 0;
    for (int rep = 0; rep < 10; ++rep) {
        for (std::size_t T = 1; T <= 4; ++T) {
            for (std::size_t U = 0; U <= 3; ++U) {
                const std::size_t V = 2 + rng.below(4);
                const auto lattice = random_lattice(T, U, V, rng);
                const auto y = random_labels(U, V, rng);
                ASSERT_NEAR(rnnt_loss(lattice, y).value, brute_force_loss(lattice, y), 1e-9)
                    << "T=" << T << " U=" << U << " V=" << V;
                ++checked;
            }
        }
    }
    EXPECT_GE(checked, 100);
}

TEST(RnntLoss, GradientMatchesCentralDifferences) {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        const std::size_t T = 2 + rng.below(3);
        const std::size_t U = rng.below(4);
        const std::size_t V = 2 + rng.below(4);
        const auto lattice = random_lattice(T, U, V, rng);
        const auto y = random_labels(U, V, rng);
        const auto analytic = rnnt_loss(lattice, y).grad;
        const auto numeric = testing::central_differences(lattice.log_values(), [&](const auto& x) {
            auto perturbed = DistributionLattice::from_log_probs(T, U, V, x);
            return rnnt_loss(perturbed, y, RowCheck::skip).value;
        });
        EXPECT_LE(testing::max_relative_error(analytic, numeric), 1e-4);
    }
}

TEST(RnntLoss, GradientOfUsedTransitionsIsOccupancy) {
    // Blank occupancies along each frame sum to -1 per frame (every path crosses each frame once).
    Rng rng(5);
    const auto lattice = random_lattice(4, 2, 3, rng);
    const LabelSequence y{2, 1};
    const auto grad = rnnt_loss(lattice, y).grad;
    for (std::size_t t = 0; t < 4; ++t) {
        double frame_total = 0.0;
        for (std::size_t u = 0; u <= 2; ++u) frame_total += grad[lattice.index(t, u, kBlank)];
        EXPECT_NEAR(frame_total, -1.0, 1e-12);
    }
}

TEST(RnntLoss, InvariantUnderRelabelingNonBlankSymbols) {
    Rng rng(99);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t V = 3 + rng.below(3);
        const auto lattice = random_lattice(3, 2, V, rng);
        const auto y = random_labels(2, V, rng);
        // cyclic shift of the non-blank indices
        auto relabel = [V](std::size_t k) { return k == 0 ? 0 : 1 + (k % (V - 1)); };
        std::vector<double> values(lattice.size());
        for (std::size_t t = 0; t < 3; ++t) {
            for (std::size_t u = 0; u <= 2; ++u) {
                for (std::size_t k = 0; k < V; ++k) {
                    values[lattice.index(t, u, relabel(k))] = lattice.log_prob(t, u, k);
                }
            }
        }
        const auto relabeled = DistributionLattice::from_log_probs(3, 2, V, values);
        LabelSequence y2;
        for (int token : y) y2.push_back(static_cast<int>(relabel(static_cast<std::size_t>(token))));
        EXPECT_NEAR(rnnt_loss(lattice, y).value, rnnt_loss(relabeled, y2).value, 1e-12);
    }
}

TEST(RnntLoss, RejectsShapeMismatch) {
    const DistributionLattice lattice(3, 2, 4);
    EXPECT_THROW(rnnt_loss(lattice, {1}), ShapeError);
}

TEST(RnntLoss, RejectsUnnormalizedLattice) {
    DistributionLattice lattice(3, 1, 4);
    lattice.log_prob(1, 0, 2) += 0.01;
    EXPECT_THROW(rnnt_loss(lattice, {1}), ValidationError);
}

TEST(RnntLoss, RejectsBlankOrOutOfRangeLabels) {
    const DistributionLattice lattice(3, 1, 4);
    EXPECT_THROW(rnnt_loss(lattice, {0}), ValidationError);
    EXPECT_THROW(rnnt_loss(lattice, {4}), ValidationError);
}

TEST(BruteForceLoss, SinglePathIsMinusLogBlank) {
    const double p = 0.3;
    const auto lattice = DistributionLattice::from_probs(1, 0, 2, {p, 1.0 - p});
    EXPECT_NEAR(brute_force_loss(lattice, {}), -std::log(p), 1e-15);
}

TEST(BruteForceLoss, UniformTwoByOne) {
    EXPECT_NEAR(brute_force_loss(DistributionLattice(2, 1, 2), {1}), 2.0 * std::log(2.0), 1e-12);
}

TEST(BruteForceLoss, GuardRejectsLargeInstances) {
    const DistributionLattice lattice(30, 15, 3);
    const LabelSequence y(15, 1);
    EXPECT_THROW(brute_force_loss(lattice, y), OracleTooLargeError);
    EXPECT_THROW(enumerate_alignments(30, 15), OracleTooLargeError);
}

TEST(EnumerateAlignments, CountsMatchBinomial) {
    EXPECT_EQ(enumerate_alignments(1, 0).size(), 1u);
    EXPECT_EQ(enumerate_alignments(2, 1).size(), 2u);
    EXPECT_EQ(enumerate_alignments(4, 3).size(), 20u);
    for (std::size_t T = 1; T <= 6; ++T) {
        for (std::size_t U = 0; U <= 5; ++U) {
            const auto paths = enumerate_alignments(T, U);
            EXPECT_EQ(paths.size(), testing::pascal(T + U - 1, U));
            EXPECT_EQ(alignment_count(T, U), testing::pascal(T + U - 1, U));
            std::set<std::vector<int>> distinct;
            for (const auto& path : paths) {
                ASSERT_TRUE(is_valid_alignment(path, T, U));
                std::vector<int> key;
                for (const auto& s : path.steps) key.push_back(s.symbol);
                distinct.insert(key);
            }
            EXPECT_EQ(distinct.size(), paths.size());
        }
    }
}

TEST(EnumerateAlignments, BindsLabels) {
    const LabelSequence y{3, 1};
    for (const auto& path : enumerate_alignments(3, y)) {
        EXPECT_TRUE(is_valid_alignment(path, 3, 2, &y));
    }
}

TEST(AlignmentInvariants, RejectsMalformedPaths) {
    const LabelSequence y{2};
    Alignment ok{{{0, 0, kBlank}, {1, 0, 2}, {1, 1, kBlank}}};
    EXPECT_TRUE(is_valid_alignment(ok, 2, 1, &y));
    Alignment ends_with_label{{{0, 0, kBlank}, {1, 0, kBlank}, {2, 0, 2}}};
    EXPECT_FALSE(is_valid_alignment(ends_with_label, 2, 1, &y));
    Alignment wrong_token{{{0, 0, kBlank}, {1, 0, 3}, {1, 1, kBlank}}};
    EXPECT_FALSE(is_valid_alignment(wrong_token, 2, 1, &y));
    Alignment skips{{{0, 0, kBlank}, {1, 1, 2}, {1, 1, kBlank}}};
    EXPECT_FALSE(is_valid_alignment(skips, 2, 1, &y));
}

TEST(OneBestAlignment, RecoversOneHotPath) {
    Rng rng(3);
    const std::size_t T = 4, U = 3, V = 5;
    const auto y = random_labels(U, V, rng);
    const auto paths = enumerate_alignments(T, y);
    for (std::size_t pick : {std::size_t{0}, paths.size() / 2, paths.size() - 1}) {
        const Alignment& target = paths[pick];
        std::vector<double> probs(T * (U + 1) * V, 1.0 / V);
        for (const auto& s : target.steps) {
            for (std::size_t k = 0; k < V; ++k) {
                probs[(static_cast<std::size_t>(s.t) * (U + 1) + static_cast<std::size_t>(s.u)) * V + k] =
                    static_cast<int>(k) == s.symbol ? 1.0 : 0.0;
            }
        }
        const auto lattice = DistributionLattice::from_probs(T, U, V, probs);
        EXPECT_EQ(one_best_alignment(lattice, y), target);
    }
}

TEST(OneBestAlignment, UniformTieBreaksBlankFirst) {
    const auto path = one_best_alignment(DistributionLattice(2, 1, 2), {1});
    const Alignment expected{{{0, 0, kBlank}, {1, 0, 1}, {1, 1, kBlank}}};
    EXPECT_EQ(path, expected);
}

TEST(OneBestAlignment, MatchesExhaustiveArgmax) {
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t T = 1 + rng.below(4);
        const std::size_t U = rng.below(4);
        const std::size_t V = 2 + rng.below(4);
        const auto lattice = random_lattice(T, U, V, rng);
        const auto y = random_labels(U, V, rng);
        const auto best = one_best_alignment(lattice, y);
        ASSERT_TRUE(is_valid_alignment(best, T, U, &y));
        const double best_lp = alignment_log_prob(lattice, best);
        double oracle = -std::numeric_limits<double>::infinity();
        for (const auto& path : enumerate_alignments(T, y)) {
            const double lp = alignment_log_prob(lattice, path);
            EXPECT_GE(best_lp, lp - 1e-12);
            oracle = std::max(oracle, lp);
        }
        EXPECT_NEAR(best_lp, oracle, 1e-12);
    }
}

TEST(DistributionLattice, ValidateCatchesShapeAndNormalization) {
    EXPECT_THROW(DistributionLattice(0, 1, 3), ValidationError);
    EXPECT_THROW(DistributionLattice(2, 1, 1), ValidationError);
    EXPECT_THROW(DistributionLattice::from_log_probs(2, 1, 3, std::vector<double>(5, 0.0)), ShapeError);
    const DistributionLattice ok(3, 2, 4);
    EXPECT_NO_THROW(ok.validate());
    EXPECT_LE(ok.max_normalization_error(), 1e-12);
}

}  // namespace
}  // namespace mtkd
