#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "splab/errors.hpp"
#include "splab/metrics.hpp"
#include "support/generators.hpp"

using namespace splab;
using proptest::Gen;

TEST(Argmax, TiesGoToLowerClass) {
  const Tensor logits({3, 3}, {1, 1, 0, 0, 2, 2, -1, -3, -0.5});
  EXPECT_EQ(argmax_rows(logits), (std::vector<int>{0, 1, 2}));
}

TEST(GroupAccuracy, WorstGroupAndWeightedAverage) {
  const std::vector<int> pred{0, 0, 1, 1, 1, 0};
  const std::vector<int> label{0, 1, 1, 1, 0, 0};
  const std::vector<int> group{0, 0, 1, 1, 2, 3};
  const auto r = group_accuracies(pred, label, group);
  EXPECT_DOUBLE_EQ(r.average, 4.0 / 6.0);
  EXPECT_EQ(r.per_group.at(0), 0.5);
  EXPECT_EQ(r.per_group.at(1), 1.0);
  EXPECT_EQ(r.per_group.at(2), 0.0);
  EXPECT_EQ(r.worst, 0.0);
  EXPECT_EQ(r.worst_group, 2);
  EXPECT_EQ(r.counts.at(3), 1u);
}

TEST(GroupAccuracy, WorstNeverExceedsAverage) {
  proptest::for_all(100, 51, [](Gen& g) {
    const std::size_t n = g.size(1, 60);
    const auto pred = g.integers(n, 0, 1), label = g.integers(n, 0, 1), group = g.integers(n, 0, 3);
    const auto r = group_accuracies(pred, label, group);
    EXPECT_LE(r.worst, r.average + 1e-15);
    EXPECT_EQ(r.per_group.at(r.worst_group), r.worst);
  });
}

TEST(Consistency, ConditionalAndUnconditionalForms) {
  const std::vector<int> px{1, 0, 1, 1}, pxb{1, 1, 0, 1}, y{1, 0, 1, 0};
  const auto r = consistency_from_predictions(px, pxb, y);
  EXPECT_EQ(r.correct, 3u);
  EXPECT_EQ(r.consistent_correct, 1u);
  EXPECT_DOUBLE_EQ(r.conditional, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.unconditional, 0.25);
  EXPECT_FALSE(r.degenerate);
}

TEST(Consistency, NoCorrectPredictionsIsDegenerate) {
  const std::vector<int> px{1, 1}, y{0, 0};
  const auto r = consistency_from_predictions(px, px, y);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.conditional, 0.0);
}

TEST(Consistency, IdenticalPredictionsGiveOne) {
  proptest::for_all(50, 52, [](Gen& g) {
    const std::size_t n = g.size(1, 40);
    auto px = g.integers(n, 0, 1), y = g.integers(n, 0, 1);
    px[0] = y[0];
    const auto r = consistency_from_predictions(px, px, y);
    EXPECT_EQ(r.conditional, 1.0);
    EXPECT_LE(r.unconditional, r.conditional);
  });
}

TEST(Auroc, WorkedExamples) {
  EXPECT_EQ(auroc(std::vector<double>{3, 4}, std::vector<double>{1, 2}), 1.0);
  EXPECT_EQ(auroc(std::vector<double>{1, 2}, std::vector<double>{3, 4}), 0.0);
  EXPECT_EQ(auroc(std::vector<double>{1, 1}, std::vector<double>{1, 1}), 0.5);
  EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.9, 0.4}, std::vector<double>{0.5, 0.1}), 0.75);
  EXPECT_THROW(auroc(std::vector<double>{}, std::vector<double>{1}), ContractError);
  EXPECT_THROW(fpr_at_tpr(std::vector<double>{1}, std::vector<double>{}), ContractError);
}

TEST(Auroc, MatchesPairCountingOracleWithTies) {
  proptest::for_all(100, 53, [](Gen& g) {
    const auto id = g.tied_scores(g.size(1, 80), 6), ood = g.tied_scores(g.size(1, 80), 6);
    EXPECT_NEAR(auroc(id, ood), proptest::auroc_oracle(id, ood), 1e-12);
  });
}

TEST(Auroc, SwappingRolesComplementsAndMonotoneMapsPreserve) {
  proptest::for_all(100, 54, [](Gen& g) {
    auto id = g.tied_scores(g.size(1, 50), 8), ood = g.normals(g.size(1, 50));
    EXPECT_NEAR(auroc(id, ood) + auroc(ood, id), 1.0, 1e-12);
    const double before = auroc(id, ood);
    const auto warp = [](double v) { return std::exp(0.5 * v) + 3.0; };
    std::transform(id.begin(), id.end(), id.begin(), warp);
    std::transform(ood.begin(), ood.end(), ood.begin(), warp);
    EXPECT_NEAR(auroc(id, ood), before, 1e-12);
  });
}

TEST(FprAtTpr, WorkedExample) {
  std::vector<double> id;
  for (int i = 1; i <= 20; ++i) id.push_back(i);
  // 19th largest of 20 is 2.
  EXPECT_DOUBLE_EQ(fpr_at_tpr(id, std::vector<double>{1.5, 2.0, 3.0}), 2.0 / 3.0);
  EXPECT_EQ(fpr_at_tpr(id, std::vector<double>{0.0, 1.0}), 0.0);
}

TEST(FprAtTpr, MatchesThresholdSweepOracle) {
  proptest::for_all(100, 55, [](Gen& g) {
    const auto id = g.tied_scores(g.size(1, 80), 10), ood = g.tied_scores(g.size(1, 80), 10);
    EXPECT_NEAR(fpr_at_tpr(id, ood), proptest::fpr_oracle(id, ood), 1e-12);
  });
}

TEST(LinearCka, MatchesGramOracle) {
  proptest::for_all(50, 56, [](Gen& g) {
    const std::size_t n = g.size(3, 30);
    const Tensor x = g.matrix(n, g.size(1, 8)), y = g.matrix(n, g.size(1, 8));
    EXPECT_NEAR(linear_cka(x, y), proptest::cka_oracle(x, y), 1e-10);
  });
}

TEST(LinearCka, InvariancesAndBounds) {
  proptest::for_all(50, 57, [](Gen& g) {
    const std::size_t n = g.size(3, 30), p = g.size(1, 6);
    const Tensor x = g.matrix(n, p), y = g.matrix(n, g.size(1, 6));
    EXPECT_NEAR(linear_cka(x, x), 1.0, 1e-12);
    const double s = linear_cka(x, y);
    EXPECT_GE(s, -1e-12);
    EXPECT_LE(s, 1.0 + 1e-12);
    EXPECT_NEAR(s, linear_cka(y, x), 1e-12);
    EXPECT_NEAR(linear_cka(proptest::times(x, g.orthogonal(p)), y), s, 1e-10);
    std::vector<double> scaled(x.data().begin(), x.data().end());
    const double a = g.real(0.1, 10.0), shift = g.real(-5.0, 5.0);
    for (double& v : scaled) v = a * v + shift;
    EXPECT_NEAR(linear_cka(Tensor({n, p}, scaled), y), s, 1e-10);
  });
}

TEST(LinearCka, DegenerateInputs) {
  EXPECT_THROW(linear_cka(Tensor({1, 2}, {1, 2}), Tensor({1, 2}, {1, 2})), DegenerateInputError);
  const Tensor constant({3, 2}, {1, 1, 1, 1, 1, 1});
  EXPECT_THROW(linear_cka(constant, Tensor({3, 1}, {1, 2, 3})), DegenerateInputError);
  EXPECT_THROW(linear_cka(Tensor({3, 1}, {1, 2, 3}), Tensor({2, 1}, {1, 2})), DimensionError);
}

TEST(Energy, ClosedFormsAndStability) {
  EXPECT_DOUBLE_EQ(energy_score(std::vector<double>{0.0, 0.0}), -std::log(2.0));
  EXPECT_DOUBLE_EQ(energy_score(std::vector<double>{1000.0, 1000.0}), -1000.0 - std::log(2.0));
  EXPECT_DOUBLE_EQ(energy_score(std::vector<double>{-1000.0, -1000.0}), 1000.0 - std::log(2.0));
  proptest::for_all(50, 58, [](Gen& g) {
    const auto l = g.normals(g.size(1, 6), 3.0);
    double naive = 0.0;
    for (double v : l) naive += std::exp(v);
    EXPECT_NEAR(energy_score(l), -std::log(naive), 1e-12);
    const double t = g.real(0.2, 5.0);
    std::vector<double> scaled(l);
    for (double& v : scaled) v /= t;
    EXPECT_NEAR(energy_score(l, t), t * energy_score(scaled), 1e-12);
    EXPECT_LE(energy_score(l), -*std::max_element(l.begin(), l.end()) + 1e-12);
  });
  const auto ids = id_scores_from_logits(Tensor({2, 2}, {0, 0, 1000, 1000}));
  EXPECT_DOUBLE_EQ(ids[1], 1000.0 + std::log(2.0));
}
