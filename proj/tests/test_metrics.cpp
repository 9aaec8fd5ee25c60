#include <gtest/gtest.h>

#include <cmath>

#include "json.hpp"
#include "magnets/metrics.hpp"
#include "oracles.hpp"

using namespace magnets;

namespace {

Explanation explanation_with(std::size_t C, std::size_t M, std::size_t T, const std::vector<double>& masks,
                             const std::vector<double>& feature_weights) {
    Explanation e;
    e.masks = Tensor(Shape{C, M, T}, masks);
    e.relaxed = e.masks;
    e.feature_weights = Tensor(Shape{C, M}, feature_weights);
    return e;
}

std::vector<std::uint8_t> random_gt(Rng& rng, std::size_t n) {
    std::vector<std::uint8_t> gt(n);
    for (auto& g : gt) g = uniform_open(rng) < 0.3 ? 1 : 0;
    gt[0] = 1;
    gt[1] = 0;
    return gt;
}

}  // namespace

TEST(Regression, Examples) {
    const std::vector<double> y{0.0, 2.0}, half{1.0, 1.0};
    EXPECT_EQ(rmse(y, y), 0.0);
    EXPECT_EQ(r2(y, y), 1.0);
    EXPECT_EQ(rmse(y, half), 1.0);
    EXPECT_EQ(r2(y, half), 0.0);
    const std::vector<double> z{1.0, 4.0, 7.0, 2.0};
    EXPECT_NEAR(r2(z, std::vector<double>(4, 3.5)), 0.0, 1e-15);
}

TEST(Regression, Errors) {
    EXPECT_THROW(r2(std::vector<double>{1.0}, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(r2(std::vector<double>{2.0, 2.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
    EXPECT_THROW(rmse(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Pooling, ChannelMaximum) {
    EXPECT_EQ(pool_channels(Tensor(Shape{1, 3}, std::vector<double>{0.2, 0.9, 0.0})),
              (std::vector<double>{0.2, 0.9, 0.0}));
    EXPECT_EQ(pool_channels(Tensor(Shape{2, 3}, std::vector<double>{1, 0, 0, 0, 0, 1})),
              (std::vector<double>{1, 0, 1}));
    const std::uint8_t gt[] = {1, 0, 0, 0, 0, 1};
    EXPECT_EQ(pool_gt(gt, 2, 3), (std::vector<std::uint8_t>{1, 0, 1}));
}

TEST(Pooling, SingleChannelIsIdentityForScoring) {
    Rng rng = make_stream(1, 0);
    const std::vector<std::uint8_t> gt = random_gt(rng, 40);
    Tensor s(Shape{1, 40});
    for (double& v : s.data()) v = uniform_open(rng);
    const std::vector<double> direct(s.vec());
    const std::vector<double> pooled = pool_channels(s);
    EXPECT_EQ(*explanation_auc(pooled, gt), *explanation_auc(direct, gt));
    EXPECT_EQ(explanation_f1(pooled, gt), explanation_f1(direct, gt));
}

TEST(Normalize, Examples) {
    EXPECT_EQ(normalize_attribution(Tensor(Shape{1, 2}, std::vector<double>{-2.0, 1.0})).vec(),
              (std::vector<double>{1.0, 0.5}));
    EXPECT_EQ(normalize_attribution(Tensor(Shape{2, 2})).vec(), (std::vector<double>(4, 0.0)));
    EXPECT_THROW(normalize_attribution(Tensor(Shape{1, 2}, std::vector<double>{NAN, 1.0})), std::invalid_argument);
    Rng rng = make_stream(2, 0);
    Tensor a(Shape{3, 50});
    for (double& v : a.data()) v = uniform(rng, -1e3, 1e3);
    for (double v : normalize_attribution(a).data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(MaskScore, SingleMaskIsTheMask) {
    const Explanation e = explanation_with(1, 1, 4, {0, 1, 1, 0}, {-0.3});
    EXPECT_EQ(magnets_mask_to_score(e).vec(), (std::vector<double>{0, 1, 1, 0}));
}

TEST(MaskScore, ZeroWeightsScoreNothing) {
    const Explanation e = explanation_with(1, 2, 3, {1, 1, 1, 1, 0, 1}, {0.0, 0.0});
    EXPECT_EQ(magnets_mask_to_score(e).vec(), (std::vector<double>(3, 0.0)));
    EXPECT_EQ(magnets_mask_to_score(e, MaskPool::Union).vec(), (std::vector<double>(3, 0.0)));
}

TEST(MaskScore, WeightedDisjointMasks) {
    const Explanation e = explanation_with(1, 2, 4, {1, 1, 0, 0, 0, 0, 1, 0}, {1.0, -0.5});
    EXPECT_EQ(magnets_mask_to_score(e).vec(), (std::vector<double>{1.0, 1.0, 0.5, 0.0}));
    EXPECT_EQ(magnets_mask_to_score(e, MaskPool::Union).vec(), (std::vector<double>{1.0, 1.0, 1.0, 0.0}));
}

TEST(MaskScore, NegligibleWeightsAreDropped) {
    const Explanation e = explanation_with(1, 2, 2, {1, 0, 0, 1}, {1.0, 1e-8});
    EXPECT_EQ(magnets_mask_to_score(e).vec(), (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(magnets_mask_to_score(e, MaskPool::Union).vec(), (std::vector<double>{1.0, 0.0}));
}

TEST(Auc, PerfectAndConstant) {
    const std::vector<std::uint8_t> gt{0, 1, 1, 0, 1};
    EXPECT_EQ(*explanation_auc(std::vector<double>{0, 1, 1, 0, 1}, gt), 1.0);
    EXPECT_EQ(*explanation_auc(std::vector<double>{1, 0, 0, 1, 0}, gt), 0.0);
    EXPECT_EQ(*explanation_auc(std::vector<double>(5, 0.3), gt), 0.5);
}

TEST(Auc, DegenerateTruthIsSkipped) {
    EXPECT_FALSE(explanation_auc(std::vector<double>{0.1, 0.9}, std::vector<std::uint8_t>{0, 0}).has_value());
    EXPECT_FALSE(explanation_auc(std::vector<double>{0.1, 0.9}, std::vector<std::uint8_t>{1, 1}).has_value());
}

TEST(Auc, MatchesPairwiseCountingWithTies) {
    Rng rng = make_stream(3, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::vector<std::uint8_t> gt = random_gt(rng, 30);
        std::vector<double> score(30);
        // Coarse values force many ties.
        for (double& s : score) s = std::floor(uniform(rng, 0.0, 5.0)) / 4.0;
        EXPECT_NEAR(*explanation_auc(score, gt), oracle::pairwise_auc(score, gt), 1e-15);
    }
}

TEST(Auc, InvariantUnderMonotoneMaps) {
    Rng rng = make_stream(4, 0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 10 + static_cast<std::size_t>(uniform(rng, 0.0, 60.0));
        const std::vector<std::uint8_t> gt = random_gt(rng, n);
        std::vector<double> score(n);
        for (double& s : score) s = std::round(uniform(rng, -3.0, 3.0) * 8.0) / 8.0;
        const double a = uniform(rng, 0.1, 5.0), b = uniform(rng, -2.0, 2.0), p = uniform(rng, 0.5, 3.0);
        std::vector<double> mapped(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double base = std::exp(score[i]);
            mapped[i] = a * std::pow(base, p) + b + std::atan(score[i]);
        }
        EXPECT_EQ(*explanation_auc(mapped, gt), *explanation_auc(score, gt)) << trial;
    }
}

TEST(F1, BoundaryConventions) {
    EXPECT_EQ(explanation_f1(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{0, 0}), 1.0);
    EXPECT_EQ(explanation_f1(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{0, 1}), 0.0);
    EXPECT_EQ(explanation_f1(std::vector<double>(4, 0.3), std::vector<std::uint8_t>{0, 1, 1, 0}), 0.0);
    EXPECT_EQ(explanation_f1(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 1}), 0.0);
    EXPECT_EQ(explanation_f1(std::vector<double>{0, 1, 1, 0}, std::vector<std::uint8_t>{0, 1, 1, 0}), 1.0);
    // tp=1, fp=1, fn=1
    EXPECT_DOUBLE_EQ(explanation_f1(std::vector<double>{0.9, 0.9, 0.1}, std::vector<std::uint8_t>{1, 0, 1}), 0.5);
}

TEST(F1, DroppingTruePositivesNeverHelps) {
    Rng rng = make_stream(5, 0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::vector<std::uint8_t> gt = random_gt(rng, 25);
        std::vector<double> score(25);
        for (double& s : score) s = uniform_open(rng);
        const double before = explanation_f1(score, gt);
        for (std::size_t i = 0; i < 25; ++i)
            if (gt[i] && score[i] > 0.5 && uniform_open(rng) < 0.5) score[i] = 0.2;
        EXPECT_LE(explanation_f1(score, gt), before);
    }
}

TEST(Accumulator, SkipsEmptyTruthAndAveragesUnweighted) {
    ExplanationAccumulator acc;
    acc.add({0.9, 0.1, 0.9}, {1, 0, 1});  // auc 1, f1 1
    acc.add({0.9, 0.9, 0.1}, {1, 0, 1});  // auc 0.25, f1 0.5
    acc.add({0.2, 0.2, 0.2}, {0, 0, 0});  // skipped
    acc.add({0.9, 0.9, 0.9}, {1, 1, 1});  // f1 only
    const ExplanationScore s = acc.result();
    EXPECT_EQ(s.n_evaluated, 3u);
    EXPECT_EQ(s.n_skipped, 1u);
    EXPECT_EQ(s.n_auc, 2u);
    EXPECT_DOUBLE_EQ(s.auc_mean, 0.625);
    EXPECT_DOUBLE_EQ(s.f1_mean, (1.0 + 0.5 + 1.0) / 3.0);
}

TEST(Report, JsonFields) {
    MetricsReport r;
    r.dataset = "univariate";
    r.model = "magnets";
    r.r2 = 0.5;
    auto j = nlohmann::json::parse(r.to_json());
    for (const char* key : {"dataset", "model", "lambda_spars", "lambda_ortho", "rmse_raw", "r2", "seed", "wall_ms"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_FALSE(j.contains("expl_f1_mean"));
    r.explanation = ExplanationScore{0.9, 0.8, 10, 2, 10};
    j = nlohmann::json::parse(r.to_json());
    EXPECT_EQ(j["expl_auc_mean"].get<double>(), 0.9);
    EXPECT_EQ(j["expl_f1_mean"].get<double>(), 0.8);
    EXPECT_EQ(j["n_evaluated"].get<int>(), 10);
    EXPECT_EQ(j["n_skipped"].get<int>(), 2);
}

TEST(Report, MaskPoolNames) {
    EXPECT_EQ(parse_mask_pool("union"), MaskPool::Union);
    EXPECT_EQ(parse_mask_pool(to_string(MaskPool::Weighted)), MaskPool::Weighted);
    EXPECT_THROW(parse_mask_pool("max"), std::invalid_argument);
}
