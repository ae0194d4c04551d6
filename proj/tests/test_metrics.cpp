#include <gtest/gtest.h>

#include "mvpt/metrics.hpp"
#include "mvpt/rng.hpp"

using namespace mvpt;

namespace {

double pairwise(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? np : nn) += 1;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] && !y[j]) wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    return wins / (np * nn);
}

}  // namespace

TEST(Auroc, HandValues) {
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_EQ(auroc_binary(std::vector<double>{0.1, 0.2, 0.3, 0.4}, y), 1.0);
    EXPECT_EQ(auroc_binary(std::vector<double>{0.4, 0.3, 0.2, 0.1}, y), 0.0);
    EXPECT_EQ(auroc_binary(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
    EXPECT_EQ(auroc_binary(std::vector<double>{0.1, 0.3, 0.2, 0.4}, y), 0.75);
}

TEST(Auroc, MatchesPairCountingWithTies) {
    Rng rng(1);
    for (int it = 0; it < 200; ++it) {
        const std::size_t n = 2 + rng.below(60);
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = std::floor(rng.uniform(0, 5));
            y[i] = i < 2 ? int(i) : int(rng.below(2));
        }
        EXPECT_DOUBLE_EQ(auroc_binary(s, y), pairwise(s, y));
    }
}

TEST(Auroc, InvariantUnderMonotoneTransform) {
    Rng rng(2);
    std::vector<double> s(50), t(50);
    std::vector<int> y(50);
    for (std::size_t i = 0; i < 50; ++i) {
        s[i] = rng.uniform(-2, 2);
        t[i] = std::exp(3 * s[i]);
        y[i] = int(i % 2);
    }
    EXPECT_EQ(auroc_binary(s, y), auroc_binary(t, y));
}

TEST(Auroc, Errors) {
    EXPECT_THROW(auroc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
    EXPECT_THROW(auroc_binary(std::vector<double>{0.1}, std::vector<int>{1, 0}), MetricError);
    EXPECT_THROW(auroc_binary(std::vector<double>{NAN, 0.2}, std::vector<int>{1, 0}), MetricError);
    EXPECT_THROW(auroc_macro_ovr(std::vector<double>(6, 0.3), std::vector<int>{0, 1}, 3), MetricError);
}

TEST(Auroc, MacroOvrIsMeanOfColumns) {
    const std::vector<double> p{0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6, 0.5, 0.4, 0.1};
    const std::vector<int> y{0, 1, 2, 1};
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> s;
        std::vector<int> b;
        for (std::size_t i = 0; i < 4; ++i) {
            s.push_back(p[i * 3 + c]);
            b.push_back(y[i] == c);
        }
        total += pairwise(s, b);
    }
    EXPECT_DOUBLE_EQ(auroc_macro_ovr(p, y, 3), total / 3);
}

TEST(Prf, HandValuesWithEmptyClass) {
    const std::vector<int> pred{0, 0, 1, 1}, lab{0, 1, 1, 1};
    const auto r = macro_prf(pred, lab, 3);
    // class 0: p 1/2 r 1; class 1: p 1 r 2/3; class 2: 0/0 -> 0
    EXPECT_DOUBLE_EQ(r.precision, 1.5 / 3);
    EXPECT_DOUBLE_EQ(r.recall, (1 + 2.0 / 3) / 3);
    EXPECT_DOUBLE_EQ(r.f1, (2.0 / 3 + 0.8) / 3);
    EXPECT_DOUBLE_EQ(accuracy(pred, lab), 0.75);
}

TEST(Aggregate, SampleStdAndMean) {
    Metrics a, b, c;
    a.auroc = 0.8;
    b.auroc = 0.9;
    c.auroc = 1.0;
    const auto r = aggregate_folds({a, b, c});
    EXPECT_NEAR(r.mean.auroc, 0.9, 1e-15);
    EXPECT_NEAR(r.std.auroc, 0.1, 1e-15);
    EXPECT_THROW(aggregate_folds({a}), ContractError);
    const auto j = to_json(r);
    EXPECT_EQ(j["folds"].size(), 3u);
    EXPECT_TRUE(j.contains("std"));
}

TEST(Evaluate, BinaryUsesPositiveColumn) {
    const std::vector<double> p{0.9, 0.1, 0.4, 0.6, 0.3, 0.7, 0.8, 0.2};
    const std::vector<int> y{0, 1, 1, 0};
    const auto m = evaluate(p, y, 2);
    EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(m.auroc, pairwise({0.1, 0.6, 0.7, 0.2}, y));
}
