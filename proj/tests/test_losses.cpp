#include <gtest/gtest.h>

#include "mvpt/multiview.hpp"

using namespace mvpt;

namespace {

Tensor<double> logits(std::initializer_list<double> v, bool rg = true) {
    return Tensor<double>(Shape{v.size()}, std::vector<double>(v), rg);
}

std::vector<double> softmax(const Tensor<double>& y, double tau) {
    std::vector<double> p(y.numel());
    double z = 0;
    for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp(y[i] / tau);
    for (auto& v : p) v /= z;
    return p;
}

}  // namespace

TEST(Losses, KdIsZeroOnItselfAndPositiveOtherwise) {
    auto a = logits({0.1, 2.0, -1.0}), b = logits({1.0, 0.0, 0.5});
    for (double tau : {0.5, 1.0, 4.0, 16.0}) {
        EXPECT_EQ(l_kd(a, a, tau).item(), 0.0);
        EXPECT_GT(l_kd(a, b, tau).item(), 0.0);
    }
    EXPECT_THROW(l_kd(a, logits({1, 2}), 1.0), DimensionError);
}

TEST(Losses, KdMatchesClosedForm) {
    auto t = logits({0.3, -0.2, 1.1}), s = logits({-0.5, 0.4, 0.0});
    const auto p = softmax(t, 2.0), q = softmax(s, 2.0);
    double ref = 0;
    for (std::size_t i = 0; i < 3; ++i) ref += p[i] * std::log(p[i] / q[i]);
    EXPECT_NEAR(l_kd(t, s, 2.0).item(), ref, 1e-15);
}

TEST(Losses, MutualDistillationVanishesWhenViewsAgree) {
    auto y = logits({0.3, -0.2, 1.1});
    EXPECT_EQ(l_md(y, y, y, 4.0).item(), 0.0);
    // z = mean of views equals y_mv even though the views differ
    auto a = logits({1.3, -0.2, 0.1}), b = logits({-0.7, -0.2, 2.1});
    EXPECT_NEAR(l_md(a, b, y, 4.0).item(), 0.0, 1e-16);
    EXPECT_THROW(l_md(a, b, y, 0.0), DomainError);
}

TEST(Losses, OverallIsTheWeightedSum) {
    auto a = logits({0.5, -1.0, 0.2}), b = logits({0.0, 0.3, -0.4}), m = logits({1.0, 0.1, -0.6});
    auto bundle = combine_losses(a, b, m, 2, LossWeights{3.0, 0.25});
    EXPECT_NEAR(bundle.l_overall.item(),
                bundle.l_mv.item() + bundle.l_mlo.item() + bundle.l_cc.item() + 0.25 * bundle.l_md.item(), 1e-15);
    EXPECT_THROW(combine_losses(a, b, m, 0, LossWeights{3.0, -1.0}), DomainError);
}

TEST(Losses, LambdaZeroRemovesDistillationGradient) {
    auto a = logits({0.5, -1.0, 0.2}), b = logits({0.0, 0.3, -0.4}), m = logits({1.0, 0.1, -0.6});
    backward(combine_losses(a, b, m, 1, LossWeights{4.0, 0.0}).l_overall);
    auto m2 = logits({1.0, 0.1, -0.6});
    backward(ce_single(m2, 1));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(m.grad()[i], m2.grad()[i], 1e-15);
}

TEST(Losses, TeachersAreDetached) {
    // each direction alone: only the student receives gradient
    const double tau = 2.0;
    auto a = logits({0.5, -1.0, 0.2}), b = logits({0.0, 0.3, -0.4}), m = logits({1.0, 0.1, -0.6});
    backward(l_md(a, b, m, tau));
    const auto pm = softmax(m, tau);
    Tensor<double> z(Shape{3}, {0.25, -0.35, -0.1});
    const auto pz = softmax(z, tau);
    const double t3 = tau * tau * tau;
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(m.grad()[i], (pm[i] - pz[i]) / t3, 1e-15);
        EXPECT_NEAR(a.grad()[i], 0.5 * (pz[i] - pm[i]) / t3, 1e-15);
        EXPECT_NEAR(b.grad()[i], a.grad()[i], 1e-15);
    }
}

TEST(Losses, CrossEntropyGradientIsSoftmaxMinusOneHot) {
    auto y = logits({0.2, 0.9, -0.3});
    backward(ce_single(y, 0));
    const auto p = softmax(y, 1.0);
    EXPECT_NEAR(y.grad()[0], p[0] - 1, 1e-15);
    EXPECT_NEAR(y.grad()[2], p[2], 1e-15);
}
