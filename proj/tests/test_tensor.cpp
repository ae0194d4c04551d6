#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mvpt/kernels.hpp"
#include "mvpt/ops.hpp"
#include "mvpt/rng.hpp"

using namespace mvpt;

namespace {

Tensor<double> rand_t(Rng& rng, Shape s, bool rg = true) {
    std::vector<double> v(numel_of(s));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return Tensor<double>(std::move(s), std::move(v), rg);
}

template <class T>
std::vector<double> naive_gemm(std::size_t M, std::size_t N, std::size_t K, const std::vector<T>& a,
                               const std::vector<T>& b) {
    std::vector<double> c(M * N, 0.0);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j)
            for (std::size_t k = 0; k < K; ++k) c[i * N + j] += double(a[i * K + k]) * double(b[k * N + j]);
    return c;
}

}  // namespace

TEST(Tensor, RejectsZeroExtentAndLengthMismatch) {
    EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), DimensionError);
    EXPECT_THROW(Tensor<float>(Shape{2}).item(), ContractError);
}

TEST(Tensor, CloneAndDetachCopyValues) {
    Tensor<double> a(Shape{3}, {1, 2, 3}, true);
    auto c = a.clone();
    c[0] = 9;
    EXPECT_EQ(a[0], 1);
    EXPECT_FALSE(c.requires_grad());
    EXPECT_TRUE(a.detach().is_leaf());
}

TEST(Autodiff, ProductRuleAndAccumulation) {
    Tensor<double> a(Shape{2}, {2, 3}, true), b(Shape{2}, {5, 7}, true);
    backward(sum(mul(a, b)));
    EXPECT_EQ(a.grad()[0], 5);
    EXPECT_EQ(a.grad()[1], 7);
    EXPECT_EQ(b.grad()[0], 2);
    backward(sum(mul(a, b)));
    EXPECT_EQ(a.grad()[0], 10);  // leaves accumulate
}

TEST(Autodiff, SharedSubexpressionGetsBothPaths) {
    Tensor<double> x(Shape{1}, {3}, true);
    auto y = mul(x, x);
    backward(sum(add(y, y)));  // 2 x^2
    EXPECT_DOUBLE_EQ(x.grad()[0], 12);
}

TEST(Autodiff, NoGradGuardBuildsNoGraph) {
    Tensor<double> x(Shape{2}, {1, 2}, true);
    {
        NoGradGuard g;
        auto y = sum(x);
        EXPECT_FALSE(y.requires_grad());
        EXPECT_TRUE(y.is_leaf());
    }
    EXPECT_TRUE(sum(x).requires_grad());
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
    Tensor<double> x(Shape{2}, {1, 2}, true);
    EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Autodiff, FaultInjectionFlipsOneRule) {
    Tensor<double> x(Shape{1}, {0.5}, true);
    {
        FaultInjection f("scale");
        backward(sum(scale(x, 3.0)));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], -3.0);
    x.zero_grad();
    backward(sum(scale(x, 3.0)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Kernels, GemmMatchesNaiveOnAwkwardSizes) {
    Rng rng(1);
    for (auto [M, N, K] : {std::tuple{1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 48, 32}, {5, 130, 3}}) {
        std::vector<float> a(M * K), b(K * N), c(M * N, 1.f);
        for (auto& v : a) v = float(rng.uniform(-1, 1));
        for (auto& v : b) v = float(rng.uniform(-1, 1));
        const auto ref = naive_gemm<float>(M, N, K, a, b);
        kernels::gemm_nn<float>(M, N, K, a.data(), b.data(), c.data(), false);
        for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-5) << M << "x" << N << "x" << K;
        kernels::gemm_nn<float>(M, N, K, a.data(), b.data(), c.data(), true);
        for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], 2 * ref[i], 2e-5);
    }
}

TEST(Kernels, TransposedVariantsAgree) {
    Rng rng(2);
    const std::size_t M = 7, N = 11, K = 13;
    std::vector<double> a(M * K), b(K * N), at(K * M), bt(N * K), c1(M * N), c2(M * N), c3(M * N), s;
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    kernels::transpose(M, K, a.data(), at.data());
    kernels::transpose(K, N, b.data(), bt.data());
    kernels::gemm_nn(M, N, K, a.data(), b.data(), c1.data(), false);
    kernels::gemm_tn(M, N, K, at.data(), b.data(), c2.data(), false);
    kernels::gemm_nt(M, N, K, a.data(), bt.data(), c3.data(), false, s);
    for (std::size_t i = 0; i < c1.size(); ++i) {
        EXPECT_NEAR(c1[i], c2[i], 1e-13);
        EXPECT_NEAR(c1[i], c3[i], 1e-13);
    }
}

TEST(Ops, BatchedMatmulBroadcastsAgainstNaive) {
    Rng rng(3);
    auto a = rand_t(rng, {2, 3, 4}), b = rand_t(rng, {4, 5});
    auto y = matmul(a, b);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
    for (std::size_t n = 0; n < 2; ++n) {
        std::vector<double> as(a.vec().begin() + n * 12, a.vec().begin() + (n + 1) * 12);
        const auto ref = naive_gemm<double>(3, 5, 4, as, b.vec());
        for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(y[n * 15 + i], ref[i], 1e-12);
    }
    EXPECT_THROW(matmul(a, rand_t(rng, {3, 5})), DimensionError);
}

TEST(Ops, GeluMatchesErfForm) {
    Tensor<double> x(Shape{5}, {-3, -0.5, 0, 0.7, 2.5});
    auto y = gelu(x);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], 0.5 * x[i] * (1 + std::erf(x[i] / std::numbers::sqrt2)), 1e-12);
}

TEST(Ops, LayerNormRowsHaveZeroMeanUnitVariance) {
    Rng rng(4);
    auto x = rand_t(rng, {4, 8}, false);
    Tensor<double> g(Shape{8}, std::vector<double>(8, 1.0)), b(Shape{8});
    auto y = layer_norm(x, g, b, 0.0);
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 8; ++c) m += y[r * 8 + c] / 8;
        for (std::size_t c = 0; c < 8; ++c) v += (y[r * 8 + c] - m) * (y[r * 8 + c] - m) / 8;
        EXPECT_NEAR(m, 0, 1e-12);
        EXPECT_NEAR(v, 1, 1e-10);
    }
}

TEST(Ops, SoftmaxAndCrossEntropyHandValues) {
    Tensor<double> x(Shape{1, 3}, {1, 2, 3});
    auto p = softmax_temp(x, 1.0);
    const double z = std::exp(1) + std::exp(2) + std::exp(3);
    EXPECT_NEAR(p[2], std::exp(3) / z, 1e-15);
    const int l[1] = {0};
    EXPECT_NEAR(cross_entropy(x, std::span<const int>(l, 1)).item(), std::log(z) - 1, 1e-14);
    auto p2 = softmax_temp(x, 2.0);
    EXPECT_NEAR(p2[0] / p2[1], std::exp(-0.5), 1e-14);
    const int bad[1] = {3};
    EXPECT_THROW(cross_entropy(x, std::span<const int>(bad, 1)), Error);
}

TEST(Ops, KlDivValuesAndDomain) {
    Tensor<double> p(Shape{2}, {0.5, 0.5}), q(Shape{2}, {0.25, 0.75});
    EXPECT_NEAR(kl_div(p, q).value.item(), 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0), 1e-15);
    EXPECT_EQ(kl_div(p, p).value.item(), 0.0);
    Tensor<double> z(Shape{2}, {1.0, 0.0});
    EXPECT_NEAR(kl_div(z, q).value.item(), std::log(4.0), 1e-15);  // 0 log 0 = 0
    EXPECT_TRUE(kl_div(q, z).saturated);
    EXPECT_THROW(kl_div(p, Tensor<double>(Shape{2}, {0.7, 0.7})), DomainError);
    EXPECT_THROW(kl_div(p, Tensor<double>(Shape{2}, {1.2, -0.2})), DomainError);
}

TEST(Ops, ShapeOpsRoundTrip) {
    Rng rng(5);
    auto x = rand_t(rng, {4, 3}, false);
    auto parts = split(x, 0, {1, 3});
    auto back = concat(parts, 0);
    EXPECT_EQ(back.vec(), x.vec());
    auto cols = concat(std::vector<Tensor<double>>{narrow(x, 1, 0, 1), narrow(x, 1, 1, 2)}, 1);
    EXPECT_EQ(cols.vec(), x.vec());
    auto g = gather_rows(x, {3, -1, 0});
    EXPECT_EQ(g[0], x[9]);
    EXPECT_EQ(g[3], 0.0);  // -1 pads with zeros
    EXPECT_EQ(g[6], x[0]);
    auto m = mean_pool(x, {0, 2});
    EXPECT_DOUBLE_EQ(m[1], 0.5 * (x[1] + x[7]));
    EXPECT_THROW(reshape(x, Shape{5, 2}), DimensionError);
}
