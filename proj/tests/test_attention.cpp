#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "mvpt/attention.hpp"
#include "mvpt/swin.hpp"

using namespace mvpt;

namespace {

SequenceLayout grid_layout(std::size_t prompts, std::size_t rows, std::size_t cols, std::size_t views = 1) {
    SequenceLayout l;
    std::size_t off = 0;
    for (std::size_t v = 0; v < views; ++v) {
        for (std::size_t p = 0; p < prompts; ++p) l.prompt_rows.push_back(off + p);
        off += prompts;
        l.views.push_back({v ? TokenTag::cc_patch : TokenTag::mlo_patch, off, rows, cols});
        off += rows * cols;
    }
    l.total = off;
    return l;
}

Tensor<double> rand_t(Rng& rng, Shape s) {
    std::vector<double> v(numel_of(s));
    for (auto& x : v) x = rng.uniform(-1, 1);
    return Tensor<double>(std::move(s), std::move(v));
}

}  // namespace

TEST(WindowPartition, SlotsCoverGridOnceWithoutShift) {
    const auto idx = window_slot_index(8, 8, 4, 0);
    ASSERT_EQ(idx.size(), 64u);
    // first window is the top-left 4x4 block, row-major
    EXPECT_EQ(idx[0], 0);
    EXPECT_EQ(idx[3], 3);
    EXPECT_EQ(idx[4], 8);
    EXPECT_EQ(idx[16], 4);
    std::set<std::int64_t> seen(idx.begin(), idx.end());
    EXPECT_EQ(seen.size(), 64u);
}

TEST(WindowPartition, ShiftRollsAndPadsNonDivisibleGrids) {
    const auto idx = window_slot_index(8, 8, 4, 2);
    EXPECT_EQ(idx[0], 2 * 8 + 2);  // slot (0,0) reads grid (2,2)
    std::set<std::int64_t> seen(idx.begin(), idx.end());
    EXPECT_EQ(seen.size(), 64u);

    const auto pad = window_slot_index(6, 5, 4, 0);
    EXPECT_EQ(pad.size(), 64u);
    EXPECT_EQ(std::count(pad.begin(), pad.end(), -1), 64 - 30);
}

TEST(AttentionPlan, EveryQueryAppearsExactlyOnce) {
    for (std::size_t shift : {0, 2}) {
        const auto lay = grid_layout(3, 8, 8, 2);
        const auto plan = build_window_plan(lay, 4, shift, true);
        std::vector<int> count(lay.total, 0);
        for (const auto& g : plan.groups)
            for (auto q : g.q) ++count[q];
        for (auto c : count) EXPECT_EQ(c, 1);
    }
    EXPECT_THROW(build_window_plan(grid_layout(0, 8, 8), 4, 4, false), ConfigError);
}

TEST(Attention, ViewsDoNotSeeEachOtherWithoutPrompts) {
    Rng rng(3);
    const auto lay = grid_layout(0, 4, 4, 2);
    const auto plan = build_window_plan(lay, 2, 1, false);
    auto qkv = rand_t(rng, {lay.total, 12});
    auto y1 = grouped_attention(qkv, plan, 2, static_cast<const Tensor<double>*>(nullptr));
    for (std::size_t r = 16; r < 32; ++r)
        for (std::size_t c = 0; c < 12; ++c) qkv[r * 12 + c] += 1.0;
    auto y2 = grouped_attention(qkv, plan, 2, static_cast<const Tensor<double>*>(nullptr));
    for (std::size_t i = 0; i < 16 * 4; ++i) EXPECT_EQ(y1[i], y2[i]);
}

TEST(Attention, PromptQueriesAttendEverywhere) {
    Rng rng(4);
    const auto lay = grid_layout(1, 4, 4);
    const auto plan = build_window_plan(lay, 2, 0, false);
    auto qkv = rand_t(rng, {lay.total, 6});
    auto y1 = grouped_attention(qkv, plan, 1, static_cast<const Tensor<double>*>(nullptr));
    qkv[16 * 6 + 4] += 1.0;  // value of the last patch
    auto y2 = grouped_attention(qkv, plan, 1, static_cast<const Tensor<double>*>(nullptr));
    EXPECT_NE(y1[0], y2[0]);     // the prompt row sees it
    EXPECT_EQ(y1[6], y2[6]);     // the first patch, in another window, does not
}

TEST(Attention, SingleWindowEqualsDenseSoftmaxAttention) {
    Rng rng(5);
    const auto lay = grid_layout(0, 2, 2);
    const auto plan = build_window_plan(lay, 2, 0, false);
    auto qkv = rand_t(rng, {4, 3});
    auto y = grouped_attention(qkv, plan, 1, static_cast<const Tensor<double>*>(nullptr));
    for (std::size_t i = 0; i < 4; ++i) {
        double z = 0, acc = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            const double e = std::exp(qkv[i * 3] * qkv[j * 3 + 1]);
            z += e;
            acc += e * qkv[j * 3 + 2];
        }
        EXPECT_NEAR(y[i], acc / z, 1e-14);
    }
}

TEST(PatchMerging, GatherOrderIsTwoByTwoColumnMajor) {
    const auto idx = merge_gather_index(ViewGrid{TokenTag::mlo_patch, 10, 4, 4});
    ASSERT_EQ(idx.size(), 16u);
    EXPECT_EQ((std::vector<std::int64_t>(idx.begin(), idx.begin() + 8)),
              (std::vector<std::int64_t>{10, 14, 11, 15, 12, 16, 13, 17}));
    EXPECT_THROW(merge_gather_index(ViewGrid{TokenTag::mlo_patch, 0, 3, 4}), ConfigError);
}

TEST(Backbone, ShapesAndParameterCountAgree) {
    BackboneConfig cfg;
    const auto st = init_backbone<float>(cfg, 1);
    EXPECT_EQ(st.parameter_count(), backbone_parameter_count(cfg));
    Image img(64, 64, 0.25f);
    NoGradGuard ng;
    auto out = forward_backbone(img, cfg, st);
    EXPECT_EQ(out.logits.shape(), (Shape{cfg.num_classes}));
    EXPECT_EQ(out.final.layout.views[0].rows, cfg.grid_rows(1));
    EXPECT_THROW(forward_backbone(Image(32, 32), cfg, st), ConfigError);
}

TEST(Backbone, InitIsSeededAndPatchBiasNonZero) {
    BackboneConfig cfg;
    const auto a = init_backbone<float>(cfg, 7), b = init_backbone<float>(cfg, 7), c = init_backbone<float>(cfg, 8);
    EXPECT_EQ(a.at("backbone.patch_embed.weight").vec(), b.at("backbone.patch_embed.weight").vec());
    EXPECT_NE(a.at("backbone.patch_embed.weight").vec(), c.at("backbone.patch_embed.weight").vec());
    const auto& pb = a.at("backbone.patch_embed.bias").vec();
    EXPECT_TRUE(std::any_of(pb.begin(), pb.end(), [](float v) { return v != 0.f; }));
    for (float v : pb) EXPECT_LE(std::abs(v), 0.25f);  // 1/sqrt(16)
}
