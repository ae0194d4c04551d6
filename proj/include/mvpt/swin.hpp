#pragma once

#include <string>
#include <vector>

#include "mvpt/attention.hpp"
#include "mvpt/image.hpp"
#include "mvpt/ops.hpp"
#include "mvpt/prompt.hpp"
#include "mvpt/rng.hpp"
#include "mvpt/state.hpp"
#include "mvpt/swin_config.hpp"

namespace mvpt {

/// Fresh backbone and single-view head. Linear weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// relative-bias tables ~ truncated normal(0, 0.02), LayerNorm at identity. Biases are zero except
/// the patch projection's, which shares the weight's range so empty patches do not embed to zero.
template <class T>
ModelState<T> init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ModelState<T> state;
    for (const auto& [name, shape] : backbone_parameter_shapes(cfg)) {
        std::vector<T> v(numel_of(shape), T(0));
        const bool is_norm = name.find("norm") != std::string::npos;
        const bool is_weight = name.ends_with(".weight");
        if (is_norm && is_weight) {
            std::fill(v.begin(), v.end(), T(1));
        } else if (is_weight || name == "backbone.patch_embed.bias") {
            const std::size_t fan_in = is_weight ? shape[0] : cfg.patch_height * cfg.patch_width * cfg.channels;
            const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
        } else if (name.ends_with("rel_bias")) {
            for (auto& x : v) x = static_cast<T>(rng.trunc_normal(0.02));
        }
        state.set(name, Tensor<T>(shape, std::move(v), true));
    }
    return state;
}

/// Checks every backbone tensor against the config.
template <class T>
void check_backbone_state(const ModelState<T>& state, const BackboneConfig& cfg) {
    for (const auto& [name, shape] : backbone_parameter_shapes(cfg)) state.expect(name, shape);
}

/// Flattened non-overlapping patches of one image, [m, h*w*C].
template <class T>
Tensor<T> image_patches(const Image& img, const BackboneConfig& cfg) {
    if (img.height != cfg.image_height || img.width != cfg.image_width)
        throw ConfigError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) + ", config expects " +
                          std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width));
    if (img.height % cfg.patch_height || img.width % cfg.patch_width)
        throw ConfigError("image not divisible by the patch size");
    const std::size_t gr = img.height / cfg.patch_height, gc = img.width / cfg.patch_width;
    const std::size_t ph = cfg.patch_height, pw = cfg.patch_width;
    std::vector<T> v(gr * gc * ph * pw);
    std::size_t k = 0;
    for (std::size_t r = 0; r < gr; ++r)
        for (std::size_t c = 0; c < gc; ++c)
            for (std::size_t a = 0; a < ph; ++a)
                for (std::size_t b = 0; b < pw; ++b)
                    v[k++] = static_cast<T>(img.at(r * ph + a, c * pw + b));
    return Tensor<T>(Shape{gr * gc, ph * pw}, std::move(v));
}

/// E_0: linear patch projection followed by LayerNorm; one view grid tagged `tag`.
template <class T>
TokenSequence<T> patch_embed(const Image& img, const BackboneConfig& cfg, const ModelState<T>& state,
                             TokenTag tag = TokenTag::mlo_patch) {
    if (cfg.channels != 1) throw ConfigError("only single-channel images are supported");
    auto patches = image_patches<T>(img, cfg);
    const auto& w = state.at("backbone.patch_embed.weight");
    const auto& b = state.at("backbone.patch_embed.bias");
    auto x = linear(patches, w, &b);
    x = layer_norm(x, state.at("backbone.patch_embed.norm.weight"), state.at("backbone.patch_embed.norm.bias"));
    TokenSequence<T> seq;
    seq.tokens = x;
    seq.layout.total = x.dim(0);
    seq.layout.views.push_back({tag, 0, cfg.grid_rows(0), cfg.grid_cols(0)});
    return seq;
}

/// One transformer layer: (shifted) window attention and FFN, each pre-normed with a residual.
template <class T>
Tensor<T> swin_block(const TokenSequence<T>& seq, const ModelState<T>& state, const BackboneConfig& cfg,
                     std::size_t stage, std::size_t block) {
    const auto p = block_prefix(stage, block);
    const std::size_t shift = (block % 2 == 1) ? cfg.window / 2 : 0;
    const auto plan = build_window_plan(seq.layout, cfg.window, shift, cfg.relative_position_bias);
    const Tensor<T>* bias = cfg.relative_position_bias ? &state.at(p + "attn.rel_bias") : nullptr;

    auto h = layer_norm(seq.tokens, state.at(p + "norm1.weight"), state.at(p + "norm1.bias"));
    auto qkv = linear(h, state.at(p + "attn.qkv.weight"), &state.at(p + "attn.qkv.bias"));
    auto a = grouped_attention(qkv, plan, cfg.heads[stage], bias);
    a = linear(a, state.at(p + "attn.proj.weight"), &state.at(p + "attn.proj.bias"));
    auto x = add(seq.tokens, a);
    h = layer_norm(x, state.at(p + "norm2.weight"), state.at(p + "norm2.bias"));
    h = linear(h, state.at(p + "mlp.fc1.weight"), &state.at(p + "mlp.fc1.bias"));
    h = gelu(h);
    h = linear(h, state.at(p + "mlp.fc2.weight"), &state.at(p + "mlp.fc2.bias"));
    return add(x, h);
}

/// Row indices that gather each 2x2 block of a grid in (0,0),(1,0),(0,1),(1,1) order.
inline std::vector<std::int64_t> merge_gather_index(const ViewGrid& v) {
    if (v.rows % 2 || v.cols % 2)
        throw ConfigError("patch merging needs an even grid, got " + std::to_string(v.rows) + "x" + std::to_string(v.cols));
    std::vector<std::int64_t> idx;
    idx.reserve(v.count());
    for (std::size_t r = 0; r < v.rows / 2; ++r)
        for (std::size_t c = 0; c < v.cols / 2; ++c)
            for (auto [dr, dc] : {std::pair{0, 0}, std::pair{1, 0}, std::pair{0, 1}, std::pair{1, 1}})
                idx.push_back(static_cast<std::int64_t>(v.offset + (2 * r + dr) * v.cols + 2 * c + dc));
    return idx;
}

/// Halves each view's grid and doubles the width. Prompt rows are dropped.
template <class T>
TokenSequence<T> patch_merging(const TokenSequence<T>& seq, const ModelState<T>& state, std::size_t stage) {
    const std::size_t d = seq.width();
    std::vector<std::int64_t> idx;
    SequenceLayout layout;
    for (const auto& v : seq.layout.views) {
        auto vi = merge_gather_index(v);
        ViewGrid g{v.tag, idx.size() / 4, v.rows / 2, v.cols / 2};
        idx.insert(idx.end(), vi.begin(), vi.end());
        layout.views.push_back(g);
    }
    layout.total = idx.size() / 4;
    auto x = reshape(gather_rows(seq.tokens, std::move(idx)), Shape{layout.total, 4 * d});
    const auto p = merge_prefix(stage);
    x = layer_norm(x, state.at(p + "norm.weight"), state.at(p + "norm.bias"));
    x = linear(x, state.at(p + "reduction.weight"));
    return {x, std::move(layout)};
}

/// Runs all transformer layers. Deep prompts (if any) are injected before every layer except
/// layer 0 when `layer0_assembled` says the caller already placed them; shallow prompts only
/// enter at layer 0.
template <class T>
TokenSequence<T> run_layers(TokenSequence<T> seq, const BackboneConfig& cfg, const ModelState<T>& state,
                            const PromptSet<T>* prompts, bool layer0_assembled,
                            const PromptSet<T>* cc_prompts = nullptr) {
    std::size_t layer = 0;
    for (std::size_t s = 0; s < cfg.stages(); ++s) {
        for (std::size_t b = 0; b < cfg.depths[s]; ++b, ++layer) {
            const bool wants = prompts && !prompts->empty() && (prompts->deep || layer == 0);
            if (wants && !(layer == 0 && layer0_assembled)) seq = inject(layer, *prompts, seq, cc_prompts);
            seq.tokens = swin_block(seq, state, cfg, s, b);
        }
        if (s + 1 < cfg.stages()) seq = patch_merging(seq, state, s);
    }
    return seq;
}

/// Final LayerNorm then mean over the patch-tagged rows; returns [d].
template <class T>
Tensor<T> pool_patches(const TokenSequence<T>& seq, const ModelState<T>& state) {
    auto x = layer_norm(seq.tokens, state.at("backbone.norm.weight"), state.at("backbone.norm.bias"));
    return mean_pool(x, seq.layout.patch_rows());
}

/// Classification head on a pooled feature [d]; returns logits [num_classes].
template <class T>
Tensor<T> apply_head(const Tensor<T>& pooled, const ModelState<T>& state, const std::string& head) {
    const auto& w = state.at(head + ".weight");
    const auto& b = state.at(head + ".bias");
    auto y = linear(reshape(pooled, Shape{1, pooled.numel()}), w, &b);
    return reshape(y, Shape{w.dim(1)});
}

template <class T>
struct BackboneOutput {
    TokenSequence<T> final;
    Tensor<T> pooled;
    Tensor<T> logits;
};

/// Single-view forward: embed, (optionally prompted) layers, pooled head.
template <class T>
BackboneOutput<T> forward_backbone(const Image& img, const BackboneConfig& cfg, const ModelState<T>& state,
                                   const PromptSet<T>* prompts = nullptr, const std::string& head = "head.single",
                                   TokenTag tag = TokenTag::mlo_patch) {
    auto seq = patch_embed(img, cfg, state, tag);
    seq = run_layers(std::move(seq), cfg, state, prompts, false);
    auto pooled = pool_patches(seq, state);
    auto logits = apply_head(pooled, state, head);
    return {std::move(seq), pooled, logits};
}

}  // namespace mvpt
