#pragma once

#include <span>
#include <string>
#include <vector>

#include "mvpt/ops.hpp"
#include "mvpt/prompt.hpp"
#include "mvpt/swin.hpp"

namespace mvpt {

/// Per-view identity encodings added to every stage-0 token of that view.
template <class T>
struct ViewContext {
    Tensor<T> e_mlo;  // [d0]
    Tensor<T> e_cc;   // [d0]

    const Tensor<T>& of(TokenTag tag) const {
        if (tag == TokenTag::mlo_patch) return e_mlo;
        if (tag == TokenTag::cc_patch) return e_cc;
        throw ContractError("view context requested for a prompt tag");
    }
};

template <class T>
ViewContext<T> init_context(const BackboneConfig& cfg) {
    return {Tensor<T>(Shape{cfg.embed_dim}, true), Tensor<T>(Shape{cfg.embed_dim}, true)};
}

template <class T>
ViewContext<T> context_from_state(const ModelState<T>& state, const BackboneConfig& cfg) {
    return {state.expect("ctx.mlo", Shape{cfg.embed_dim}), state.expect("ctx.cc", Shape{cfg.embed_dim})};
}

/// Everything the tuning phase adds on top of the frozen backbone.
template <class T>
struct Adapter {
    PromptSet<T> prompts;     // shared P, or the mlo set when views own their prompts
    PromptSet<T> cc_prompts;  // empty unless view-specific prompts are enabled
    ViewContext<T> ctx;

    const PromptSet<T>* cc() const { return cc_prompts.empty() ? nullptr : &cc_prompts; }
    const PromptSet<T>& for_view(TokenTag tag) const {
        return (tag == TokenTag::cc_patch && !cc_prompts.empty()) ? cc_prompts : prompts;
    }
};

inline const std::string kCcPromptGroup = "prompt.cc.";

template <class T>
Adapter<T> adapter_from_state(const ModelState<T>& state, const BackboneConfig& cfg) {
    Adapter<T> a;
    a.prompts = prompts_from_state(state, cfg);
    a.cc_prompts = prompts_from_state(state, cfg, kCcPromptGroup);
    a.ctx = context_from_state(state, cfg);
    return a;
}

struct TuneInit {
    std::size_t prompt_length = 4;
    bool deep = true;
    bool view_specific_prompts = false;
    std::uint64_t seed = 0;
};

/// Stage-2 state: the stage-1 tensors plus prompts, zero context and a multi-view head
/// copied from the single-view head.
template <class T>
ModelState<T> init_tuning_state(const ModelState<T>& stage1, const BackboneConfig& cfg, const TuneInit& init) {
    check_backbone_state(stage1, cfg);
    ModelState<T> state;
    for (const auto& [n, t] : stage1)
        if (starts_with(n, "backbone.") || starts_with(n, "head.single.")) state.set(n, t.clone(true));
    state.set("head.multi.weight", stage1.at("head.single.weight").clone(true));
    state.set("head.multi.bias", stage1.at("head.single.bias").clone(true));
    auto ctx = init_context<T>(cfg);
    state.set("ctx.mlo", ctx.e_mlo);
    state.set("ctx.cc", ctx.e_cc);
    install_prompts(state, init_prompts<T>(cfg, init.prompt_length, init.seed, init.deep));
    if (init.view_specific_prompts)
        install_prompts(state, init_prompts<T>(cfg, init.prompt_length, init.seed ^ 0x9e3779b97f4a7c15ULL, init.deep),
                        kCcPromptGroup);
    return state;
}

/// Tune-phase tensor shapes: backbone and single-view head, multi-view head, context,
/// prompts. Nothing is allocated, so full-scale configurations can be audited.
inline ShapeList tuning_parameter_shapes(const BackboneConfig& cfg, const TuneInit& init) {
    auto shapes = backbone_parameter_shapes(cfg);
    const std::size_t df = cfg.final_width();
    shapes.push_back({"head.multi.weight", {df, cfg.num_classes}});
    shapes.push_back({"head.multi.bias", {cfg.num_classes}});
    shapes.push_back({"ctx.mlo", {cfg.embed_dim}});
    shapes.push_back({"ctx.cc", {cfg.embed_dim}});
    if (init.prompt_length > 0) {
        const std::size_t layers = init.deep ? cfg.num_layers() : 1;
        for (std::size_t i = 0; i < layers; ++i) shapes.push_back({prompt_name(i), {init.prompt_length, cfg.layer_width(i)}});
        if (init.view_specific_prompts)
            for (std::size_t i = 0; i < layers; ++i)
                shapes.push_back({prompt_name(i, kCcPromptGroup), {init.prompt_length, cfg.layer_width(i)}});
    }
    return shapes;
}

/// Layer-0 input of one view: [P_0, E_0] with the view's context added to every row.
template <class T>
TokenSequence<T> assemble_view(const TokenSequence<T>& e0, const PromptSet<T>& prompts, const Tensor<T>& ctx) {
    if (e0.layout.views.size() != 1) throw FusionError("expected a single-view token sequence");
    auto seq = inject(0, prompts, e0);
    if (ctx.numel() != seq.width())
        throw FusionError("context width " + std::to_string(ctx.numel()) + " does not match token width " +
                          std::to_string(seq.width()));
    seq.tokens = add_bias(seq.tokens, ctx);
    return seq;
}

/// Joint layer-0 sequence [P_0 + e_mlo, E_mlo + e_mlo, P_0 + e_cc, E_cc + e_cc].
template <class T>
TokenSequence<T> fuse_views(const TokenSequence<T>& e0_mlo, const TokenSequence<T>& e0_cc, const PromptSet<T>& prompts,
                            const ViewContext<T>& ctx, const PromptSet<T>* cc_prompts = nullptr) {
    if (e0_mlo.layout.views.size() != 1 || e0_cc.layout.views.size() != 1)
        throw FusionError("fuse_views takes one view per input sequence");
    const auto &gm = e0_mlo.layout.views[0], &gc = e0_cc.layout.views[0];
    if (gm.rows != gc.rows || gm.cols != gc.cols || e0_mlo.width() != e0_cc.width())
        throw FusionError("views differ: mlo " + std::to_string(gm.rows) + "x" + std::to_string(gm.cols) + "x" +
                          std::to_string(e0_mlo.width()) + ", cc " + std::to_string(gc.rows) + "x" +
                          std::to_string(gc.cols) + "x" + std::to_string(e0_cc.width()));
    auto a = assemble_view(e0_mlo, prompts, ctx.e_mlo);
    auto b = assemble_view(e0_cc, cc_prompts ? *cc_prompts : prompts, ctx.e_cc);
    a.layout.views[0].tag = TokenTag::mlo_patch;
    b.layout.views[0].tag = TokenTag::cc_patch;

    TokenSequence<T> out;
    out.tokens = concat(std::vector<Tensor<T>>{a.tokens, b.tokens}, 0);
    out.layout = a.layout;
    const std::size_t off = a.layout.total;
    for (auto r : b.layout.prompt_rows) out.layout.prompt_rows.push_back(off + r);
    for (auto v : b.layout.views) {
        v.offset += off;
        out.layout.views.push_back(v);
    }
    out.layout.total = off + b.layout.total;
    return out;
}

/// Multi-view logits: frozen layers over the joint sequence, pooled over both views'
/// patch tokens, multi-view head.
template <class T>
Tensor<T> forward_multiview(const Image& mlo, const Image& cc, const BackboneConfig& cfg, const ModelState<T>& state,
                            const Adapter<T>& ad) {
    auto e_mlo = patch_embed(mlo, cfg, state, TokenTag::mlo_patch);
    auto e_cc = patch_embed(cc, cfg, state, TokenTag::cc_patch);
    auto seq = fuse_views(e_mlo, e_cc, ad.prompts, ad.ctx, ad.cc());
    seq = run_layers(std::move(seq), cfg, state, &ad.prompts, true, ad.cc());
    return apply_head(pool_patches(seq, state), state, "head.multi");
}

/// Prompted single-view logits with the view's context, shared single-view head.
template <class T>
Tensor<T> forward_singleview(const Image& img, TokenTag view, const BackboneConfig& cfg, const ModelState<T>& state,
                             const Adapter<T>& ad) {
    if (view != TokenTag::mlo_patch && view != TokenTag::cc_patch)
        throw ContractError("forward_singleview needs an mlo or cc view tag");
    const auto& ps = ad.for_view(view);
    auto seq = assemble_view(patch_embed(img, cfg, state, view), ps, ad.ctx.of(view));
    seq = run_layers(std::move(seq), cfg, state, &ps, true);
    return apply_head(pool_patches(seq, state), state, "head.single");
}

// ---------------------------------------------------------------------------
// losses

/// KL(softmax(t/tau) || softmax(s/tau)), teacher first.
template <class T>
Tensor<T> l_kd(const Tensor<T>& t, const Tensor<T>& s, T tau, bool* saturated = nullptr) {
    if (t.shape() != s.shape())
        throw DimensionError("l_kd: teacher " + shape_str(t.shape()) + " vs student " + shape_str(s.shape()));
    auto r = kl_div(softmax_temp(t, tau), softmax_temp(s, tau));
    if (saturated && r.saturated) *saturated = true;
    return r.value;
}

/// (1/tau^2) [ L_kd(detach(z), y_mv) + L_kd(detach(y_mv), z) ] with z = (y_mlo + y_cc) / 2.
template <class T>
Tensor<T> l_md(const Tensor<T>& y_mlo, const Tensor<T>& y_cc, const Tensor<T>& y_mv, T tau, bool* saturated = nullptr) {
    if (!(tau > T(0))) throw DomainError("l_md: temperature must be positive");
    auto z = scale(add(y_mlo, y_cc), T(0.5));
    auto a = l_kd(z.detach(), y_mv, tau, saturated);
    auto b = l_kd(y_mv.detach(), z, tau, saturated);
    return scale(add(a, b), T(1) / (tau * tau));
}

struct LossWeights {
    double tau = 4.0;
    double lambda = 0.1;
};

template <class T>
struct LossBundle {
    Tensor<T> l_mlo, l_cc, l_mv, l_md, l_overall;
    Tensor<T> y_mlo, y_cc, y_mv;
    double tau = 4.0, lambda = 0.1;
    bool saturated = false;
};

template <class T>
Tensor<T> ce_single(const Tensor<T>& logits, int label) {
    const int l[1] = {label};
    return cross_entropy(reshape(logits, Shape{1, logits.numel()}), std::span<const int>(l, 1));
}

/// Combines three logit vectors into the four-term objective.
template <class T>
LossBundle<T> combine_losses(const Tensor<T>& y_mlo, const Tensor<T>& y_cc, const Tensor<T>& y_mv, int label,
                             const LossWeights& w) {
    if (!(w.tau > 0)) throw DomainError("tau must be positive");
    if (!(w.lambda >= 0)) throw DomainError("lambda must be non-negative");
    LossBundle<T> b;
    b.y_mlo = y_mlo;
    b.y_cc = y_cc;
    b.y_mv = y_mv;
    b.tau = w.tau;
    b.lambda = w.lambda;
    b.l_mlo = ce_single(y_mlo, label);
    b.l_cc = ce_single(y_cc, label);
    b.l_mv = ce_single(y_mv, label);
    b.l_md = l_md(y_mlo, y_cc, y_mv, static_cast<T>(w.tau), &b.saturated);
    b.l_overall = add(add(add(b.l_mv, b.l_mlo), b.l_cc), scale(b.l_md, static_cast<T>(w.lambda)));
    return b;
}

/// Three forward passes (mlo, cc, fused) and the four-term objective for one pair.
template <class T>
LossBundle<T> loss_overall(const Image& mlo, const Image& cc, int label, const BackboneConfig& cfg,
                           const ModelState<T>& state, const Adapter<T>& ad, const LossWeights& w) {
    auto y_mlo = forward_singleview(mlo, TokenTag::mlo_patch, cfg, state, ad);
    auto y_cc = forward_singleview(cc, TokenTag::cc_patch, cfg, state, ad);
    auto y_mv = forward_multiview(mlo, cc, cfg, state, ad);
    return combine_losses(y_mlo, y_cc, y_mv, label, w);
}

}  // namespace mvpt
