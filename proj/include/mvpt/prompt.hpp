#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mvpt/attention.hpp"
#include "mvpt/rng.hpp"
#include "mvpt/state.hpp"
#include "mvpt/swin_config.hpp"

namespace mvpt {

template <class T>
struct TokenSequence {
    Tensor<T> tokens;  // [n, d]
    SequenceLayout layout;

    std::size_t width() const { return tokens.dim(1); }
    std::vector<TokenTag> tags() const { return layout.tags(); }
};

/// Deep prompts: one [p, d_i] matrix per transformer layer. A shallow set holds only the
/// layer-0 matrix, whose outputs are carried through the first stage instead of replaced.
template <class T>
struct PromptSet {
    std::size_t length = 0;
    std::vector<Tensor<T>> layers;
    bool deep = true;

    bool empty() const { return length == 0 || layers.empty(); }
};

inline std::string prompt_name(std::size_t layer, const std::string& group = "prompt.") {
    return group + "layer" + std::to_string(layer);
}

/// Uniform in [-a, a] with a = sqrt(6 / (p + d_i)).
template <class T>
PromptSet<T> init_prompts(const BackboneConfig& cfg, std::size_t p, std::uint64_t seed, bool deep = true) {
    cfg.validate();
    PromptSet<T> ps;
    ps.length = p;
    ps.deep = deep;
    if (p == 0) return ps;
    Rng rng(seed);
    for (std::size_t i = 0; i < (deep ? cfg.num_layers() : 1); ++i) {
        const std::size_t d = cfg.layer_width(i);
        const double a = std::sqrt(6.0 / static_cast<double>(p + d));
        std::vector<T> v(p * d);
        for (auto& x : v) x = static_cast<T>(rng.uniform(-a, a));
        ps.layers.emplace_back(Shape{p, d}, std::move(v), true);
    }
    return ps;
}

/// Shares the prompt tensors of a state (empty set when it holds none).
template <class T>
PromptSet<T> prompts_from_state(const ModelState<T>& state, const BackboneConfig& cfg,
                                const std::string& group = "prompt.") {
    PromptSet<T> ps;
    if (!state.contains(prompt_name(0, group))) return ps;
    ps.length = state.at(prompt_name(0, group)).dim(0);
    ps.deep = state.contains(prompt_name(1, group)) || cfg.num_layers() == 1;
    for (std::size_t i = 0; i < (ps.deep ? cfg.num_layers() : 1); ++i)
        ps.layers.push_back(state.expect(prompt_name(i, group), Shape{ps.length, cfg.layer_width(i)}));
    return ps;
}

template <class T>
void install_prompts(ModelState<T>& state, const PromptSet<T>& ps, const std::string& group = "prompt.") {
    for (std::size_t i = 0; i < ps.layers.size(); ++i) state.set(prompt_name(i, group), ps.layers[i]);
}

/// Deep-prompt injection before layer `layer`: any prompt rows are dropped and a fresh
/// copy of P_layer is placed in front of every view's patch tokens. `cc_prompts`, when
/// given, supplies the matrices for cc-tagged views instead.
template <class T>
TokenSequence<T> inject(std::size_t layer, const PromptSet<T>& prompts, const TokenSequence<T>& seq,
                        const PromptSet<T>* cc_prompts = nullptr) {
    if (prompts.empty()) return seq;
    auto pick = [&](const ViewGrid& v) -> const Tensor<T>& {
        const PromptSet<T>& ps = (cc_prompts && v.tag == TokenTag::cc_patch) ? *cc_prompts : prompts;
        if (layer >= ps.layers.size() || ps.length != prompts.length)
            throw ConfigError("no prompts of length " + std::to_string(prompts.length) + " for layer " + std::to_string(layer));
        const Tensor<T>& p = ps.layers[layer];
        if (p.dim(1) != seq.width())
            throw ConfigError("prompt width " + std::to_string(p.dim(1)) + " at layer " + std::to_string(layer) +
                              " does not match token width " + std::to_string(seq.width()));
        return p;
    };
    std::vector<Tensor<T>> pieces;
    SequenceLayout layout;
    std::size_t off = 0;
    for (const auto& v : seq.layout.views) {
        pieces.push_back(pick(v));
        for (std::size_t k = 0; k < prompts.length; ++k) layout.prompt_rows.push_back(off + k);
        off += prompts.length;
        pieces.push_back(narrow(seq.tokens, 0, v.offset, v.count()));
        ViewGrid g = v;
        g.offset = off;
        layout.views.push_back(g);
        off += v.count();
    }
    layout.total = off;
    return {concat(pieces, 0), std::move(layout)};
}

// ---------------------------------------------------------------------------
// freeze mask

enum class Phase { pretrain, tune };

/// tensor name -> learnable
using FreezeMask = std::map<std::string, bool>;

inline bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

inline FreezeMask build_freeze_mask(const std::vector<std::string>& names, Phase phase) {
    FreezeMask mask;
    for (const auto& n : names) {
        bool learnable;
        if (starts_with(n, "backbone."))
            learnable = phase == Phase::pretrain;
        else if (starts_with(n, "prompt.") || starts_with(n, "ctx.") || starts_with(n, "head.single.") ||
                 starts_with(n, "head.multi."))
            learnable = true;
        else
            throw AuditError("tensor '" + n + "' belongs to no known parameter group");
        if (!mask.emplace(n, learnable).second) throw AuditError("tensor '" + n + "' listed twice");
    }
    return mask;
}

template <class T>
FreezeMask build_freeze_mask(const ModelState<T>& state, Phase phase) {
    std::vector<std::string> names;
    for (const auto& [n, _] : state) names.push_back(n);
    return build_freeze_mask(names, phase);
}

/// Sets requires_grad from the mask; the mask must cover the state exactly.
template <class T>
void apply_freeze_mask(ModelState<T>& state, const FreezeMask& mask) {
    if (mask.size() != state.size()) throw AuditError("freeze mask does not cover the model state");
    for (auto& [n, t] : state.tensors()) {
        auto it = mask.find(n);
        if (it == mask.end()) throw AuditError("freeze mask has no entry for '" + n + "'");
        t.set_requires_grad(it->second);
    }
}

inline double trainable_fraction(const ShapeList& shapes, const FreezeMask& mask) {
    std::size_t learn = 0, total = 0;
    for (const auto& [n, s] : shapes) {
        auto it = mask.find(n);
        if (it == mask.end()) throw AuditError("freeze mask has no entry for '" + n + "'");
        total += numel_of(s);
        if (it->second) learn += numel_of(s);
    }
    return total ? static_cast<double>(learn) / static_cast<double>(total) : 0.0;
}

template <class T>
double trainable_fraction(const ModelState<T>& state, const FreezeMask& mask) {
    ShapeList shapes;
    for (const auto& [n, t] : state) shapes.push_back({n, t.shape()});
    return trainable_fraction(shapes, mask);
}

}  // namespace mvpt
