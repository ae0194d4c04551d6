#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpt/attention.hpp"
#include "mvpt/config.hpp"
#include "mvpt/data.hpp"
#include "mvpt/gradcheck.hpp"
#include "mvpt/multiview.hpp"

namespace mvpt {

struct GradCheckEntry {
    std::string name;
    GradCheckReport report;
    bool passed = false;
};

struct GradCheckSummary {
    double tol = 0;
    std::vector<GradCheckEntry> entries;

    bool passed() const {
        return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
    }
    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["tolerance"] = tol;
        j["passed"] = passed();
        j["checks"] = nlohmann::ordered_json::array();
        for (const auto& e : entries)
            j["checks"].push_back({{"name", e.name},
                                   {"passed", e.passed},
                                   {"max_rel_err", e.report.max_rel_err},
                                   {"worst_param", e.report.worst_param},
                                   {"worst_index", e.report.worst_index},
                                   {"analytic", e.report.worst_analytic},
                                   {"numeric", e.report.worst_numeric},
                                   {"coordinates", e.report.checked}});
        return j;
    }
};

/// Ops with a backward rule, in the order they are checked.
inline const std::vector<std::string>& differentiable_ops() {
    static const std::vector<std::string> ops{"add",        "add_bias",     "mul",           "scale",  "sum",
                                              "gelu",       "matmul",       "linear",        "layer_norm",
                                              "softmax_temp", "cross_entropy", "kl_div",     "reshape", "concat",
                                              "narrow",     "gather_rows",  "mean_pool",     "grouped_attention"};
    return ops;
}

namespace detail {

/// sum_i w_i x_i under its own op name, so each op check involves exactly one checked rule.
inline Tensor<double> probe(const Tensor<double>& x, const std::vector<double>& w) {
    double acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += w[i] * x[i];
    auto px = x.impl_ptr();
    return make_result<double>(Shape{}, {acc}, "probe", {px}, [px, w](TensorImpl<double>& o) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * o.grad[0];
    });
}

inline Tensor<double> random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
    std::vector<double> v(numel_of(s));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(s), std::move(v), true);
}

inline std::vector<double> random_weights(Rng& rng, std::size_t n) {
    std::vector<double> w(n);
    for (auto& x : w) x = rng.uniform(-1, 1);
    return w;
}

}  // namespace detail

/// One small instance per differentiable op, each reduced by a fixed random projection.
inline void check_ops(GradCheckSummary& out, const GradCheckOptions& opt) {
    using detail::probe;
    Rng rng(derive_seed(opt.seed, 1));
    auto rt = [&](Shape s, double lo = -1, double hi = 1) { return detail::random_tensor(rng, std::move(s), lo, hi); };
    auto run = [&](const std::string& op, NamedParams params, std::function<Tensor<double>()> build) {
        std::vector<double> w;
        auto f = [&]() {
            auto y = build();
            if (w.empty()) w = detail::random_weights(rng, y.numel());
            return y.rank() == 0 ? y : probe(y, w);
        };
        auto o = opt;
        o.max_coords = 0;
        auto rep = finite_diff_check(f, params, o);
        out.entries.push_back({"op:" + op, rep, rep.passed(out.tol)});
    };

    {
        auto a = rt({3, 4}), b = rt({3, 4});
        run("add", {{"a", a}, {"b", b}}, [=] { return add(a, b); });
    }
    {
        auto x = rt({3, 4}), v = rt({4});
        run("add_bias", {{"x", x}, {"v", v}}, [=] { return add_bias(x, v); });
    }
    {
        auto a = rt({3, 4}), b = rt({3, 4});
        run("mul", {{"a", a}, {"b", b}}, [=] { return mul(a, b); });
    }
    {
        auto x = rt({5});
        run("scale", {{"x", x}}, [=] { return scale(x, 1.7); });
    }
    {
        auto x = rt({2, 3});
        run("sum", {{"x", x}}, [=] { return sum(x); });
    }
    {
        auto x = rt({3, 4}, -3, 3);
        run("gelu", {{"x", x}}, [=] { return gelu(x); });
    }
    {
        auto a = rt({3, 4}), b = rt({4, 5});
        run("matmul", {{"a", a}, {"b", b}}, [=] { return matmul(a, b); });
    }
    {
        auto x = rt({3, 4}), w = rt({4, 5}), b = rt({5});
        run("linear", {{"x", x}, {"w", w}, {"b", b}}, [=] { return linear(x, w, &b); });
    }
    {
        auto x = rt({3, 6}), g = rt({6}), b = rt({6});
        run("layer_norm", {{"x", x}, {"gamma", g}, {"beta", b}}, [=] { return layer_norm(x, g, b); });
    }
    {
        auto x = rt({2, 5}, -2, 2);
        run("softmax_temp", {{"x", x}}, [=] { return softmax_temp(x, 2.0); });
    }
    {
        auto x = rt({3, 4}, -2, 2);
        run("cross_entropy", {{"logits", x}}, [=] {
            static const int labels[3] = {0, 3, 1};
            return cross_entropy(x, std::span<const int>(labels, 3));
        });
    }
    {
        // inputs must stay on the simplex under perturbation, hence the softmax in front
        auto a = rt({5}), b = rt({5});
        run("kl_div", {{"a", a}, {"b", b}}, [=] { return kl_div(softmax_temp(a, 1.0), softmax_temp(b, 1.0)).value; });
    }
    {
        auto x = rt({2, 6});
        run("reshape", {{"x", x}}, [=] { return reshape(x, Shape{3, 4}); });
    }
    {
        auto a = rt({2, 3}), b = rt({1, 3});
        run("concat", {{"a", a}, {"b", b}}, [=] { return concat(std::vector<Tensor<double>>{a, b}, 0); });
    }
    {
        auto x = rt({4, 3});
        run("narrow", {{"x", x}}, [=] { return narrow(x, 1, 1, 2); });
    }
    {
        auto x = rt({4, 3});
        run("gather_rows", {{"x", x}}, [=] { return gather_rows(x, {2, -1, 0, 2}); });
    }
    {
        auto x = rt({5, 3});
        run("mean_pool", {{"x", x}}, [=] { return mean_pool(x, {0, 2, 3}); });
    }
    {
        // 4x4 grid plus two prompt rows, window 2 shifted by 1, with a bias table
        SequenceLayout lay;
        lay.prompt_rows = {0, 1};
        lay.views.push_back({TokenTag::mlo_patch, 2, 4, 4});
        lay.total = 18;
        const auto plan = build_window_plan(lay, 2, 1, true);
        auto qkv = rt({18, 12}), bias = rt({9, 2}, -0.5, 0.5);
        run("grouped_attention", {{"qkv", qkv}, {"bias", bias}},
            [=] { return grouped_attention(qkv, plan, 2, &bias); });
    }
}

/// Loss-level checks on the toy model in 64-bit: the four tuning terms and their sum over
/// the learnable tensors, and the stage-1 cross-entropy over the backbone.
inline void check_losses(GradCheckSummary& out, const RunConfig& c, const GradCheckOptions& opt) {
    const auto& cfg = c.backbone;
    auto subjects = synth_subjects(10 * cfg.num_classes, c.label_scheme(), derive_seed(opt.seed, 2), cfg.image_height);
    const auto& [lat, views] = subjects[1];
    const Image mlo = orient_normalize(views.first), cc = orient_normalize(views.second);
    const int label = lat.label;

    auto stage1 = init_backbone<double>(cfg, derive_seed(opt.seed, 3));
    TuneInit init{c.prompt_length, c.deep_prompts, c.view_specific_prompts, derive_seed(opt.seed, 4)};
    auto state = init_tuning_state(stage1, cfg, init);
    apply_freeze_mask(state, build_freeze_mask(state, Phase::tune));
    // move off the symmetric start so every term has a non-trivial gradient
    Rng rng(derive_seed(opt.seed, 5));
    for (auto& [n, t] : state.tensors())
        if (starts_with(n, "ctx.") || starts_with(n, "head.multi."))
            for (auto& v : t.vec()) v += 0.05 * rng.normal();
    const auto ad = adapter_from_state(state, cfg);
    const auto w = c.loss_weights();

    NamedParams learnable;
    for (const auto& [n, t] : state)
        if (t.requires_grad()) learnable.push_back({n, t});

    auto bundle = [&] { return loss_overall(mlo, cc, label, cfg, state, ad, w); };
    Tensor<double> t_mv, t_z;  // teachers at the current point
    {
        NoGradGuard ng;
        auto b = bundle();
        t_mv = b.y_mv;
        t_z = scale(add(b.y_mlo, b.y_cc), 0.5);
    }
    auto md_frozen = [&](const LossBundle<double>& b) {
        auto z = scale(add(b.y_mlo, b.y_cc), 0.5);
        const double tau = w.tau;
        return scale(add(l_kd(t_z, b.y_mv, tau), l_kd(t_mv, z, tau)), 1.0 / (tau * tau));
    };

    auto check = [&](const std::string& name, std::function<Tensor<double>()> f, const NamedParams& params,
                     std::function<Tensor<double>()> numeric = {}) {
        auto rep = finite_diff_check(f, params, opt, numeric);
        out.entries.push_back({name, rep, rep.passed(out.tol)});
    };
    check("L_mlo", [&] { return bundle().l_mlo; }, learnable);
    check("L_cc", [&] { return bundle().l_cc; }, learnable);
    check("L_mv", [&] { return bundle().l_mv; }, learnable);
    check("L_md", [&] { return bundle().l_md; }, learnable, [&] { return md_frozen(bundle()); });
    check("L_overall", [&] { return bundle().l_overall; }, learnable, [&] {
        auto b = bundle();
        return add(add(add(b.l_mv, b.l_mlo), b.l_cc), scale(md_frozen(b), w.lambda));
    });

    NamedParams backbone;
    for (const auto& [n, t] : stage1) backbone.push_back({n, t});
    check("L_ce_backbone", [&] { return ce_single(forward_backbone(mlo, cfg, stage1).logits, label); }, backbone);
}

/// Every op rule and every loss term; `gradcheck_fault` sign-flips one op's backward rule.
inline GradCheckSummary run_gradcheck(const RunConfig& c) {
    c.validate();
    const auto& ops = differentiable_ops();
    if (!c.gradcheck_fault.empty() && std::find(ops.begin(), ops.end(), c.gradcheck_fault) == ops.end())
        throw ConfigError("gradcheck_fault '" + c.gradcheck_fault + "' is not a differentiable op");
    FaultInjection fault(c.gradcheck_fault);
    GradCheckOptions opt;
    opt.h = c.gradcheck_h;
    opt.max_coords = c.gradcheck_coords;
    opt.seed = derive_seed(c.seed, 7);
    GradCheckSummary out;
    out.tol = c.gradcheck_tol;
    check_ops(out, opt);
    check_losses(out, c, opt);
    return out;
}

}  // namespace mvpt
