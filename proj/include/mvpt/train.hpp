#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mvpt/data.hpp"
#include "mvpt/multiview.hpp"
#include "mvpt/optim.hpp"

namespace mvpt {

struct ViewSample {
    const Image* image = nullptr;
    int label = 0;
};

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + "; step aborted");
}

/// One AdamW step on the mean cross-entropy of a batch of single views. Returns the loss.
template <class T>
double pretrain_step(std::span<const ViewSample> batch, const BackboneConfig& cfg, ModelState<T>& state,
                     AdamW<T>& opt, double lr) {
    if (batch.empty()) throw ContractError("empty batch");
    state.zero_grad();
    Tensor<T> total;
    for (const auto& s : batch) {
        auto out = forward_backbone(*s.image, cfg, state);
        auto l = ce_single(out.logits, s.label);
        total = total.defined() ? add(total, l) : l;
    }
    total = scale(total, T(1) / static_cast<T>(batch.size()));
    const double loss = static_cast<double>(total.item());
    require_finite(loss, "pretraining loss");
    backward(total);
    opt.step(state, lr);
    return loss;
}

struct StepLosses {
    double l_mlo = 0, l_cc = 0, l_mv = 0, l_md = 0, l_overall = 0;
    bool saturated = false;
};

/// One SGD step on the batch mean of the four-term objective. Frozen tensors receive no
/// gradient because they never require one.
template <class T>
StepLosses tune_step(std::span<const PairSample* const> batch, const BackboneConfig& cfg, ModelState<T>& state,
                     Sgd<T>& opt, double lr, const LossWeights& w) {
    if (batch.empty()) throw ContractError("empty batch");
    state.zero_grad();
    const auto ad = adapter_from_state(state, cfg);
    StepLosses out;
    Tensor<T> total;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto* s : batch) {
        auto b = loss_overall(s->mlo, s->cc, s->label, cfg, state, ad, w);
        out.l_mlo += inv * b.l_mlo.item();
        out.l_cc += inv * b.l_cc.item();
        out.l_mv += inv * b.l_mv.item();
        out.l_md += inv * b.l_md.item();
        out.saturated = out.saturated || b.saturated;
        total = total.defined() ? add(total, b.l_overall) : b.l_overall;
    }
    total = scale(total, static_cast<T>(inv));
    out.l_overall = static_cast<double>(total.item());
    require_finite(out.l_overall, "tuning loss");
    backward(total);
    opt.step(state, lr);
    return out;
}

}  // namespace mvpt
