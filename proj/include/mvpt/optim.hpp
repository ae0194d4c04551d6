#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "mvpt/error.hpp"
#include "mvpt/state.hpp"

namespace mvpt {

/// Linear warm-up from `start` to `base`, then cosine decay to `floor` at `total` steps.
struct LrSchedule {
    double base = 0.01;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
    double start = 1e-6;
    double floor = 0.0;

    double at(std::size_t step) const {
        if (step < warmup_steps)
            return start + (base - start) * static_cast<double>(step) / static_cast<double>(warmup_steps);
        if (total_steps <= warmup_steps) return base;
        const double t = std::min(1.0, static_cast<double>(step - warmup_steps) /
                                           static_cast<double>(total_steps - warmup_steps));
        return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * t));
    }
};

namespace detail {
template <class T>
void check_finite_grads(const ModelState<T>& state) {
    for (const auto& [n, t] : state)
        for (auto g : t.grad())
            if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in '" + n + "'");
}
}  // namespace detail

/// Momentum SGD with decoupled weight decay. Only tensors with requires_grad are touched;
/// a learnable tensor without a gradient is treated as having a zero gradient.
template <class T>
class Sgd {
  public:
    double momentum = 0.9;
    double weight_decay = 0.01;

    Sgd() = default;
    Sgd(double momentum, double weight_decay) : momentum(momentum), weight_decay(weight_decay) {}

    void step(ModelState<T>& state, double lr) {
        detail::check_finite_grads(state);
        for (auto& [n, t] : state.tensors()) {
            if (!t.requires_grad()) continue;
            auto& v = velocity_[n];
            if (v.size() != t.numel()) v.assign(t.numel(), 0.0);
            auto p = t.data();
            auto g = t.grad();
            const bool has = !g.empty();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = has ? static_cast<double>(g[i]) : 0.0;
                v[i] = momentum * v[i] + gi;
                double x = static_cast<double>(p[i]);
                x -= lr * weight_decay * x;
                x -= lr * v[i];
                p[i] = static_cast<T>(x);
            }
        }
    }

  private:
    std::map<std::string, std::vector<double>> velocity_;
};

/// Adam with decoupled weight decay.
template <class T>
class AdamW {
  public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.05;

    AdamW() = default;
    explicit AdamW(double weight_decay) : weight_decay(weight_decay) {}

    void step(ModelState<T>& state, double lr) {
        detail::check_finite_grads(state);
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        for (auto& [n, t] : state.tensors()) {
            if (!t.requires_grad()) continue;
            auto& [m, v] = moments_[n];
            if (m.size() != t.numel()) {
                m.assign(t.numel(), 0.0);
                v.assign(t.numel(), 0.0);
            }
            auto p = t.data();
            auto g = t.grad();
            const bool has = !g.empty();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = has ? static_cast<double>(g[i]) : 0.0;
                m[i] = beta1 * m[i] + (1 - beta1) * gi;
                v[i] = beta2 * v[i] + (1 - beta2) * gi * gi;
                double x = static_cast<double>(p[i]);
                x -= lr * weight_decay * x;
                x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                p[i] = static_cast<T>(x);
            }
        }
    }

    std::size_t steps() const { return t_; }

  private:
    std::size_t t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

}  // namespace mvpt
