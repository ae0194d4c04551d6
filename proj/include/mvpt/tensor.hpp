#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mvpt/error.hpp"

namespace mvpt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

template <class T> struct TensorImpl;

/// One recorded operation. `backward` reads the output gradient and accumulates
/// into the gradients of those inputs that require one.
template <class T>
struct Node {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::function<void(TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty == no gradient
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;  // null for leaves

    bool has_grad() const { return !grad.empty(); }

    /// Gradient buffer, zero-allocated on first use. Only valid when requires_grad.
    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

namespace detail {
/// Name of an op whose backward rule is sign-flipped; empty in normal operation.
/// Used only by the gradient-check mutation test.
inline std::string& fault_op() {
    thread_local std::string op;
    return op;
}
}  // namespace detail

/// Sign-flips the backward rule of `op` for its lifetime.
class FaultInjection {
  public:
    explicit FaultInjection(std::string op) : prev_(detail::fault_op()) { detail::fault_op() = std::move(op); }
    ~FaultInjection() { detail::fault_op() = prev_; }
    FaultInjection(const FaultInjection&) = delete;
    FaultInjection& operator=(const FaultInjection&) = delete;

  private:
    std::string prev_;
};

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

/// Shared handle on a dense row-major array with optional gradient tracking.
/// Copies alias the same storage, like framework tensors do.
template <class T>
class Tensor {
  public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        impl_->data.assign(numel_of(shape), T(0));
        impl_->shape = std::move(shape);
        impl_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        if (numel_of(shape) != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

    static Tensor from_impl(std::shared_ptr<TensorImpl<T>> p) {
        Tensor t;
        t.impl_ = std::move(p);
        return t;
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }
    T& operator[](std::size_t i) { return impl_->data[i]; }
    T operator[](std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_->requires_grad; }
    /// Only meaningful on leaves; derived tensors inherit from their inputs.
    void set_requires_grad(bool r) {
        impl_->requires_grad = r;
        if (!r) impl_->grad.clear();
    }
    bool has_grad() const { return impl_->has_grad(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> grad_mut() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }
    bool is_leaf() const { return !impl_->node; }
    const char* op_name() const { return impl_->node ? impl_->node->op : "leaf"; }

    TensorImpl<T>& impl() const { return *impl_; }
    const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

    /// Same values, no gradient path.
    Tensor detach() const {
        auto p = std::make_shared<TensorImpl<T>>();
        p->shape = impl_->shape;
        p->data = impl_->data;
        return from_impl(std::move(p));
    }

    /// Deep copy of values into a fresh leaf.
    Tensor clone(bool requires_grad = false) const {
        Tensor t = detach();
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    template <class U>
    Tensor<U> cast(bool requires_grad = false) const {
        std::vector<U> d(impl_->data.begin(), impl_->data.end());
        return Tensor<U>(impl_->shape, std::move(d), requires_grad);
    }

  private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

/// Creates the output of an operation, wiring a graph node when any input needs a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                      std::function<void(TensorImpl<T>&)> backward) {
    Tensor<T> out(std::move(shape), std::move(data));
    bool need = grad_enabled() &&
                std::any_of(inputs.begin(), inputs.end(), [](const auto& p) { return p && p->requires_grad; });
    if (need) {
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        out.impl().requires_grad = true;
        out.impl().node = std::move(node);
    }
    return out;
}

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across calls;
/// intermediate gradients and graph nodes are released as the sweep passes them.
template <class T>
void backward(const Tensor<T>& root) {
    if (root.numel() != 1)
        throw ContractError("backward() needs a scalar root, got shape " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Owning handles: releasing a node may drop the last other reference to its inputs.
    std::vector<std::shared_ptr<TensorImpl<T>>> order;
    std::unordered_set<TensorImpl<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<std::shared_ptr<TensorImpl<T>>, std::size_t>> stack;
    stack.emplace_back(root.impl_ptr(), 0);
    seen.insert(&root.impl());
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (cur->node && next < cur->node->inputs.size()) {
            auto in = cur->node->inputs[next++];
            if (in && in->requires_grad && in->node && !seen.count(in.get())) {
                seen.insert(in.get());
                stack.emplace_back(std::move(in), 0);
            }
            continue;
        }
        order.push_back(std::move(cur));
        stack.pop_back();
    }

    root.impl().grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* t = it->get();
        if (t->node && t->has_grad()) {
            const auto& fault = detail::fault_op();
            if (!fault.empty() && fault == t->node->op) {
                std::vector<TensorImpl<T>*> ins;
                for (auto& in : t->node->inputs)
                    if (in && std::find(ins.begin(), ins.end(), in.get()) == ins.end()) ins.push_back(in.get());
                std::vector<std::vector<T>> before;
                for (auto* in : ins) before.push_back(in->grad);
                t->node->backward(*t);
                for (std::size_t k = 0; k < ins.size(); ++k) {
                    auto* in = ins[k];
                    for (std::size_t i = 0; i < in->grad.size(); ++i) {
                        const T b = i < before[k].size() ? before[k][i] : T(0);
                        in->grad[i] = b - (in->grad[i] - b);
                    }
                }
            } else {
                t->node->backward(*t);
            }
        }
        if (t->node) {
            t->node.reset();
            t->grad.clear();
            t->grad.shrink_to_fit();
        }
        it->reset();
    }
}

}  // namespace mvpt
