#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvpt/tensor.hpp"

namespace mvpt {

/// Named parameter tensors, ordered by name.
template <class T>
class ModelState {
  public:
    using Map = std::map<std::string, Tensor<T>>;

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("model state has no tensor '" + name + "'");
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("model state has no tensor '" + name + "'");
        return it->second;
    }

    void set(const std::string& name, Tensor<T> t) { tensors_[name] = std::move(t); }
    void erase(const std::string& name) { tensors_.erase(name); }

    /// Checks that `name` exists with the expected shape.
    const Tensor<T>& expect(const std::string& name, const Shape& shape) const {
        const auto& t = at(name);
        if (t.shape() != shape)
            throw ConfigError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", config expects " +
                              shape_str(shape));
        return t;
    }

    const Map& tensors() const { return tensors_; }
    Map& tensors() { return tensors_; }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    std::size_t size() const { return tensors_.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.numel();
        return n;
    }

    /// Deep copy; gradient flags carried over, gradients dropped.
    ModelState clone() const {
        ModelState out;
        for (const auto& [k, t] : tensors_) out.tensors_[k] = t.clone(t.requires_grad());
        return out;
    }

    template <class U>
    ModelState<U> cast() const {
        ModelState<U> out;
        for (const auto& [k, t] : tensors_) out.set(k, t.template cast<U>(t.requires_grad()));
        return out;
    }

    void zero_grad() {
        for (auto& [_, t] : tensors_) t.zero_grad();
    }

  private:
    Map tensors_;
};

}  // namespace mvpt
