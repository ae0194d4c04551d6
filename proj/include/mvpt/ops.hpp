#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mvpt/kernels.hpp"
#include "mvpt/tensor.hpp"

namespace mvpt {

namespace detail {

template <class T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank_at_least(const Shape& s, std::size_t r, const char* op) {
    if (s.size() < r)
        throw DimensionError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got " +
                             shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    return make_result<T>(a.shape(), std::move(out), "add", {pa, pb}, [pa, pb](TensorImpl<T>& o) {
        for (auto* p : {pa.get(), pb.get()}) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

/// x[..., d] + v[d], broadcast over leading axes.
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& v) {
    detail::require_rank_at_least(x.shape(), 1, "add_bias");
    const std::size_t d = x.shape().back();
    if (v.rank() != 1 || v.dim(0) != d)
        throw DimensionError("add_bias: bias " + shape_str(v.shape()) + " does not match " + shape_str(x.shape()));
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] + v[j];
    auto px = x.impl_ptr(), pv = v.impl_ptr();
    return make_result<T>(x.shape(), std::move(out), "add_bias", {px, pv}, [px, pv, rows, d](TensorImpl<T>& o) {
        if (px->requires_grad) {
            auto& g = px->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (pv->requires_grad) {
            auto& g = pv->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    return make_result<T>(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb](TensorImpl<T>& o) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->data[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    auto px = x.impl_ptr();
    return make_result<T>(x.shape(), std::move(out), "scale", {px}, [px, s](TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (auto v : x.data()) acc += v;
    auto px = x.impl_ptr();
    return make_result<T>(Shape{}, {acc}, "sum", {px}, [px](TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        for (auto& v : g) v += o.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
    auto px = x.impl_ptr();
    return make_result<T>(x.shape(), std::move(out), "gelu", {px}, [px, inv_sqrt2](TensorImpl<T>& o) {
        const T inv_sqrt2pi = T(0.5) * std::numbers::inv_sqrtpi_v<T> * std::numbers::sqrt2_v<T>;
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T v = px->data[i];
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
            g[i] += o.grad[i] * (cdf + v * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra

/// Batched matrix product with numpy-style broadcasting over leading axes.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2])
        throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    const std::size_t M = sa[sa.size() - 2], K = sa.back(), N = sb.back();

    Shape ba(sa.begin(), sa.end() - 2), bb(sb.begin(), sb.end() - 2);
    const std::size_t nb = std::max(ba.size(), bb.size());
    Shape batch(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        std::size_t ea = i + ba.size() >= nb ? ba[i + ba.size() - nb] : 1;
        std::size_t eb = i + bb.size() >= nb ? bb[i + bb.size() - nb] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw DimensionError("matmul: batch extents not broadcastable " + shape_str(sa) + " and " +
                                 shape_str(sb));
        batch[i] = std::max(ea, eb);
    }
    const std::size_t nbatch = numel_of(batch);
    std::vector<std::size_t> off_a(nbatch), off_b(nbatch);
    for (std::size_t flat = 0; flat < nbatch; ++flat) {
        std::size_t rem = flat, ia = 0, ib = 0, stride_a = 1, stride_b = 1;
        for (std::size_t ax = nb; ax-- > 0;) {
            std::size_t idx = rem % batch[ax];
            rem /= batch[ax];
            if (ax + ba.size() >= nb) {
                std::size_t e = ba[ax + ba.size() - nb];
                ia += (e == 1 ? 0 : idx) * stride_a;
                stride_a *= e;
            }
            if (ax + bb.size() >= nb) {
                std::size_t e = bb[ax + bb.size() - nb];
                ib += (e == 1 ? 0 : idx) * stride_b;
                stride_b *= e;
            }
        }
        off_a[flat] = ia * M * K;
        off_b[flat] = ib * K * N;
    }

    Shape out_shape = batch;
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<T> out(nbatch * M * N);
    for (std::size_t i = 0; i < nbatch; ++i)
        kernels::gemm_nn(M, N, K, a.vec().data() + off_a[i], b.vec().data() + off_b[i], out.data() + i * M * N,
                         false);

    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    return make_result<T>(std::move(out_shape), std::move(out), "matmul", {pa, pb},
                          [pa, pb, off_a, off_b, M, N, K, nbatch](TensorImpl<T>& o) {
                              std::vector<T> scratch;
                              for (std::size_t i = 0; i < nbatch; ++i) {
                                  const T* go = o.grad.data() + i * M * N;
                                  if (pa->requires_grad)
                                      kernels::gemm_nt(M, K, N, go, pb->data.data() + off_b[i],
                                                       pa->grad_buffer().data() + off_a[i], true, scratch);
                                  if (pb->requires_grad)
                                      kernels::gemm_tn(K, N, M, pa->data.data() + off_a[i], go,
                                                       pb->grad_buffer().data() + off_b[i], true);
                              }
                          });
}

/// x[..., in] * W[in, out] (+ b[out]).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias = nullptr) {
    detail::require_rank_at_least(x.shape(), 1, "linear");
    if (w.rank() != 2 || x.shape().back() != w.dim(0))
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const std::size_t in = w.dim(0), outd = w.dim(1), rows = x.numel() / in;
    if (bias && (bias->rank() != 1 || bias->dim(0) != outd))
        throw DimensionError("linear: bias " + shape_str(bias->shape()) + " vs weight " + shape_str(w.shape()));
    std::vector<T> out(rows * outd);
    if (bias)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < outd; ++j) out[r * outd + j] = (*bias)[j];
    kernels::gemm_nn(rows, outd, in, x.vec().data(), w.vec().data(), out.data(), bias != nullptr);
    Shape s = x.shape();
    s.back() = outd;
    auto px = x.impl_ptr(), pw = w.impl_ptr();
    auto pb = bias ? bias->impl_ptr() : nullptr;
    return make_result<T>(std::move(s), std::move(out), "linear", {px, pw, pb},
                          [px, pw, pb, rows, in, outd](TensorImpl<T>& o) {
                              if (px->requires_grad) {
                                  std::vector<T> scratch;
                                  kernels::gemm_nt(rows, in, outd, o.grad.data(), pw->data.data(),
                                                   px->grad_buffer().data(), true, scratch);
                              }
                              if (pw->requires_grad)
                                  kernels::gemm_tn(in, outd, rows, px->data.data(), o.grad.data(),
                                                   pw->grad_buffer().data(), true);
                              if (pb && pb->requires_grad) {
                                  auto& g = pb->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < outd; ++j) g[j] += o.grad[r * outd + j];
                              }
                          });
}

// ---------------------------------------------------------------------------
// normalization and softmax family

/// Normalizes the last axis to zero mean and unit variance, then applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    detail::require_rank_at_least(x.shape(), 1, "layer_norm");
    const std::size_t d = x.shape().back();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw DimensionError("layer_norm: affine " + shape_str(gamma.shape()) + " does not match axis of " +
                             shape_str(x.shape()));
    const std::size_t rows = x.numel() / d;
    std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.vec().data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (xr[j] - mu) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    auto px = x.impl_ptr(), pg = gamma.impl_ptr(), pb = beta.impl_ptr();
    return make_result<T>(x.shape(), std::move(out), "layer_norm", {px, pg, pb},
                          [px, pg, pb, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](TensorImpl<T>& o) {
                              if (px->requires_grad) {
                                  auto& g = px->grad_buffer();
                                  std::vector<T> dh(d);
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      T m1 = 0, m2 = 0;
                                      for (std::size_t j = 0; j < d; ++j) {
                                          dh[j] = o.grad[r * d + j] * pg->data[j];
                                          m1 += dh[j];
                                          m2 += dh[j] * xhat[r * d + j];
                                      }
                                      m1 /= static_cast<T>(d);
                                      m2 /= static_cast<T>(d);
                                      for (std::size_t j = 0; j < d; ++j)
                                          g[r * d + j] += rstd[r] * (dh[j] - m1 - xhat[r * d + j] * m2);
                                  }
                              }
                              if (pg->requires_grad) {
                                  auto& g = pg->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < d; ++j)
                                          g[j] += o.grad[r * d + j] * xhat[r * d + j];
                              }
                              if (pb->requires_grad) {
                                  auto& g = pb->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < d; ++j) g[j] += o.grad[r * d + j];
                              }
                          });
}

/// softmax(t / tau) over the last axis.
template <class T>
Tensor<T> softmax_temp(const Tensor<T>& t, T tau) {
    if (!(tau > T(0))) throw DomainError("softmax_temp: temperature must be positive, got " + std::to_string(tau));
    detail::require_rank_at_least(t.shape(), 1, "softmax_temp");
    const std::size_t c = t.shape().back(), rows = t.numel() / c;
    std::vector<T> out(t.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = t.vec().data() + r * c;
        T* y = out.data() + r * c;
        T mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        T z = 0;
        for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp((x[j] - mx) / tau));
        for (std::size_t j = 0; j < c; ++j) y[j] /= z;
    }
    auto pt = t.impl_ptr();
    return make_result<T>(t.shape(), std::move(out), "softmax_temp", {pt}, [pt, rows, c, tau](TensorImpl<T>& o) {
        auto& g = pt->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = o.data.data() + r * c;
            const T* gy = o.grad.data() + r * c;
            T dot = 0;
            for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (gy[j] - dot) / tau;
        }
    });
}

/// Mean over rows of -log softmax(logits)[label].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [b,c], got " + shape_str(logits.shape()));
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(b));
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= c)
            throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0," + std::to_string(c) + ")");
    std::vector<T> prob(b * c);
    T loss = 0;
    for (std::size_t r = 0; r < b; ++r) {
        const T* x = logits.vec().data() + r * c;
        T mx = x[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        T z = 0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(x[j] - mx);
        const T lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) prob[r * c + j] = std::exp(x[j] - lse);
        loss += lse - x[labels[r]];
    }
    loss /= static_cast<T>(b);
    std::vector<int> lab(labels.begin(), labels.end());
    auto pl = logits.impl_ptr();
    return make_result<T>(Shape{}, {loss}, "cross_entropy", {pl},
                          [pl, prob = std::move(prob), lab = std::move(lab), b, c](TensorImpl<T>& o) {
                              auto& g = pl->grad_buffer();
                              const T s = o.grad[0] / static_cast<T>(b);
                              for (std::size_t r = 0; r < b; ++r)
                                  for (std::size_t j = 0; j < c; ++j)
                                      g[r * c + j] += s * (prob[r * c + j] - (static_cast<int>(j) == lab[r] ? T(1) : T(0)));
                          });
}

/// KL divergence with its saturation flag (set when q had to be clamped).
template <class T>
struct KlResult {
    Tensor<T> value;
    bool saturated = false;
};

/// D_KL(p || q) = sum p log(p/q) for probability vectors; 0 log 0 := 0, q clamped at 1e-8.
template <class T>
KlResult<T> kl_div(const Tensor<T>& p, const Tensor<T>& q) {
    detail::require_same_shape(p.shape(), q.shape(), "kl_div");
    if (p.rank() != 1) throw DimensionError("kl_div: expects probability vectors, got " + shape_str(p.shape()));
    const T tol = T(1e-5);
    for (const auto* t : {&p, &q}) {
        T s = 0;
        for (auto v : t->data()) {
            if (v < T(0)) throw DomainError("kl_div: negative probability entry");
            s += v;
        }
        if (std::abs(s - T(1)) > tol) throw DomainError("kl_div: input not on the simplex (sum " + std::to_string(s) + ")");
    }
    const T eps = T(1e-8);
    const std::size_t n = p.numel();
    std::vector<T> qc(n);
    bool saturated = false;
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        qc[i] = q[i];
        if (q[i] < eps) {
            if (p[i] > T(0)) saturated = true;
            qc[i] = eps;
        }
        if (p[i] > T(0)) acc += p[i] * (std::log(p[i]) - std::log(qc[i]));
    }
    auto pp = p.impl_ptr(), pq = q.impl_ptr();
    auto value = make_result<T>(Shape{}, {acc}, "kl_div", {pp, pq}, [pp, pq, qc = std::move(qc), eps](TensorImpl<T>& o) {
        const T go = o.grad[0];
        if (pp->requires_grad) {
            auto& g = pp->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (pp->data[i] > T(0)) g[i] += go * (std::log(pp->data[i]) - std::log(qc[i]) + T(1));
        }
        if (pq->requires_grad) {
            auto& g = pq->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (pq->data[i] >= eps) g[i] -= go * pp->data[i] / qc[i];
        }
    });
    return {std::move(value), saturated};
}

// ---------------------------------------------------------------------------
// structural

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto px = x.impl_ptr();
    return make_result<T>(std::move(shape), x.vec(), "reshape", {px}, [px](TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

namespace detail {
// outer = product of extents before axis, inner = product after.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Concatenation along `axis`; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis = 0) {
    if (xs.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = xs[0].shape();
    if (axis >= s0.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
        if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0) + " on axis " + std::to_string(axis));
        out_shape[axis] += s[axis];
    }
    std::size_t outer, inner;
    detail::axis_split(s0, axis, outer, inner);
    const std::size_t total_row = out_shape[axis] * inner;
    std::vector<T> out(numel_of(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const std::size_t w = x.shape()[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.vec().data() + o * w, w, out.data() + o * total_row + off);
        off += w;
    }
    std::vector<detail::ImplPtr<T>> inputs;
    std::vector<std::size_t> widths;
    for (const auto& x : xs) {
        inputs.push_back(x.impl_ptr());
        widths.push_back(x.shape()[axis] * inner);
    }
    auto ins = inputs;
    return make_result<T>(std::move(out_shape), std::move(out), "concat", std::move(inputs),
                          [ins, offsets, widths, outer, total_row](TensorImpl<T>& o) {
                              for (std::size_t k = 0; k < ins.size(); ++k) {
                                  if (!ins[k]->requires_grad) continue;
                                  auto& g = ins[k]->grad_buffer();
                                  const std::size_t w = widths[k];
                                  for (std::size_t r = 0; r < outer; ++r)
                                      for (std::size_t j = 0; j < w; ++j)
                                          g[r * w + j] += o.grad[r * total_row + offsets[k] + j];
                              }
                          });
}

/// The sub-range [start, start+len) along `axis`.
template <class T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = x.shape();
    if (axis >= s.size() || len == 0 || start + len > s[axis])
        throw DimensionError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") on axis " + std::to_string(axis) + " of " + shape_str(s));
    std::size_t outer, inner;
    detail::axis_split(s, axis, outer, inner);
    Shape out_shape = s;
    out_shape[axis] = len;
    const std::size_t src_row = s[axis] * inner, w = len * inner, off = start * inner;
    std::vector<T> out(outer * w);
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.vec().data() + o * src_row + off, w, out.data() + o * w);
    auto px = x.impl_ptr();
    return make_result<T>(std::move(out_shape), std::move(out), "narrow", {px},
                          [px, outer, src_row, w, off](TensorImpl<T>& o) {
                              auto& g = px->grad_buffer();
                              for (std::size_t r = 0; r < outer; ++r)
                                  for (std::size_t j = 0; j < w; ++j) g[r * src_row + off + j] += o.grad[r * w + j];
                          });
}

/// Inverse of concat: pieces of the given extents along `axis`.
template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t axis, const std::vector<std::size_t>& sizes) {
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    if (axis >= x.rank() || total != x.shape()[axis])
        throw DimensionError("split: sizes do not cover axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
    std::vector<Tensor<T>> out;
    std::size_t start = 0;
    for (auto s : sizes) {
        out.push_back(narrow(x, axis, start, s));
        start += s;
    }
    return out;
}

/// Rows of x[n, d] picked by index; index -1 yields a zero row.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::int64_t> idx) {
    if (x.rank() != 2) throw DimensionError("gather_rows: expects [n,d], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    for (auto i : idx)
        if (i < -1 || i >= static_cast<std::int64_t>(n))
            throw IndexError("gather_rows: row " + std::to_string(i) + " outside [0," + std::to_string(n) + ")");
    std::vector<T> out(idx.size() * d, T(0));
    for (std::size_t r = 0; r < idx.size(); ++r)
        if (idx[r] >= 0) std::copy_n(x.vec().data() + idx[r] * d, d, out.data() + r * d);
    auto px = x.impl_ptr();
    const std::size_t rows = idx.size();
    return make_result<T>(Shape{rows, d}, std::move(out), "gather_rows", {px}, [px, idx = std::move(idx), d](TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r)
            if (idx[r] >= 0)
                for (std::size_t j = 0; j < d; ++j) g[idx[r] * d + j] += o.grad[r * d + j];
    });
}

/// Mean of the selected rows of x[n, d]; returns [d].
template <class T>
Tensor<T> mean_pool(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
    if (x.rank() != 2) throw DimensionError("mean_pool: expects [n,d], got " + shape_str(x.shape()));
    if (rows.empty()) throw DimensionError("mean_pool: no rows selected");
    const std::size_t d = x.dim(1);
    std::vector<T> out(d, T(0));
    for (auto r : rows) {
        if (r >= x.dim(0)) throw IndexError("mean_pool: row " + std::to_string(r) + " out of range");
        for (std::size_t j = 0; j < d; ++j) out[j] += x[r * d + j];
    }
    const T inv = T(1) / static_cast<T>(rows.size());
    for (auto& v : out) v *= inv;
    auto px = x.impl_ptr();
    return make_result<T>(Shape{d}, std::move(out), "mean_pool", {px}, [px, rows, d, inv](TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        for (auto r : rows)
            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += o.grad[j] * inv;
    });
}

}  // namespace mvpt
