#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mvpt/kernels.hpp"
#include "mvpt/ops.hpp"

namespace mvpt {

enum class TokenTag : std::uint8_t { prompt = 0, mlo_patch = 1, cc_patch = 2 };

/// Patch tokens of one view occupy rows [offset, offset + rows*cols) in row-major grid order.
struct ViewGrid {
    TokenTag tag = TokenTag::mlo_patch;
    std::size_t offset = 0;
    std::size_t rows = 0, cols = 0;
    std::size_t count() const { return rows * cols; }
};

/// Token bookkeeping shared by attention planning, merging and pooling.
struct SequenceLayout {
    std::size_t total = 0;
    std::vector<std::size_t> prompt_rows;
    std::vector<ViewGrid> views;

    std::vector<std::size_t> patch_rows() const {
        std::vector<std::size_t> r;
        for (const auto& v : views)
            for (std::size_t i = 0; i < v.count(); ++i) r.push_back(v.offset + i);
        return r;
    }
    std::vector<TokenTag> tags() const {
        std::vector<TokenTag> t(total, TokenTag::prompt);
        for (const auto& v : views)
            for (std::size_t i = 0; i < v.count(); ++i) t[v.offset + i] = v.tag;
        return t;
    }
};

/// One softmax neighbourhood: each query row attends over the listed key rows.
struct AttnGroup {
    std::vector<std::uint32_t> q;
    std::vector<std::uint32_t> k;
    std::vector<std::uint8_t> allowed;      // q.size() x k.size(); empty means all allowed
    std::vector<std::int32_t> bias_index;   // q.size() x k.size() into the bias table, -1 for none; empty means none
};

struct AttentionPlan {
    std::size_t tokens = 0;
    std::vector<AttnGroup> groups;
};

inline std::size_t padded_extent(std::size_t n, std::size_t window) { return (n + window - 1) / window * window; }

/// Window slot -> grid row-major index (or -1 for padding) after the cyclic shift.
/// Slots are ordered window by window, row-major inside each window.
inline std::vector<std::int64_t> window_slot_index(std::size_t rows, std::size_t cols, std::size_t window,
                                                   std::size_t shift) {
    const std::size_t hp = padded_extent(rows, window), wp = padded_extent(cols, window);
    const std::size_t nwr = hp / window, nwc = wp / window;
    std::vector<std::int64_t> idx;
    idx.reserve(hp * wp);
    for (std::size_t wr = 0; wr < nwr; ++wr)
        for (std::size_t wc = 0; wc < nwc; ++wc)
            for (std::size_t a = 0; a < window; ++a)
                for (std::size_t b = 0; b < window; ++b) {
                    const std::size_t r = (wr * window + a + shift) % hp;
                    const std::size_t c = (wc * window + b + shift) % wp;
                    idx.push_back(r < rows && c < cols ? static_cast<std::int64_t>(r * cols + c) : -1);
                }
    return idx;
}

namespace detail {
// Region label of a shifted-frame coordinate; tokens from different regions never attend to each other.
inline std::size_t shift_region(std::size_t pos, std::size_t padded, std::size_t window, std::size_t shift) {
    if (shift == 0) return 0;
    if (pos < padded - window) return 0;
    if (pos < padded - shift) return 1;
    return 2;
}
}  // namespace detail

/// Windowed attention plan: every view is partitioned on its own grid, prompts are extra keys
/// for every window, and prompt queries attend over the whole sequence.
inline AttentionPlan build_window_plan(const SequenceLayout& layout, std::size_t window, std::size_t shift,
                                       bool relative_bias) {
    if (window == 0) throw ConfigError("window size must be positive");
    if (shift >= window) throw ConfigError("shift must be smaller than the window");
    AttentionPlan plan;
    plan.tokens = layout.total;
    const std::size_t side = 2 * window - 1;
    for (const auto& v : layout.views) {
        const std::size_t hp = padded_extent(v.rows, window), wp = padded_extent(v.cols, window);
        const auto slots = window_slot_index(v.rows, v.cols, window, shift);
        const std::size_t per = window * window;
        for (std::size_t w = 0; w < slots.size() / per; ++w) {
            const std::size_t wr = w / (wp / window), wc = w % (wp / window);
            AttnGroup g;
            std::vector<std::size_t> region, lr, lc;
            for (std::size_t s = 0; s < per; ++s) {
                const auto gi = slots[w * per + s];
                if (gi < 0) continue;
                const std::size_t a = s / window, b = s % window;
                g.q.push_back(static_cast<std::uint32_t>(v.offset + static_cast<std::size_t>(gi)));
                region.push_back(3 * detail::shift_region(wr * window + a, hp, window, shift) +
                                 detail::shift_region(wc * window + b, wp, window, shift));
                lr.push_back(a);
                lc.push_back(b);
            }
            if (g.q.empty()) continue;
            g.k = g.q;
            for (auto p : layout.prompt_rows) g.k.push_back(static_cast<std::uint32_t>(p));
            const std::size_t nq = g.q.size(), nk = g.k.size();
            bool any_masked = false;
            g.allowed.assign(nq * nk, 1);
            for (std::size_t i = 0; i < nq; ++i)
                for (std::size_t j = 0; j < nq; ++j)
                    if (region[i] != region[j]) {
                        g.allowed[i * nk + j] = 0;
                        any_masked = true;
                    }
            if (!any_masked) g.allowed.clear();
            if (relative_bias) {
                g.bias_index.assign(nq * nk, -1);
                for (std::size_t i = 0; i < nq; ++i)
                    for (std::size_t j = 0; j < nq; ++j)
                        g.bias_index[i * nk + j] =
                            static_cast<std::int32_t>((lr[i] + window - 1 - lr[j]) * side + (lc[i] + window - 1 - lc[j]));
            }
            plan.groups.push_back(std::move(g));
        }
    }
    if (!layout.prompt_rows.empty()) {
        AttnGroup g;
        for (auto p : layout.prompt_rows) g.q.push_back(static_cast<std::uint32_t>(p));
        for (std::size_t i = 0; i < layout.total; ++i) g.k.push_back(static_cast<std::uint32_t>(i));
        plan.groups.push_back(std::move(g));
    }
    return plan;
}

/// Multi-head attention evaluated group by group. `qkv` is [n, 3d] with the query, key and
/// value projections side by side; `bias_table`, when given, is [(2w-1)^2, heads].
template <class T>
Tensor<T> grouped_attention(const Tensor<T>& qkv, const AttentionPlan& plan, std::size_t heads,
                            const Tensor<T>* bias_table = nullptr) {
    if (qkv.rank() != 2 || qkv.dim(1) % 3 != 0)
        throw DimensionError("grouped_attention: qkv must be [n,3d], got " + shape_str(qkv.shape()));
    const std::size_t n = qkv.dim(0), d = qkv.dim(1) / 3;
    if (heads == 0 || d % heads != 0)
        throw ConfigError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
    if (plan.tokens != n)
        throw DimensionError("grouped_attention: plan covers " + std::to_string(plan.tokens) + " tokens, input has " +
                             std::to_string(n));
    if (bias_table && (bias_table->rank() != 2 || bias_table->dim(1) != heads))
        throw DimensionError("grouped_attention: bias table " + shape_str(bias_table->shape()));
    const std::size_t hd = d / heads, ld = 3 * d;
    const T sc = T(1) / std::sqrt(static_cast<T>(hd));
    const T* src = qkv.vec().data();

    std::vector<T> out(n * d, T(0));
    // softmax weights per group and head, kept for the backward pass
    std::vector<std::vector<T>> probs;
    probs.reserve(plan.groups.size() * heads);
    std::vector<T> qh, kt, vh, s, o;
    for (const auto& g : plan.groups) {
        const std::size_t nq = g.q.size(), nk = g.k.size();
        for (std::size_t h = 0; h < heads; ++h) {
            qh.resize(nq * hd);
            kt.resize(hd * nk);
            vh.resize(nk * hd);
            for (std::size_t i = 0; i < nq; ++i)
                for (std::size_t e = 0; e < hd; ++e) qh[i * hd + e] = src[g.q[i] * ld + h * hd + e];
            for (std::size_t j = 0; j < nk; ++j)
                for (std::size_t e = 0; e < hd; ++e) {
                    kt[e * nk + j] = src[g.k[j] * ld + d + h * hd + e];
                    vh[j * hd + e] = src[g.k[j] * ld + 2 * d + h * hd + e];
                }
            s.resize(nq * nk);
            kernels::gemm_nn(nq, nk, hd, qh.data(), kt.data(), s.data(), false);
            for (std::size_t i = 0; i < nq; ++i) {
                T* row = s.data() + i * nk;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < nk; ++j) {
                    row[j] *= sc;
                    if (!g.bias_index.empty() && bias_table && g.bias_index[i * nk + j] >= 0)
                        row[j] += (*bias_table)[static_cast<std::size_t>(g.bias_index[i * nk + j]) * heads + h];
                    if (g.allowed.empty() || g.allowed[i * nk + j]) mx = std::max(mx, row[j]);
                }
                T z = 0;
                for (std::size_t j = 0; j < nk; ++j) {
                    const bool ok = g.allowed.empty() || g.allowed[i * nk + j];
                    row[j] = ok ? std::exp(row[j] - mx) : T(0);
                    z += row[j];
                }
                const T inv = z > T(0) ? T(1) / z : T(0);
                for (std::size_t j = 0; j < nk; ++j) row[j] *= inv;
            }
            o.resize(nq * hd);
            kernels::gemm_nn(nq, hd, nk, s.data(), vh.data(), o.data(), false);
            for (std::size_t i = 0; i < nq; ++i)
                for (std::size_t e = 0; e < hd; ++e) out[g.q[i] * d + h * hd + e] = o[i * hd + e];
            probs.push_back(s);
        }
    }

    auto px = qkv.impl_ptr();
    auto pb = bias_table ? bias_table->impl_ptr() : nullptr;
    return make_result<T>(Shape{n, d}, std::move(out), "grouped_attention", {px, pb},
                          [px, pb, groups = plan.groups, probs = std::move(probs), heads, d, hd,
                           ld, sc](TensorImpl<T>& og) {
                              const T* x = px->data.data();
                              T* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
                              T* gb = (pb && pb->requires_grad) ? pb->grad_buffer().data() : nullptr;
                              std::vector<T> qh, kh, vh, dout, dp, ds, tmp, scratch;
                              std::size_t pi = 0;
                              for (const auto& g : groups) {
                                  const std::size_t nq = g.q.size(), nk = g.k.size();
                                  for (std::size_t h = 0; h < heads; ++h, ++pi) {
                                      const auto& P = probs[pi];
                                      qh.resize(nq * hd);
                                      kh.resize(nk * hd);
                                      vh.resize(nk * hd);
                                      dout.resize(nq * hd);
                                      for (std::size_t i = 0; i < nq; ++i)
                                          for (std::size_t e = 0; e < hd; ++e) {
                                              qh[i * hd + e] = x[g.q[i] * ld + h * hd + e];
                                              dout[i * hd + e] = og.grad[g.q[i] * d + h * hd + e];
                                          }
                                      for (std::size_t j = 0; j < nk; ++j)
                                          for (std::size_t e = 0; e < hd; ++e) {
                                              kh[j * hd + e] = x[g.k[j] * ld + d + h * hd + e];
                                              vh[j * hd + e] = x[g.k[j] * ld + 2 * d + h * hd + e];
                                          }
                                      dp.resize(nq * nk);
                                      kernels::gemm_nt(nq, nk, hd, dout.data(), vh.data(), dp.data(), false, scratch);
                                      ds.resize(nq * nk);
                                      for (std::size_t i = 0; i < nq; ++i) {
                                          T dot = 0;
                                          for (std::size_t j = 0; j < nk; ++j) dot += dp[i * nk + j] * P[i * nk + j];
                                          for (std::size_t j = 0; j < nk; ++j)
                                              ds[i * nk + j] = P[i * nk + j] * (dp[i * nk + j] - dot);
                                      }
                                      if (gb && !g.bias_index.empty())
                                          for (std::size_t k = 0; k < nq * nk; ++k)
                                              if (g.bias_index[k] >= 0)
                                                  gb[static_cast<std::size_t>(g.bias_index[k]) * heads + h] += ds[k];
                                      if (!gx) continue;
                                      // dV = P^T dO
                                      tmp.resize(nk * hd);
                                      kernels::gemm_tn(nk, hd, nq, P.data(), dout.data(), tmp.data(), false);
                                      for (std::size_t j = 0; j < nk; ++j)
                                          for (std::size_t e = 0; e < hd; ++e)
                                              gx[g.k[j] * ld + 2 * d + h * hd + e] += tmp[j * hd + e];
                                      // dK = sc * dS^T Q
                                      kernels::gemm_tn(nk, hd, nq, ds.data(), qh.data(), tmp.data(), false);
                                      for (std::size_t j = 0; j < nk; ++j)
                                          for (std::size_t e = 0; e < hd; ++e)
                                              gx[g.k[j] * ld + d + h * hd + e] += sc * tmp[j * hd + e];
                                      // dQ = sc * dS K
                                      tmp.resize(nq * hd);
                                      kernels::gemm_nn(nq, hd, nk, ds.data(), kh.data(), tmp.data(), false);
                                      for (std::size_t i = 0; i < nq; ++i)
                                          for (std::size_t e = 0; e < hd; ++e)
                                              gx[g.q[i] * ld + h * hd + e] += sc * tmp[i * hd + e];
                                  }
                              }
                          });
}

/// Splits a grid of tokens [rows*cols, d] into windows [num_windows, window*window, d].
/// Padding slots hold zero tokens; `pad_mask` marks them.
template <class T>
struct WindowBlocks {
    Tensor<T> blocks;
    std::vector<bool> pad_mask;
    std::size_t num_windows = 0;
};

template <class T>
WindowBlocks<T> window_partition(const Tensor<T>& grid_tokens, std::size_t rows, std::size_t cols,
                                 std::size_t window, std::size_t shift = 0) {
    if (grid_tokens.rank() != 2 || grid_tokens.dim(0) != rows * cols)
        throw DimensionError("window_partition: tokens " + shape_str(grid_tokens.shape()) + " do not form a " +
                             std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    auto idx = window_slot_index(rows, cols, window, shift);
    WindowBlocks<T> wb;
    wb.num_windows = idx.size() / (window * window);
    for (auto i : idx) wb.pad_mask.push_back(i < 0);
    const std::size_t d = grid_tokens.dim(1);
    wb.blocks = reshape(gather_rows(grid_tokens, std::move(idx)), Shape{wb.num_windows, window * window, d});
    return wb;
}

template <class T>
Tensor<T> window_reverse(const Tensor<T>& blocks, std::size_t rows, std::size_t cols, std::size_t window,
                         std::size_t shift = 0) {
    auto idx = window_slot_index(rows, cols, window, shift);
    if (blocks.rank() != 3 || blocks.dim(0) * blocks.dim(1) != idx.size())
        throw DimensionError("window_reverse: blocks " + shape_str(blocks.shape()) + " do not match the grid");
    std::vector<std::int64_t> inverse(rows * cols, -1);
    for (std::size_t s = 0; s < idx.size(); ++s)
        if (idx[s] >= 0) inverse[static_cast<std::size_t>(idx[s])] = static_cast<std::int64_t>(s);
    const std::size_t d = blocks.dim(2);
    return gather_rows(reshape(blocks, Shape{idx.size(), d}), std::move(inverse));
}

}  // namespace mvpt
