#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <iterator>
#include <vector>

// Register-tiled loop GEMMs. Each output element is summed over k in increasing order,
// so results do not depend on the tiling and stay bit-reproducible.

namespace mvpt::kernels {

namespace detail {

template <class T>
struct Vec64;
template <>
struct Vec64<float> {
    typedef float type __attribute__((vector_size(64)));
};
template <>
struct Vec64<double> {
    typedef double type __attribute__((vector_size(64)));
};

/// C[i0:i0+R, j0:j0+NV*L] (+)= sum_k a(i,k) b(k,j) with a(i,k) = A[i*si + k*sk], L lanes per vector.
template <class T, std::size_t R, std::size_t NV>
inline void tile(std::size_t K, std::size_t N, const T* __restrict A, std::size_t si, std::size_t sk,
                 const T* __restrict B, T* __restrict C, bool accumulate) {
    using V = typename Vec64<T>::type;
    constexpr std::size_t L = 64 / sizeof(T);
    V acc[R][NV];
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t v = 0; v < NV; ++v) {
            if (accumulate)
                std::memcpy(&acc[r][v], C + r * N + v * L, sizeof(V));
            else
                acc[r][v] = V{};
        }
    for (std::size_t k = 0; k < K; ++k) {
        V b[NV];
        std::memcpy(b, B + k * N, sizeof(b));
        for (std::size_t r = 0; r < R; ++r) {
            const T av = A[r * si + k * sk];
            for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * b[v];
        }
    }
    for (std::size_t r = 0; r < R; ++r) std::memcpy(C + r * N, acc[r], sizeof(acc[r]));
}

/// Same contract as `tile`, plain arrays; the compiler vectorizes the j loop.
template <class T, std::size_t R, std::size_t W>
inline void tile_wide(std::size_t K, std::size_t N, const T* __restrict A, std::size_t si, std::size_t sk,
                      const T* __restrict B, T* __restrict C, bool accumulate) {
    T acc[R][W];
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < W; ++j) acc[r][j] = accumulate ? C[r * N + j] : T(0);
    for (std::size_t k = 0; k < K; ++k) {
        const T* __restrict b = B + k * N;
        for (std::size_t r = 0; r < R; ++r) {
            const T av = A[r * si + k * sk];
            for (std::size_t j = 0; j < W; ++j) acc[r][j] += av * b[j];
        }
    }
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < W; ++j) C[r * N + j] = acc[r][j];
}

/// Remainder block of `rows` x `cols` with runtime extents.
template <class T>
inline void edge(std::size_t rows, std::size_t cols, std::size_t K, std::size_t N, const T* A, std::size_t si,
                 std::size_t sk, const T* B, T* C, bool accumulate) {
    T tmp[64 / sizeof(T)];
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j0 = 0; j0 < cols; j0 += std::size(tmp)) {
            const std::size_t w = std::min(std::size(tmp), cols - j0);
            T* c = C + r * N + j0;
            for (std::size_t j = 0; j < w; ++j) tmp[j] = accumulate ? c[j] : T(0);
            for (std::size_t k = 0; k < K; ++k) {
                const T av = A[r * si + k * sk];
                const T* b = B + k * N + j0;
                for (std::size_t j = 0; j < w; ++j) tmp[j] += av * b[j];
            }
            for (std::size_t j = 0; j < w; ++j) c[j] = tmp[j];
        }
}

template <class T, std::size_t R>
inline void row_panel(std::size_t rows, std::size_t N, std::size_t K, const T* A, std::size_t si, std::size_t sk,
                      const T* B, T* C, bool accumulate) {
    constexpr std::size_t V = 64 / sizeof(T);
    std::size_t j = 0;
    if (rows == R) {
        for (; j + 2 * V <= N; j += 2 * V) tile_wide<T, R, 2 * V>(K, N, A, si, sk, B + j, C + j, accumulate);
        for (; j + V <= N; j += V) tile<T, R, 1>(K, N, A, si, sk, B + j, C + j, accumulate);
    }
    if (j < N) edge(rows, N - j, K, N, A, si, sk, B + j, C + j, accumulate);
}

template <class T>
void gemm_strided(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t si, std::size_t sk, const T* B,
                  T* C, bool accumulate) {
    constexpr std::size_t R = 4;
    for (std::size_t i = 0; i < M; i += R) {
        const std::size_t rows = std::min(R, M - i);
        row_panel<T, R>(rows, N, K, A + i * si, si, sk, B, C + i * N, accumulate);
    }
}

}  // namespace detail

/// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    detail::gemm_strided(M, N, K, A, K, 1, B, C, accumulate);
}

/// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate) {
    detail::gemm_strided(M, N, K, A, 1, M, B, C, accumulate);
}

template <class T>
void transpose(std::size_t R, std::size_t Ccols, const T* src, T* dst) {
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < Ccols; ++c) dst[c * R + r] = src[r * Ccols + c];
}

/// C[M,N] (+)= A[M,K] * B[N,K]^T, via an explicit transpose of B.
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C, bool accumulate,
             std::vector<T>& scratch) {
    scratch.resize(N * K);
    transpose(N, K, B, scratch.data());
    gemm_nn(M, N, K, A, scratch.data(), C, accumulate);
}

}  // namespace mvpt::kernels
