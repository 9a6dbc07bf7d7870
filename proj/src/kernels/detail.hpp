#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace nlcnn::detail {

// Batch reductions are split into at most this many contiguous chunks.
inline constexpr std::size_t kReduceChunks = 16;

inline std::size_t chunk_count(std::size_t n) { return std::min(n, kReduceChunks); }
inline std::size_t chunk_begin(std::size_t chunk, std::size_t chunks, std::size_t n) { return chunk * n / chunks; }

// C[m, n] += A[m, k] * B[k, n], all row-major with explicit leading dims.
template <typename T>
void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, std::size_t lda,
                 const T* __restrict b, std::size_t ldb, T* __restrict c, std::size_t ldc) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        T* c0 = c + i * ldc;
        T* c1 = c0 + ldc;
        T* c2 = c1 + ldc;
        T* c3 = c2 + ldc;
        const T* a0 = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const T v0 = a0[p];
            const T v1 = a0[lda + p];
            const T v2 = a0[2 * lda + p];
            const T v3 = a0[3 * lda + p];
            const T* br = b + p * ldb;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) {
                const T bj = br[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        T* ci = c + i * ldc;
        const T* ai = a + i * lda;
        for (std::size_t p = 0; p < k; ++p) {
            const T v = ai[p];
            const T* br = b + p * ldb;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) ci[j] += v * br[j];
        }
    }
}

// C[m, n] += A^T * B where A is stored (k, m) and B is (k, n).
template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, std::size_t lda,
                 const T* __restrict b, std::size_t ldb, T* __restrict c, std::size_t ldc) {
    for (std::size_t p = 0; p < k; ++p) {
        const T* ap = a + p * lda;
        const T* bp = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const T v = ap[i];
            if (v == T(0)) continue;
            T* ci = c + i * ldc;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) ci[j] += v * bp[j];
        }
    }
}

template <typename T>
std::vector<T> transpose(const T* src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
}

// Gathers the 3x3 same-padded neighbourhood of every pixel of one NHWC sample
// into rows of a (h*w, 9*c) matrix.
template <typename T>
void im2col3x3(const T* x, std::size_t h, std::size_t w, std::size_t c, T* cols) {
    const std::size_t row_len = 9 * c;
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            T* row = cols + (i * w + j) * row_len;
            for (std::size_t di = 0; di < 3; ++di) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
                for (std::size_t dj = 0; dj < 3; ++dj) {
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    T* dst = row + (di * 3 + dj) * c;
                    if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                        jj >= static_cast<std::ptrdiff_t>(w)) {
                        std::fill(dst, dst + c, T(0));
                    } else {
                        const T* src = x + (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * c;
                        std::copy(src, src + c, dst);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col3x3: scatter-adds column rows back onto the sample.
template <typename T>
void col2im3x3_add(const T* cols, std::size_t h, std::size_t w, std::size_t c, T* x) {
    const std::size_t row_len = 9 * c;
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const T* row = cols + (i * w + j) * row_len;
            for (std::size_t di = 0; di < 3; ++di) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < 3; ++dj) {
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const T* src = row + (di * 3 + dj) * c;
                    T* dst = x + (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * c;
#pragma omp simd
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                }
            }
        }
    }
}

}  // namespace nlcnn::detail
