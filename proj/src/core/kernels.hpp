#pragma once

#include <cstddef>
#include <vector>

namespace latefuse::kernels {

// All kernels accumulate into c (c += ...). Loops are ordered so the inner
// loop is a contiguous axpy, which the compiler vectorises without needing
// to reassociate a reduction.

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t p = 0; p < m; ++p) {
        const T* arow = a + p * k;
        const T* brow = b + p * n;
        for (std::size_t i = 0; i < k; ++i) {
            const T av = arow[i];
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    std::vector<T> bt(k * n);
    transpose(n, k, b, bt.data());
    gemm_nn(m, k, n, a, bt.data(), c);
}

}  // namespace latefuse::kernels
