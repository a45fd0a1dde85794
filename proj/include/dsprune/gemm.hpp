#pragma once

#include <algorithm>
#include <cstddef>

namespace dsprune::detail {

// Small dense matrix kernels shared by the conv and dense layers. All three
// variants reduce each output element over k in ascending order, executed by
// exactly one thread, so results are bit-identical for any OpenMP thread
// count. Parallelism is over disjoint rows of C.

/// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N]
template <class T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
        T* c = C + static_cast<std::size_t>(i) * ldc;
        if (!accumulate) std::fill(c, c + N, T(0));
        const T* a = A + static_cast<std::size_t>(i) * lda;
        for (int k = 0; k < K; ++k) {
            const T av = a[k];
            const T* b = B + static_cast<std::size_t>(k) * ldb;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// Dot product with 16 independent accumulator lanes folded in a fixed order.
// The lane split lets the compiler vectorize while keeping the reduction
// order a constant of the implementation.
template <class T>
T dot_lanes(const T* a, const T* b, int K) {
    T acc[16] = {};
    int k = 0;
    for (; k + 16 <= K; k += 16) {
        for (int u = 0; u < 16; ++u) acc[u] += a[k + u] * b[k + u];
    }
    T tail = T(0);
    for (; k < K; ++k) tail += a[k] * b[k];
    for (int step = 8; step >= 1; step /= 2) {
        for (int u = 0; u < step; ++u) acc[u] += acc[u + step];
    }
    return acc[0] + tail;
}

/// C[M,N] = (accumulate ? C : 0) + A[M,K] * B^T   with B stored [N,K]
template <class T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
        const T* a = A + static_cast<std::size_t>(i) * lda;
        T* c = C + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < N; ++j) {
            const T acc = dot_lanes(a, B + static_cast<std::size_t>(j) * ldb, K);
            c[j] = accumulate ? c[j] + acc : acc;
        }
    }
}

/// C[M,N] = (accumulate ? C : 0) + A^T * B   with A stored [K,M], B stored [K,N]
template <class T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc,
             bool accumulate = false) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
        T* c = C + static_cast<std::size_t>(i) * ldc;
        if (!accumulate) std::fill(c, c + N, T(0));
        for (int k = 0; k < K; ++k) {
            const T av = A[static_cast<std::size_t>(k) * lda + i];
            const T* b = B + static_cast<std::size_t>(k) * ldb;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

}  // namespace dsprune::detail
