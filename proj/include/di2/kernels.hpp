// SPDX-License-Identifier: Apache-2.0
//
// Dense inner loops used by the tensor engine and the codebook.
//
// Every kernel exists twice: `serial::` is the reference implementation that
// tests compare against, `omp::` distributes output rows across OpenMP
// threads. Both share the same per-row body, so each output element is
// produced by one thread with an identical accumulation order and the two
// variants agree bit for bit regardless of thread count.
#pragma once

#include <cstddef>
#include <limits>
#include <span>

namespace di2::kernels {

namespace detail {

// Rows above this much work are worth a parallel region.
inline constexpr std::size_t kParallelWork = 1u << 14;

// C[i,:] (+)= A[i,:] * B           A: m x k, B: k x n
template <class T>
inline void row_nn(std::size_t i, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                   bool accumulate) {
    T* ci = c + i * n;
    if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    }
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
        const T av = ai[p];
        const T* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

// C[i,:] (+)= A[i,:] * B^T         A: m x k, B: n x k
template <class T>
inline void row_nt(std::size_t i, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                   bool accumulate) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
        const T* bj = b + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] = accumulate ? ci[j] + acc : acc;
    }
}

// C[i,:] (+)= A[:,i]^T * B         A: k x m, B: k x n
template <class T>
inline void row_tn(std::size_t i, std::size_t m, std::size_t n, std::size_t k, const T* a,
                   const T* b, T* c, bool accumulate) {
    T* ci = c + i * n;
    if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        const T* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
}

template <class T>
inline double squared_distance(const T* x, const T* z, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(x[j]) - static_cast<double>(z[j]);
        acc += diff * diff;
    }
    return acc;
}

// Lowest index wins ties.
template <class T>
inline void row_nearest(std::size_t i, std::size_t n_codes, std::size_t d, const T* x, const T* z,
                        std::size_t* index, double* distance) {
    const T* xi = x + i * d;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_codes; ++c) {
        const double dist = squared_distance(xi, z + c * d, d);
        if (dist < best_d) {
            best_d = dist;
            best = c;
        }
    }
    index[i] = best;
    if (distance != nullptr) distance[i] = best_d;
}

}  // namespace detail

namespace serial {

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
    for (std::size_t i = 0; i < m; ++i) detail::row_nn(i, n, k, a, b, c, accumulate);
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
    for (std::size_t i = 0; i < m; ++i) detail::row_nt(i, n, k, a, b, c, accumulate);
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
    for (std::size_t i = 0; i < m; ++i) detail::row_tn(i, m, n, k, a, b, c, accumulate);
}

template <class T>
void nearest(std::size_t rows, std::size_t n_codes, std::size_t d, const T* x, const T* z,
             std::size_t* index, double* distance = nullptr) {
    for (std::size_t i = 0; i < rows; ++i) detail::row_nearest(i, n_codes, d, x, z, index, distance);
}

}  // namespace serial

namespace omp {

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > detail::kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
        detail::row_nn(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > detail::kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
        detail::row_nt(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false) {
    const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > detail::kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
        detail::row_tn(static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate);
}

template <class T>
void nearest(std::size_t rows, std::size_t n_codes, std::size_t d, const T* x, const T* z,
             std::size_t* index, double* distance = nullptr) {
    const auto r = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * n_codes * d > detail::kParallelWork)
    for (std::ptrdiff_t i = 0; i < r; ++i)
        detail::row_nearest(static_cast<std::size_t>(i), n_codes, d, x, z, index, distance);
}

}  // namespace omp

}  // namespace di2::kernels
