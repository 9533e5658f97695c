// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. No implicit broadcasting: bias addition, batch
// repetition, and token concatenation are explicit ops. Gradients accumulate
// additively when a tensor feeds several consumers.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "di2/tensor.hpp"

namespace di2::ops {

template <class T> using TensorT = BasicTensor<T>;

// While a trace is installed on the current thread, relu folds the sign
// pattern of every input it sees into `signature`. Gradient checks use it to
// spot finite-difference probes that straddle a kink.
struct KinkTrace {
    std::uint64_t signature = 1469598103934665603ull;
    KinkTrace* previous;
    KinkTrace();
    ~KinkTrace();
    KinkTrace(const KinkTrace&) = delete;
    KinkTrace& operator=(const KinkTrace&) = delete;
};
KinkTrace* active_kink_trace();

// [m x k] * [k x n] -> [m x n]
template <class T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// [B x m x k] * [B x k x n] -> [B x m x n]
template <class T> TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b);
// [m x n] -> [n x m]
template <class T> TensorT<T> transpose(const TensorT<T>& a);
// [B x m x n] -> [B x n x m]
template <class T> TensorT<T> transpose_batched(const TensorT<T>& a);
template <class T> TensorT<T> reshape(const TensorT<T>& a, Shape shape);

template <class T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <class T> TensorT<T> scale(const TensorT<T>& a, T s);
// Adds a length-n bias to every row of a tensor whose last extent is n.
template <class T> TensorT<T> add_bias(const TensorT<T>& a, const TensorT<T>& bias);
template <class T> TensorT<T> relu(const TensorT<T>& a);

// Softmax over the last axis, stabilised by row-max subtraction.
template <class T> TensorT<T> softmax_rows(const TensorT<T>& x);

// [B x m x d] ++ [B x n x d] -> [B x (m+n) x d]
template <class T> TensorT<T> concat_tokens(const TensorT<T>& a, const TensorT<T>& b);
// [B x n_i] ... -> [B x sum n_i]
template <class T> TensorT<T> concat_cols(std::span<const TensorT<T>> parts);
// [k x d] -> [B x k x d]
template <class T> TensorT<T> repeat_batch(const TensorT<T>& p, std::size_t batch);
// Row lookup: table [R x d], ids -> [ids.size() x d]. Gradient scatter-adds.
template <class T> TensorT<T> gather_rows(const TensorT<T>& table, std::span<const std::size_t> ids);
// [B x k x d] -> [B x d]
template <class T> TensorT<T> mean_tokens(const TensorT<T>& x);

// Mean of squared differences over all elements -> [1].
template <class T> TensorT<T> mse(const TensorT<T>& pred, const TensorT<T>& target);
template <class T> TensorT<T> sum(const TensorT<T>& x);

// Value passthrough with no path back to the input.
template <class T> TensorT<T> stop_gradient(const TensorT<T>& x);

}  // namespace di2::ops
