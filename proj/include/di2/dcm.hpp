// SPDX-License-Identifier: Apache-2.0
//
// Depth completion: predicts the depth token set from RGB tokens.
//
// k learnable query tokens P start the stack (Q_0 = P). Each layer runs
// single-head scaled dot-product attention with the current queries as Q and
// concat(Q_i, f_rgb) along the token axis as both K and V, then an FFN
// (d -> ffn -> d, ReLU); both sub-blocks are residual. Q_N is the predicted
// depth token set.
//
// The MLP predictor is the ablation that replaces this module: a two-layer
// perceptron from mean-pooled RGB tokens to all k x d outputs.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "di2/ops.hpp"

namespace di2 {

template <class T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

struct DcmShape {
    std::size_t tokens = 16;  // k, must equal the depth token count
    std::size_t dim = 16;     // d
    std::size_t layers = 2;
    std::size_t ffn_mult = 4;
};

template <class T>
struct BasicDcmLayer {
    BasicTensor<T> wq, wk, wv, wo;  // [d x d]
    BasicTensor<T> ffn_in, ffn_in_bias;    // [d x ffn], [ffn]
    BasicTensor<T> ffn_out, ffn_out_bias;  // [ffn x d], [d]
};

template <class T>
struct BasicDcmParams {
    BasicTensor<T> queries;  // P, [k x d]
    std::vector<BasicDcmLayer<T>> layers;

    std::size_t tokens() const { return queries.dim(0); }
    std::size_t dim() const { return queries.dim(1); }
    NamedTensors<T> named() const;
};
using DcmParams = BasicDcmParams<float>;

// `query_init` seeds P (typically the RGB position tags, so query i starts
// matched to patch i); small Gaussian noise is added on top.
DcmParams make_dcm(const DcmShape& shape, std::uint64_t seed, const Tensor& query_init);

// Residual identity: W_o and both FFN output maps (and bias) zeroed, so the
// stack returns P exactly.
void zero_output_maps(DcmParams& params);

// f_rgb: [B x m x d] -> [B x k x d]. When `attention` is non-null, each
// layer's attention weights ([B x k x (k+m)]) are appended to it.
template <class T>
BasicTensor<T> dcm_forward(const BasicDcmParams<T>& params, const BasicTensor<T>& f_rgb,
                           std::vector<BasicTensor<T>>* attention = nullptr);

// Batch mean of the per-timestep squared error || DCM(P, sg(f_rgb)) - sg(f_depth) ||^2.
// Both feature inputs are detached, so only DCM parameters receive gradient.
template <class T>
BasicTensor<T> align_loss(const BasicDcmParams<T>& params, const BasicTensor<T>& f_rgb,
                          const BasicTensor<T>& f_depth);

template <class T>
struct BasicMlpPredictor {
    BasicTensor<T> w1, b1;  // [d x h], [h]
    BasicTensor<T> w2, b2;  // [h x k*d], [k*d]
    std::size_t tokens = 0;

    NamedTensors<T> named() const;
};
using MlpPredictor = BasicMlpPredictor<float>;

MlpPredictor make_mlp_predictor(std::size_t tokens, std::size_t dim, std::size_t hidden,
                                std::uint64_t seed);

// f_rgb: [B x m x d] -> [B x k x d] from the token mean only.
template <class T>
BasicTensor<T> mlp_forward(const BasicMlpPredictor<T>& params, const BasicTensor<T>& f_rgb);

template <class T>
BasicTensor<T> mlp_align_loss(const BasicMlpPredictor<T>& params, const BasicTensor<T>& f_rgb,
                              const BasicTensor<T>& f_depth);

// Batch mean of per-sample squared norm: sum((pred - target)^2) / B.
template <class T>
BasicTensor<T> batch_squared_error(const BasicTensor<T>& pred, const BasicTensor<T>& target);

template <class U>
BasicDcmParams<U> dcm_cast(const DcmParams& p) {
    BasicDcmParams<U> out;
    out.queries = tensor_cast<U>(p.queries);
    for (const auto& l : p.layers) {
        out.layers.push_back({tensor_cast<U>(l.wq), tensor_cast<U>(l.wk), tensor_cast<U>(l.wv),
                              tensor_cast<U>(l.wo), tensor_cast<U>(l.ffn_in),
                              tensor_cast<U>(l.ffn_in_bias), tensor_cast<U>(l.ffn_out),
                              tensor_cast<U>(l.ffn_out_bias)});
    }
    return out;
}

template <class U>
BasicMlpPredictor<U> mlp_cast(const MlpPredictor& p) {
    return {tensor_cast<U>(p.w1), tensor_cast<U>(p.b1), tensor_cast<U>(p.w2), tensor_cast<U>(p.b2),
            p.tokens};
}

}  // namespace di2
