// SPDX-License-Identifier: Apache-2.0
#include "di2/dcm.hpp"

#include <cmath>

#include "di2/rng.hpp"

namespace di2 {

namespace {

Tensor gaussian(Shape shape, Rng& rng, double stddev) {
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
    return Tensor(std::move(shape), std::move(v), true);
}

// [B x n x d] * [d x e] as one flat matmul.
template <class T>
BasicTensor<T> token_linear(const BasicTensor<T>& x, const BasicTensor<T>& w) {
    const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
    const auto flat = ops::matmul(ops::reshape(x, {b * n, d}), w);
    return ops::reshape(flat, {b, n, w.dim(1)});
}

template <class T>
void require_tokens(const BasicTensor<T>& f, std::size_t d, const char* who) {
    if (f.rank() != 3 || f.dim(2) != d) {
        throw DimensionError(std::string(who) + ": expected [B x m x " + std::to_string(d) +
                             "] tokens, got " + shape_str(f.shape()));
    }
}

}  // namespace

template <class T>
NamedTensors<T> BasicDcmParams<T>::named() const {
    NamedTensors<T> out{{"dcm.queries", queries}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto p = "dcm.layer" + std::to_string(i) + ".";
        const auto& l = layers[i];
        out.insert(out.end(), {{p + "wq", l.wq}, {p + "wk", l.wk}, {p + "wv", l.wv}, {p + "wo", l.wo},
                               {p + "ffn_in", l.ffn_in}, {p + "ffn_in_bias", l.ffn_in_bias},
                               {p + "ffn_out", l.ffn_out}, {p + "ffn_out_bias", l.ffn_out_bias}});
    }
    return out;
}

namespace {
constexpr float kQkGain = 2.0f;
}  // namespace

DcmParams make_dcm(const DcmShape& shape, std::uint64_t seed, const Tensor& query_init) {
    const std::size_t d = shape.dim, h = shape.dim * shape.ffn_mult;
    if (query_init.shape() != Shape{shape.tokens, d}) {
        throw DimensionError("make_dcm: query init " + shape_str(query_init.shape()) +
                             " does not match [k x d]");
    }
    Rng rng(seed);
    DcmParams p;
    p.queries = gaussian({shape.tokens, d}, rng, 0.02);
    for (std::size_t i = 0; i < p.queries.numel(); ++i) p.queries.data()[i] += query_init.data()[i];
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < shape.layers; ++i) {
        BasicDcmLayer<float> l;
        // Query/key maps start at kQkGain * I so attention begins sharply
        // matched on the position tags; a random start plateaus for epochs.
        // The draws are kept so the remaining weights do not shift.
        l.wq = gaussian({d, d}, rng, 0.1 * sd);
        l.wk = gaussian({d, d}, rng, 0.1 * sd);
        for (Tensor* t : {&l.wq, &l.wk}) {
            auto v = t->data();
            for (std::size_t j = 0; j < d * d; ++j) v[j] = j % (d + 1) == 0 ? kQkGain : 0.f;
        }
        l.wv = gaussian({d, d}, rng, sd);
        l.wo = gaussian({d, d}, rng, 0.5 * sd);
        l.ffn_in = gaussian({d, h}, rng, sd);
        l.ffn_in_bias = Tensor::zeros({h}, true);
        l.ffn_out = gaussian({h, d}, rng, 0.5 / std::sqrt(static_cast<double>(h)));
        l.ffn_out_bias = Tensor::zeros({d}, true);
        p.layers.push_back(std::move(l));
    }
    return p;
}

void zero_output_maps(DcmParams& params) {
    for (auto& l : params.layers) {
        for (Tensor* t : {&l.wo, &l.ffn_out, &l.ffn_out_bias})
            for (auto& v : t->data()) v = 0.f;
    }
}

template <class T>
BasicTensor<T> dcm_forward(const BasicDcmParams<T>& params, const BasicTensor<T>& f_rgb,
                           std::vector<BasicTensor<T>>* attention) {
    const std::size_t d = params.dim();
    require_tokens(f_rgb, d, "dcm_forward");
    const std::size_t batch = f_rgb.dim(0);
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

    BasicTensor<T> q = ops::repeat_batch(params.queries, batch);
    for (const auto& layer : params.layers) {
        const auto kv = ops::concat_tokens(q, f_rgb);
        const auto queries = token_linear(q, layer.wq);
        const auto keys = token_linear(kv, layer.wk);
        const auto values = token_linear(kv, layer.wv);
        const auto scores = ops::scale(ops::bmm(queries, ops::transpose_batched(keys)), inv_sqrt_d);
        const auto weights = ops::softmax_rows(scores);
        if (attention != nullptr) attention->push_back(weights);
        const auto attended = token_linear(ops::bmm(weights, values), layer.wo);
        q = ops::add(q, attended);
        const auto hidden = ops::relu(ops::add_bias(token_linear(q, layer.ffn_in), layer.ffn_in_bias));
        q = ops::add(q, ops::add_bias(token_linear(hidden, layer.ffn_out), layer.ffn_out_bias));
    }
    return q;
}

template <class T>
BasicTensor<T> batch_squared_error(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    const T per_sample = static_cast<T>(pred.numel()) / static_cast<T>(pred.dim(0));
    return ops::scale(ops::mse(pred, target), per_sample);
}

template <class T>
BasicTensor<T> align_loss(const BasicDcmParams<T>& params, const BasicTensor<T>& f_rgb,
                          const BasicTensor<T>& f_depth) {
    const auto pred = dcm_forward(params, ops::stop_gradient(f_rgb));
    if (pred.shape() != f_depth.shape()) {
        throw DimensionError("align_loss: prediction " + shape_str(pred.shape()) +
                             " does not match depth tokens " + shape_str(f_depth.shape()));
    }
    return batch_squared_error(pred, ops::stop_gradient(f_depth));
}

template <class T>
NamedTensors<T> BasicMlpPredictor<T>::named() const {
    return {{"mlp.w1", w1}, {"mlp.b1", b1}, {"mlp.w2", w2}, {"mlp.b2", b2}};
}

MlpPredictor make_mlp_predictor(std::size_t tokens, std::size_t dim, std::size_t hidden,
                                std::uint64_t seed) {
    Rng rng(seed);
    MlpPredictor p;
    p.tokens = tokens;
    p.w1 = gaussian({dim, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(dim)));
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = gaussian({hidden, tokens * dim}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.b2 = Tensor::zeros({tokens * dim}, true);
    return p;
}

template <class T>
BasicTensor<T> mlp_forward(const BasicMlpPredictor<T>& params, const BasicTensor<T>& f_rgb) {
    require_tokens(f_rgb, params.w1.dim(0), "mlp_forward");
    const std::size_t batch = f_rgb.dim(0), d = f_rgb.dim(2);
    const auto pooled = ops::mean_tokens(f_rgb);
    const auto hidden = ops::relu(ops::add_bias(ops::matmul(pooled, params.w1), params.b1));
    const auto out = ops::add_bias(ops::matmul(hidden, params.w2), params.b2);
    return ops::reshape(out, {batch, params.tokens, d});
}

template <class T>
BasicTensor<T> mlp_align_loss(const BasicMlpPredictor<T>& params, const BasicTensor<T>& f_rgb,
                              const BasicTensor<T>& f_depth) {
    const auto pred = mlp_forward(params, ops::stop_gradient(f_rgb));
    if (pred.shape() != f_depth.shape()) {
        throw DimensionError("mlp_align_loss: prediction " + shape_str(pred.shape()) +
                             " does not match depth tokens " + shape_str(f_depth.shape()));
    }
    return batch_squared_error(pred, ops::stop_gradient(f_depth));
}

#define DI2_INSTANTIATE_DCM(T)                                                                   \
    template struct BasicDcmParams<T>;                                                           \
    template struct BasicMlpPredictor<T>;                                                        \
    template BasicTensor<T> dcm_forward(const BasicDcmParams<T>&, const BasicTensor<T>&,         \
                                        std::vector<BasicTensor<T>>*);                           \
    template BasicTensor<T> align_loss(const BasicDcmParams<T>&, const BasicTensor<T>&,          \
                                       const BasicTensor<T>&);                                   \
    template BasicTensor<T> mlp_forward(const BasicMlpPredictor<T>&, const BasicTensor<T>&);     \
    template BasicTensor<T> mlp_align_loss(const BasicMlpPredictor<T>&, const BasicTensor<T>&,   \
                                           const BasicTensor<T>&);                               \
    template BasicTensor<T> batch_squared_error(const BasicTensor<T>&, const BasicTensor<T>&);

DI2_INSTANTIATE_DCM(float)
DI2_INSTANTIATE_DCM(double)

#undef DI2_INSTANTIATE_DCM

}  // namespace di2
