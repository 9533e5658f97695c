// SPDX-License-Identifier: Apache-2.0
#include "di2/dac.hpp"

#include <algorithm>
#include <cmath>

#include "di2/kernels.hpp"
#include "di2/ops.hpp"

namespace di2 {

namespace {

std::size_t row_count(const Tensor& f, std::size_t d, const char* who) {
    if (f.shape().back() != d) {
        throw DimensionError(std::string(who) + ": feature rows " + shape_str(f.shape()) +
                             " do not match codeword dimension " + std::to_string(d));
    }
    return f.numel() / d;
}

std::vector<std::size_t> nearest_rows(const Codebook& cb, const Tensor& f, std::vector<double>* dist) {
    const std::size_t d = cb.dim();
    const std::size_t rows = row_count(f, d, "quantize");
    std::vector<std::size_t> idx(rows);
    if (dist != nullptr) dist->assign(rows, 0.0);
    kernels::omp::nearest<float>(rows, cb.size(), d, f.data().data(), cb.codes.data().data(),
                                 idx.data(), dist != nullptr ? dist->data() : nullptr);
    return idx;
}

}  // namespace

Codebook make_codebook(std::size_t n_codes, std::size_t dim, float lambda, std::uint64_t seed,
                       double init_scale) {
    if (n_codes == 0 || dim == 0) throw ContractError("codebook needs positive size and dimension");
    if (!(lambda > 0.f && lambda < 1.f)) throw ContractError("codebook lambda must lie in (0, 1)");
    Rng rng(seed);
    std::vector<float> z(n_codes * dim);
    for (auto& v : z) v = static_cast<float>(rng.normal(0.0, init_scale));
    Codebook cb;
    cb.codes = Tensor({n_codes, dim}, std::move(z), true);
    cb.usage.assign(n_codes, 0.f);
    cb.lambda = lambda;
    return cb;
}

Quantized quantize(const Codebook& cb, const Tensor& features) {
    Quantized q;
    q.indices = nearest_rows(cb, features, nullptr);
    const std::size_t d = cb.dim();
    std::vector<float> out(features.numel());
    const auto z = cb.codes.data();
    for (std::size_t i = 0; i < q.indices.size(); ++i)
        std::copy_n(z.data() + q.indices[i] * d, d, out.data() + i * d);
    q.values = Tensor(features.shape(), std::move(out));
    return q;
}

double updated_usage(double p, std::size_t assigned, std::size_t rows, double lambda) {
    return p * lambda + (static_cast<double>(assigned) / static_cast<double>(rows)) * (1.0 - lambda);
}

double revival_strength(double p, std::size_t n_codes, double lambda) {
    return std::exp(-p * 10.0 * static_cast<double>(n_codes) / (1.0 - lambda));
}

CodebookStepStats codebook_train_step(Codebook& cb, const Tensor& rows, double lr, Rng& rng) {
    if (rows.numel() == 0 || rows.rank() != 2) {
        throw ContractError("codebook_train_step: batch must be a non-empty [R x d] matrix");
    }
    const std::size_t n_codes = cb.size(), d = cb.dim();
    std::vector<double> dist;
    const auto idx = nearest_rows(cb, rows, &dist);
    const std::size_t n_rows = idx.size();

    CodebookStepStats stats;
    // Rows are frozen features; only Z receives gradient.
    cb.codes.zero_grad();
    {
        const auto assigned = ops::gather_rows(cb.codes, idx);
        const auto loss = ops::mse(assigned, ops::stop_gradient(rows));
        stats.loss = loss.item();
        backward(loss);
    }
    auto z = cb.codes.data();
    if (cb.codes.has_grad()) {
        const auto g = cb.codes.grad();
        for (std::size_t i = 0; i < z.size(); ++i) z[i] -= static_cast<float>(lr) * g[i];
    }
    cb.codes.zero_grad();

    stats.counts.assign(n_codes, 0);
    for (auto k : idx) ++stats.counts[k];

    // Cumulative anchor weights over rows.
    std::vector<double> cumulative(n_rows);
    double total = 0.0;
    for (std::size_t i = 0; i < n_rows; ++i) cumulative[i] = (total += dist[i]);

    stats.alpha.assign(n_codes, 0.0);
    stats.anchors.assign(n_codes, 0);
    const auto x = rows.data();
    for (std::size_t k = 0; k < n_codes; ++k) {
        const double p = updated_usage(cb.usage[k], stats.counts[k], n_rows, cb.lambda);
        cb.usage[k] = static_cast<float>(p);
        const double alpha = revival_strength(p, n_codes, cb.lambda);
        stats.alpha[k] = alpha;

        const double u = rng.uniform();
        std::size_t anchor = 0;
        if (total > 0.0) {
            anchor = static_cast<std::size_t>(
                std::upper_bound(cumulative.begin(), cumulative.end(), u * total) - cumulative.begin());
            anchor = std::min(anchor, n_rows - 1);
        } else {
            anchor = std::min(static_cast<std::size_t>(u * static_cast<double>(n_rows)), n_rows - 1);
        }
        stats.anchors[k] = anchor;

        if (!cb.revival || alpha == 0.0) continue;
        const float a = static_cast<float>(alpha);
        for (std::size_t j = 0; j < d; ++j)
            z[k * d + j] = z[k * d + j] * (1.f - a) + x[anchor * d + j] * a;
    }
    return stats;
}

double utilization(const Codebook& cb, const Tensor& features) {
    const auto idx = nearest_rows(cb, features, nullptr);
    std::vector<bool> used(cb.size(), false);
    for (auto k : idx) used[k] = true;
    return static_cast<double>(std::count(used.begin(), used.end(), true)) /
           static_cast<double>(cb.size());
}

double quantization_mse(const Codebook& cb, const Tensor& features) {
    std::vector<double> dist;
    nearest_rows(cb, features, &dist);
    double acc = 0.0;
    for (double v : dist) acc += v;
    return acc / static_cast<double>(features.numel());
}

}  // namespace di2
