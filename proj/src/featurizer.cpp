// SPDX-License-Identifier: Apache-2.0
#include "di2/featurizer.hpp"

#include <cmath>

#include "di2/binio.hpp"
#include "di2/kernels.hpp"
#include "di2/rng.hpp"
#include "di2/synthgym.hpp"

namespace di2 {

std::uint64_t FrozenEncoder::checksum() const { return binio::fnv1a_floats(weight.data()); }

FrozenEncoder make_frozen_encoder(std::uint64_t seed, std::size_t d0) {
    if (d0 == 0 || d0 > static_cast<std::size_t>(kPatchDim)) {
        throw ContractError("frozen encoder width must lie in [1, " + std::to_string(kPatchDim) + "]");
    }
    Rng rng(seed);
    const std::size_t rows = kPatchDim;
    // Modified Gram-Schmidt over columns, in double.
    std::vector<std::vector<double>> cols(d0, std::vector<double>(rows));
    for (std::size_t j = 0; j < d0; ++j) {
        for (auto& v : cols[j]) v = rng.normal();
        for (std::size_t q = 0; q < j; ++q) {
            double dot = 0;
            for (std::size_t i = 0; i < rows; ++i) dot += cols[j][i] * cols[q][i];
            for (std::size_t i = 0; i < rows; ++i) cols[j][i] -= dot * cols[q][i];
        }
        double norm = 0;
        for (double v : cols[j]) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : cols[j]) v /= norm;
    }
    std::vector<float> w(rows * d0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < d0; ++j) w[i * d0 + j] = static_cast<float>(cols[j][i]);
    return {Tensor({rows, d0}, std::move(w))};
}

Projection make_projection(std::size_t d0, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> w(d0 * d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d0));
    for (auto& v : w) v = static_cast<float>(rng.normal(0.0, s));
    return {Tensor({d0, d}, std::move(w), true), Tensor::zeros({d}, true)};
}

std::vector<float> extract_patches(std::span<const float> raster, int channels) {
    if (channels != 1 && channels != kEncoderChannels) {
        throw DimensionError("extract_patches: expected 1 or 3 channels, got " + std::to_string(channels));
    }
    if (raster.size() != static_cast<std::size_t>(channels * gym::kPixels)) {
        throw DimensionError("extract_patches: raster has " + std::to_string(raster.size()) +
                             " values, expected " + std::to_string(channels * gym::kPixels));
    }
    std::vector<float> out(static_cast<std::size_t>(kPatchCount * kPatchDim));
    for (int pr = 0; pr < kPatchesPerSide; ++pr) {
        for (int pc = 0; pc < kPatchesPerSide; ++pc) {
            float* row = out.data() + (pr * kPatchesPerSide + pc) * kPatchDim;
            for (int ch = 0; ch < kEncoderChannels; ++ch) {
                const int src = channels == 1 ? 0 : ch;
                for (int r = 0; r < kPatchSize; ++r)
                    for (int c = 0; c < kPatchSize; ++c) {
                        const int y = pr * kPatchSize + r, x = pc * kPatchSize + c;
                        row[(ch * kPatchSize + r) * kPatchSize + c] =
                            raster[static_cast<std::size_t>(src * gym::kPixels + y * gym::kRaster + x)];
                    }
            }
        }
    }
    return out;
}

Tensor frozen_features(const FrozenEncoder& encoder, std::span<const float> patch_rows) {
    if (patch_rows.size() % kPatchDim != 0) {
        throw DimensionError("frozen_features: patch buffer is not a whole number of rows");
    }
    const std::size_t n = patch_rows.size() / kPatchDim, d0 = encoder.out_dim();
    std::vector<float> out(n * d0);
    kernels::omp::gemm_nn<float>(n, d0, kPatchDim, patch_rows.data(), encoder.weight.data().data(),
                                 out.data());
    return Tensor({n, d0}, std::move(out));
}

template <class T>
BasicTensor<T> project(const BasicProjection<T>& proj, const BasicTensor<T>& features) {
    if (features.rank() != 2 || features.dim(1) != proj.weight.dim(0)) {
        throw DimensionError("project: features " + shape_str(features.shape()) +
                             " do not match projection " + shape_str(proj.weight.shape()));
    }
    return ops::add_bias(ops::matmul(features, proj.weight), proj.bias);
}

Tensor encode(std::span<const float> raster, int channels, const FrozenEncoder& encoder,
              const Projection& proj) {
    const auto patches = extract_patches(raster, channels);
    return project(proj, frozen_features(encoder, patches));
}

Tensor position_tags(std::size_t tokens, std::size_t dim, float scale) {
    if (tokens > dim) throw DimensionError("position_tags: need tokens <= dim");
    Tensor t = Tensor::zeros({tokens, dim});
    for (std::size_t i = 0; i < tokens; ++i) t.data()[i * dim + i] = scale;
    return t;
}

template BasicTensor<float> project(const BasicProjection<float>&, const BasicTensor<float>&);
template BasicTensor<double> project(const BasicProjection<double>&, const BasicTensor<double>&);

}  // namespace di2
