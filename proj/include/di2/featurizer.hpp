// SPDX-License-Identifier: Apache-2.0
//
// Frozen patch encoder plus trainable per-modality projections.
//
// A 32x32 raster is cut into 16 patches of 8x8. Each flattened patch
// (channels x 8 x 8) goes through one frozen linear map into d0 dimensions;
// a trainable projection then maps d0 -> d. Depth rasters are replicated to
// three channels first so both modalities share the encoder.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "di2/ops.hpp"

namespace di2 {

inline constexpr int kPatchSize = 8;
inline constexpr int kPatchesPerSide = 4;
inline constexpr int kPatchCount = kPatchesPerSide * kPatchesPerSide;
inline constexpr int kEncoderChannels = 3;
inline constexpr int kPatchDim = kEncoderChannels * kPatchSize * kPatchSize;

struct FrozenEncoder {
    Tensor weight;  // [kPatchDim x d0], never trained

    std::size_t out_dim() const { return weight.dim(1); }
    std::uint64_t checksum() const;
};

// Gaussian matrix with orthonormalised columns, fixed by the seed.
FrozenEncoder make_frozen_encoder(std::uint64_t seed, std::size_t d0);

template <class T>
struct BasicProjection {
    BasicTensor<T> weight;  // [d0 x d]
    BasicTensor<T> bias;    // [d]
};
using Projection = BasicProjection<float>;

Projection make_projection(std::size_t d0, std::size_t d, std::uint64_t seed);

// Raster (channels x 32 x 32, channel-major) -> [16 x kPatchDim] rows, one per
// patch in row-major patch order. A single-channel raster is replicated.
std::vector<float> extract_patches(std::span<const float> raster, int channels);

// [N x kPatchDim] patch rows -> [N x d0] frozen features. No graph is recorded.
Tensor frozen_features(const FrozenEncoder& encoder, std::span<const float> patch_rows);

// [N x d0] -> [N x d]; gradient reaches the projection only.
template <class T>
BasicTensor<T> project(const BasicProjection<T>& proj, const BasicTensor<T>& features);

// Full path for one raster: tokens [16 x d].
Tensor encode(std::span<const float> raster, int channels, const FrozenEncoder& encoder,
              const Projection& proj);

// Fixed tags added to RGB tokens before they enter the depth predictor's
// attention: tag i is `scale` times the i-th unit vector (requires k <= d).
Tensor position_tags(std::size_t tokens, std::size_t dim, float scale);

template <class T>
BasicProjection<T> projection_cast(const Projection& p) {
    return {tensor_cast<T>(p.weight), tensor_cast<T>(p.bias)};
}

}  // namespace di2
