// SPDX-License-Identifier: Apache-2.0
//
// Depth-aware codebook: nearest-codeword quantisation of depth tokens, plus
// the training step that fits codewords by MSE and revives unused ones.
//
// Revival keeps a running usage average per codeword,
//   p_k <- p_k * lambda + (n_k / R) * (1 - lambda)
//   alpha_k = exp(-p_k * 10 N / (1 - lambda))
//   c_k <- c_k * (1 - alpha_k) + anchor_k * alpha_k
// where n_k counts the rows assigned to c_k in the step and R is the number of
// feature rows in the step. Anchors are batch rows drawn with probability
// proportional to their squared distance to the nearest codeword.
#pragma once

#include <cstdint>
#include <vector>

#include "di2/rng.hpp"
#include "di2/tensor.hpp"

namespace di2 {

struct Codebook {
    Tensor codes;              // Z, [N x d]
    std::vector<float> usage;  // p, one per codeword, starts at 0
    float lambda = 0.99f;
    bool revival = true;

    std::size_t size() const { return codes.dim(0); }
    std::size_t dim() const { return codes.dim(1); }
};

Codebook make_codebook(std::size_t n_codes, std::size_t dim, float lambda, std::uint64_t seed,
                       double init_scale = 1.0);

struct Quantized {
    Tensor values;                     // same shape as the input
    std::vector<std::size_t> indices;  // one per row
};

// Rows are the last axis: [n x d] or [B x k x d]. Ties go to the lowest index.
Quantized quantize(const Codebook& cb, const Tensor& features);

// Usage and revival formulas, exposed for checking against hand values.
double updated_usage(double p, std::size_t assigned, std::size_t rows, double lambda);
double revival_strength(double p, std::size_t n_codes, double lambda);

struct CodebookStepStats {
    double loss = 0.0;  // MSE between rows and their assigned codewords, before the update
    std::vector<std::size_t> counts;
    std::vector<double> alpha;
    std::vector<std::size_t> anchors;  // batch row chosen for each codeword
};

// One iteration on a [R x d] batch of (frozen) feature rows: quantise, take a
// gradient step of size `lr` on the MSE to the codebook, update usage, then
// blend each codeword toward its anchor when revival is enabled.
CodebookStepStats codebook_train_step(Codebook& cb, const Tensor& rows, double lr, Rng& rng);

// Fraction of codewords selected at least once by the given rows.
double utilization(const Codebook& cb, const Tensor& features);

// Mean squared distance from rows to their assigned codewords.
double quantization_mse(const Codebook& cb, const Tensor& features);

}  // namespace di2
