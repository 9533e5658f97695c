// SPDX-License-Identifier: Apache-2.0
//
// Fusion network, policy head, training stages and inference modes.
//
// The policy pools each modality's token set with attention weights driven by
// the task: the task embedding is mapped to a few queries, each query scores
// the position-embedded RGB tokens, and the same weights average both the RGB
// and the depth tokens. The pooled vectors, the task embedding and the
// effector proprioception feed a perceptron with two hidden layers and a 4-d
// output.
// The policy works in normalised action units: the three deltas are divided
// by the per-step bound so every output coordinate lives on a unit scale.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "di2/config.hpp"
#include "di2/dac.hpp"
#include "di2/dcm.hpp"
#include "di2/featurizer.hpp"
#include "di2/synthgym.hpp"

namespace di2 {

inline constexpr std::size_t kProprioDim = 3;

template <class T>
struct BasicPolicy {
    BasicTensor<T> query;   // [d x q*d], task embedding -> q pooling queries
    BasicTensor<T> key;     // [d x d]
    BasicTensor<T> pos;     // [16 x d], added to RGB tokens before pooling
    BasicTensor<T> w1, b1;  // [(d + 2qd + 3) x h], [h]
    BasicTensor<T> w2, b2;  // [h x h], [h]
    BasicTensor<T> w3, b3;  // [h x 4], [4]

    std::size_t queries() const { return query.dim(1) / query.dim(0); }
    std::vector<BasicTensor<T>> list() const { return {query, key, pos, w1, b1, w2, b2, w3, b3}; }
};
using Policy = BasicPolicy<float>;

// Everything the warm-up stage trains, as one templated bundle so the
// composite loss can be gradient-checked in double.
template <class T>
struct BasicWarmupParams {
    BasicProjection<T> proj_rgb, proj_depth;
    BasicTensor<T> task_table;  // [tasks x d]
    BasicPolicy<T> policy;

    std::vector<BasicTensor<T>> list() const {
        std::vector<BasicTensor<T>> out{proj_rgb.weight, proj_rgb.bias, proj_depth.weight,
                                        proj_depth.bias, task_table};
        for (const auto& t : policy.list()) out.push_back(t);
        return out;
    }
};

template <class U>
BasicWarmupParams<U> warmup_cast(const BasicWarmupParams<float>& p) {
    const auto& q = p.policy;
    return {projection_cast<U>(p.proj_rgb), projection_cast<U>(p.proj_depth), tensor_cast<U>(p.task_table),
            {tensor_cast<U>(q.query), tensor_cast<U>(q.key), tensor_cast<U>(q.pos), tensor_cast<U>(q.w1),
             tensor_cast<U>(q.b1), tensor_cast<U>(q.w2), tensor_cast<U>(q.b2), tensor_cast<U>(q.w3),
             tensor_cast<U>(q.b3)}};
}

// task [B x d], rgb/depth [B x 16 x d], proprio [B x 3] -> [B x 4] normalised
// action. When `weights` is non-null it receives the pooling weights [B x q x 16].
template <class T>
BasicTensor<T> policy_forward(const BasicPolicy<T>& p, const BasicTensor<T>& task, const BasicTensor<T>& rgb,
                              const BasicTensor<T>& depth, const BasicTensor<T>& proprio,
                              BasicTensor<T>* weights = nullptr);

// Batch mean of the per-sample squared action error. rgb_feat and depth_feat
// are frozen-encoder outputs [B*16 x d0]; when `zero_depth` is set, the depth
// token block is replaced by zeros (the RGB-only policy baseline).
template <class T>
BasicTensor<T> warmup_loss(const BasicWarmupParams<T>& p, const BasicTensor<T>& rgb_feat,
                           const BasicTensor<T>& depth_feat, std::span<const std::size_t> tasks,
                           const BasicTensor<T>& proprio, const BasicTensor<T>& target,
                           bool zero_depth = false);

gym::Action to_physical(std::span<const float> normalised);
std::array<float, 4> to_normalised(const gym::Action& a);

enum Stage : unsigned { kWarmup = 1, kAlign = 2, kCodebook = 4, kFinetune = 8 };

struct Model {
    ExperimentConfig config;
    FrozenEncoder encoder;
    BasicWarmupParams<float> warm;
    DcmParams dcm;
    MlpPredictor mlp;
    Codebook codebook;
    Tensor tags;  // fixed [16 x d] position tags, derived from config
    unsigned stages = 0;

    bool has(Stage s) const { return (stages & s) != 0; }
    bool done() const { return has(kWarmup) && has(kAlign) && has(kCodebook); }
    // WARMUP, ALIGN, CODEBOOK or DONE: the furthest point along the stage order.
    std::string stage_tag() const;

    // Every array, in a fixed order. Names are "<group>.<field>".
    std::vector<std::pair<std::string, Tensor>> named_arrays() const;
    // FNV-1a over each group's arrays: encoder, proj_rgb, proj_depth, task,
    // policy, dcm, mlp, codebook.
    std::map<std::string, std::uint64_t> group_checksums() const;
};

Model make_model(const ExperimentConfig& config);

// Frozen-encoder features for every sample, computed once per dataset.
struct SampleCache {
    std::size_t samples = 0;
    std::size_t d0 = 0;
    std::vector<float> rgb;    // [S x 16 x d0]
    std::vector<float> depth;  // [S x 16 x d0]
    std::vector<std::size_t> tasks;
    std::vector<float> proprio;  // [S x 3]
    std::vector<float> actions;  // [S x 4], normalised
    std::vector<std::size_t> trajectory;  // owning trajectory index per sample
};

SampleCache build_cache(const Model& model, const std::vector<gym::Trajectory>& data);

struct TrainLog {
    std::vector<double> epoch_loss;  // mean training loss per epoch
};

struct WarmupOptions {
    bool zero_depth = false;
    std::optional<std::size_t> epochs;  // overrides config
    std::optional<float> lr;
};

// Trains projections, task table and policy. Throws ContractError on an empty
// dataset and DivergenceError on a non-finite loss.
TrainLog warmup_train(Model& model, const SampleCache& cache, const WarmupOptions& opts = {});

// Trains the configured depth predictor (DCM or MLP) only. Requires warm-up.
TrainLog align_train(Model& model, const SampleCache& cache);

// Trains the codebook on frozen depth tokens only. Requires warm-up.
TrainLog codebook_train(Model& model, const SampleCache& cache);

// Replaces the codebook with a fresh one of `n_codes` entries, drawn from the
// same seed stream as make_model, and clears the codebook stage.
void reset_codebook(Model& model, std::size_t n_codes);

// Optional: trains the policy on quantised predicted depth tokens. Requires DONE.
TrainLog finetune_train(Model& model, const SampleCache& cache);

// Full composition under config.stage_order (and fine-tune if enabled).
void train_all(Model& model, const SampleCache& cache);

enum class InferenceMode { Rgbd, RgbOnly, RgbOnlyNoDac, ZeroDepth };
std::string to_string(InferenceMode m);
InferenceMode parse_mode(const std::string& s);

// Token sets for a batch of samples, [B x 16 x d].
Tensor rgb_tokens(const Model& model, std::span<const float> rgb_feat, std::size_t batch);
Tensor depth_tokens(const Model& model, std::span<const float> depth_feat, std::size_t batch);
// Depth predictor output (DCM or MLP per config) from RGB tokens.
Tensor predict_depth(const Model& model, const Tensor& rgb_tokens);

// Normalised action from explicit token sets; used to isolate the depth path.
std::array<float, 4> policy_action(const Model& model, const Tensor& rgb_tokens,
                                   const Tensor& depth_tokens, const std::array<float, 3>& proprio,
                                   int task_id);

// Physical (unclamped) action. RGBD requires `depth`; other modes forbid it.
gym::Action infer_action(const Model& model, std::span<const float> rgb, const std::array<float, 3>& proprio,
                         int task_id, InferenceMode mode, const std::vector<float>* depth = nullptr);

// Convenience over an observation: passes depth only in RGBD mode.
gym::Action infer_action(const Model& model, const gym::Observation& obs, InferenceMode mode);

// Depth tokens fed to the policy under each mode, for one RGB(-D) observation.
Tensor mode_depth_tokens(const Model& model, const Tensor& rgb_tok, InferenceMode mode,
                         const std::vector<float>* depth);

}  // namespace di2
