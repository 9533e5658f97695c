// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value experiment description. Every key is listed in the
// README; unknown keys are rejected at load time.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace di2 {

enum class DepthPredictor { Dcm, Mlp };
enum class StageOrder { AlignFirst, CodebookFirst };

struct ExperimentConfig {
    // dimensions
    std::size_t encoder_dim = 32;  // d0
    std::size_t token_dim = 16;    // d
    std::size_t dcm_layers = 2;
    std::size_t ffn_mult = 4;
    std::size_t policy_hidden = 64;
    std::size_t policy_queries = 2;
    std::size_t mlp_hidden = 64;
    float position_scale = 2.0f;

    // codebook
    std::size_t codebook_size = 64;
    std::size_t alt_codebook_size = 0;  // ablation only: also evaluate DAC with this N (0 = off)
    float codebook_lambda = 0.99f;
    float codebook_lr = 4.0f;
    bool codebook_revival = true;

    // data
    std::size_t dataset_size = 200;

    // optimisation
    std::size_t batch_size = 32;
    float momentum = 0.9f;
    std::size_t warmup_epochs = 50;
    float warmup_lr = 0.01f;
    std::size_t align_epochs = 100;
    float align_lr = 0.002f;
    float align_clip = 10.0f;  // gradient L2 norm cap, 0 disables
    std::size_t codebook_epochs = 50;
    std::size_t finetune_epochs = 0;  // 0 disables the optional policy fine-tune
    float finetune_lr = 0.002f;

    DepthPredictor depth_predictor = DepthPredictor::Dcm;
    StageOrder stage_order = StageOrder::AlignFirst;

    // evaluation
    std::size_t eval_episodes = 200;

    std::uint64_t seed = 0;

    // Codebook constants as published: N = 512, lambda = 0.99.
    static ExperimentConfig reference_preset();

    std::string to_text() const;
    static ExperimentConfig from_text(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);

    // Throws ConfigError on out-of-range values.
    void validate() const;

    static std::vector<std::string> keys();
};

std::string to_string(DepthPredictor p);
std::string to_string(StageOrder s);

}  // namespace di2
