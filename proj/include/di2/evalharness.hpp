// SPDX-License-Identifier: Apache-2.0
//
// Paired success-rate evaluation, the ablation grid, and action-error curves.
//
// Every mode of one evaluation sees the same scene sequence: scene i is
// generate_scene(base + i) with base derived from the evaluation seed.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "di2/pipeline.hpp"

namespace di2 {

// Policy modes plus two reference actors: EXPERT (privileged controller) and
// RANDOM (uniform over the action box).
inline const std::vector<std::string> kPolicyModes{"RGBD", "RGB_ONLY", "RGB_ONLY_NO_DAC", "ZERO_DEPTH"};

struct Interval {
    double low = 0, high = 0;
};

// Wilson score interval at 95%.
Interval wilson_interval(std::size_t successes, std::size_t trials);

struct ModeResult {
    std::string mode;
    std::size_t episodes = 0;
    std::size_t successes = 0;
    double success_rate = 0;
    Interval ci;
    double mean_len = 0;
};

struct EvalReport {
    std::uint64_t seed = 0;
    std::size_t episodes = 0;
    std::vector<ModeResult> modes;
    double utilization = 0;  // codebook usage over the eval scenes' true depth tokens
    std::string config_text;

    const ModeResult& mode(const std::string& name) const;
};

std::uint64_t eval_scene_seed(std::uint64_t seed, std::size_t episode);

// Requires a DONE model unless `allow_partial` is set (used for baselines
// whose model stops after warm-up). n_eval == 0 is a contract error.
EvalReport evaluate(const Model& model, std::size_t n_eval, std::uint64_t seed,
                    const std::vector<std::string>& modes, bool allow_partial = false);

// Rolls out under RGBD; at each visited state queries every compared mode and
// records the Euclidean distance between executed (clamped, physical)
// actions. Entry t is the mean over rollouts still running at step t.
struct ErrorCurves {
    std::map<std::string, std::vector<double>> mean_distance;
    std::vector<std::size_t> counts;  // rollouts alive at each step

    double overall_mean(const std::string& mode) const;  // step-weighted mean
};

// Pools curves from independent runs, weighting each step by its rollout count.
ErrorCurves merge_curves(const std::vector<ErrorCurves>& parts);

ErrorCurves action_error_curve(const Model& model, std::size_t n_rollouts, std::uint64_t seed,
                               const std::vector<std::string>& compared = {"RGB_ONLY", "RGB_ONLY_NO_DAC"});

struct GridRow {
    std::string cell;
    std::uint64_t seed = 0;
    double success_rate = 0;
    Interval ci;
    double mean_len = 0;
    double utilization = 0;
};

inline const std::vector<std::string> kGridCells{"MLP_NO_DAC", "DCM_NO_DAC", "DCM_DAC",
                                                 "RGB_POLICY", "RGBD_POLICY", "ZERO_DEPTH"};

struct SeedResult {
    std::vector<GridRow> rows;  // one per grid cell
    ErrorCurves curves;         // from the DCM model
    // With config.alt_codebook_size set: the DCM_DAC cell re-run with that
    // codebook size (cell "DCM_DAC_N<size>") and its RGB_ONLY error curve.
    std::vector<GridRow> alt_rows;
    ErrorCurves alt_curves;
};

// Trains every model needed for one seed and evaluates the six cells, plus
// the alternative codebook cell when configured. The
// dataset is generated from the seed; `curve_rollouts` of 0 skips the curves.
SeedResult ablation_seed(const ExperimentConfig& config, std::uint64_t seed, std::size_t curve_rollouts = 0);

// One SeedResult per seed, in seed order, using up to `jobs` worker threads.
std::vector<SeedResult> ablation_grid(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                      std::size_t jobs = 1, std::size_t curve_rollouts = 0);

std::uint64_t dataset_seed(std::uint64_t seed);

// report.csv: mode,seed,success_rate,ci_low,ci_high,mean_len,utilization
std::string report_csv(const EvalReport& report);
std::string grid_csv(const std::vector<SeedResult>& results);
// error_curve.csv: timestep,mode,mean_distance
std::string curve_csv(const ErrorCurves& curves);
// One JSON object per line per mode (or cell).
std::string report_jsonl(const EvalReport& report);
std::string grid_jsonl(const std::vector<SeedResult>& results);

void append_file(const std::filesystem::path& path, const std::string& text);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace di2
