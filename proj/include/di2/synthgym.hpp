// SPDX-License-Identifier: Apache-2.0
//
// Block-reach environment: a gripper must reach a coloured block whose height
// is LOW or HIGH. Height shows up strongly in the depth raster and only
// weakly in RGB (through the rendered block size), which is the information
// gap the depth predictor has to close.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace di2::gym {

inline constexpr int kRaster = 32;
inline constexpr int kChannels = 3;
inline constexpr int kPixels = kRaster * kRaster;
inline constexpr int kMaxSteps = 40;
inline constexpr int kActionDim = 4;
inline constexpr int kPaletteSize = 4;
inline constexpr int kTaskCount = kPaletteSize;

inline constexpr float kLowHeight = 0.2f;
inline constexpr float kHighHeight = 0.8f;
// Clutter sits between the two target heights.
inline constexpr float kDistractorHeight = 0.5f;
inline constexpr float kRgbNoise = 0.05f;
inline constexpr float kMaxDelta = 0.1f;
inline constexpr float kMinSeparation = 0.15f;
inline constexpr float kReachTolerance = 0.05f;
inline constexpr float kHeightTolerance = 0.1f;

// red, green, blue, yellow
inline constexpr std::array<std::array<float, 3>, kPaletteSize> kPalette{{
    {1.f, 0.f, 0.f}, {0.f, 1.f, 0.f}, {0.f, 0.f, 1.f}, {1.f, 1.f, 0.f}}};

struct Distractor {
    std::array<float, 2> xy{};
    int color = 0;
};

struct Scene {
    std::array<float, 2> target_xy{};
    float target_height = kLowHeight;
    int target_color = 0;
    std::vector<Distractor> distractors;
    std::array<float, 3> effector{};
    float gripper = 0.f;
    int task_id = 0;
    std::uint64_t noise_seed = 0;  // advanced by step(); drives RGB pixel noise
};

struct Observation {
    std::vector<float> rgb;    // 3 x 32 x 32, channel-major
    std::vector<float> depth;  // 1 x 32 x 32
    std::array<float, 3> proprio{};  // effector xyz as reported by the arm
    int task_id = 0;
};

// (dx, dy, dz, gripper command)
using Action = std::array<float, kActionDim>;

struct Step {
    Observation observation;
    Action action{};
};

struct Trajectory {
    std::vector<Step> steps;
    bool success = false;
    std::uint64_t seed = 0;
};

Scene generate_scene(std::uint64_t seed);

// Side length in pixels of a block at the given height: 4 + round(2 * h).
int square_side(float height);

Observation render(const Scene& scene);

// Bounds every component: deltas to [-0.1, 0.1], gripper to [0, 1].
Action clamp_action(const Action& action);

// Proportional controller toward (target_xy, target_height).
Action expert_action(const Scene& scene);

Scene step(const Scene& scene, const Action& action);

bool is_success(const Scene& scene);

// An actor sees the observation only; the scene argument exists for
// privileged controllers (the expert) and is ignored by learned policies.
using Actor = std::function<Action(const Observation&, const Scene&)>;

struct Rollout {
    Trajectory trajectory;
    Scene final_scene;
};

Rollout rollout(Scene scene, const Actor& actor, int max_steps = kMaxSteps);

// Trajectory i is the expert rollout of generate_scene(seed + i).
std::vector<Trajectory> generate_dataset(int n_trajectories, std::uint64_t seed);

// Dataset container: text line "SYNTHGYM v1 <n>\n", then per trajectory a u32
// byte length followed by the record (layout in the README).
void write_dataset(const std::filesystem::path& path, const std::vector<Trajectory>& data);
std::vector<Trajectory> read_dataset(const std::filesystem::path& path);
std::string encode_dataset(const std::vector<Trajectory>& data);
std::vector<Trajectory> decode_dataset(const std::string& bytes);

// Fraction of scenes whose target height a pixel-count size classifier gets
// wrong from the noisy RGB raster. Quantifies how much height RGB carries.
double rgb_size_classifier_error(int n_scenes, std::uint64_t seed);

}  // namespace di2::gym
