// SPDX-License-Identifier: Apache-2.0
#include "di2/synthgym.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "di2/binio.hpp"
#include "di2/error.hpp"
#include "di2/rng.hpp"

namespace di2::gym {

namespace {

constexpr int kMaxPlacementAttempts = 1000;
constexpr float kPlacementMargin = 0.1f;

float distance_xy(const std::array<float, 2>& a, const std::array<float, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

// Pixel span [start, start + side) for a square centred on coordinate u.
int span_start(float u, int side) {
    return static_cast<int>(std::lround(u * kRaster)) - side / 2;
}

template <class Fn>
void for_square(const std::array<float, 2>& xy, int side, Fn&& fn) {
    const int c0 = span_start(xy[0], side);
    const int r0 = span_start(xy[1], side);
    for (int r = std::max(r0, 0); r < std::min(r0 + side, kRaster); ++r)
        for (int c = std::max(c0, 0); c < std::min(c0 + side, kRaster); ++c) fn(r, c);
}

}  // namespace

int square_side(float height) { return 4 + static_cast<int>(std::lround(2.0f * height)); }

Scene generate_scene(std::uint64_t seed) {
    Rng rng(seed);
    Scene s;
    s.task_id = static_cast<int>(rng.integer(0, kTaskCount - 1));
    s.target_color = s.task_id;
    s.target_height = rng.integer(0, 1) == 1 ? kHighHeight : kLowHeight;

    auto draw_xy = [&] {
        return std::array<float, 2>{
            static_cast<float>(rng.uniform(kPlacementMargin, 1.0 - kPlacementMargin)),
            static_cast<float>(rng.uniform(kPlacementMargin, 1.0 - kPlacementMargin))};
    };
    s.target_xy = draw_xy();

    const int n_distractors = static_cast<int>(rng.integer(0, 3));
    int attempts = 0;
    while (static_cast<int>(s.distractors.size()) < n_distractors) {
        if (++attempts > kMaxPlacementAttempts) {
            throw InternalError("generate_scene: could not place distractors for seed " +
                                std::to_string(seed));
        }
        const auto xy = draw_xy();
        bool ok = distance_xy(xy, s.target_xy) >= kMinSeparation;
        for (const auto& d : s.distractors) ok = ok && distance_xy(xy, d.xy) >= kMinSeparation;
        if (!ok) continue;
        // Any colour except the target's.
        int color = static_cast<int>(rng.integer(0, kPaletteSize - 2));
        if (color >= s.target_color) ++color;
        s.distractors.push_back({xy, color});
    }

    for (auto& e : s.effector) e = static_cast<float>(rng.uniform());
    s.gripper = 0.f;
    s.noise_seed = derive_seed(seed, 1);
    return s;
}

Observation render(const Scene& scene) {
    Observation obs;
    obs.task_id = scene.task_id;
    obs.rgb.assign(kChannels * kPixels, 0.f);
    obs.depth.assign(kPixels, 1.f);

    auto paint = [&](const std::array<float, 2>& xy, float height, int color) {
        const auto& rgb = kPalette[static_cast<std::size_t>(color)];
        for_square(xy, square_side(height), [&](int r, int c) {
            for (int ch = 0; ch < kChannels; ++ch) obs.rgb[ch * kPixels + r * kRaster + c] = rgb[ch];
            obs.depth[r * kRaster + c] = 1.f - height;
        });
    };
    for (const auto& d : scene.distractors) paint(d.xy, kDistractorHeight, d.color);
    paint(scene.target_xy, scene.target_height, scene.target_color);

    obs.proprio = scene.effector;

    Rng noise(scene.noise_seed);
    for (auto& v : obs.rgb) v = std::clamp(v + static_cast<float>(noise.normal(0.0, kRgbNoise)), 0.f, 1.f);
    return obs;
}

Action clamp_action(const Action& a) {
    return {std::clamp(a[0], -kMaxDelta, kMaxDelta), std::clamp(a[1], -kMaxDelta, kMaxDelta),
            std::clamp(a[2], -kMaxDelta, kMaxDelta), std::clamp(a[3], 0.f, 1.f)};
}

Action expert_action(const Scene& s) {
    const std::array<float, 3> target{s.target_xy[0], s.target_xy[1], s.target_height};
    Action a{};
    bool near = true;
    for (int i = 0; i < 3; ++i) {
        const float err = target[i] - s.effector[i];
        a[i] = std::clamp(0.5f * err, -kMaxDelta, kMaxDelta);
        near = near && std::abs(err) <= kReachTolerance;
    }
    a[3] = near ? 1.f : 0.f;
    return a;
}

Scene step(const Scene& scene, const Action& action) {
    Scene next = scene;
    const Action a = clamp_action(action);
    for (int i = 0; i < 3; ++i) next.effector[i] = std::clamp(scene.effector[i] + a[i], 0.f, 1.f);
    next.gripper = a[3];
    next.noise_seed = splitmix64(scene.noise_seed);
    return next;
}

bool is_success(const Scene& s) {
    return distance_xy({s.effector[0], s.effector[1]}, s.target_xy) <= kReachTolerance &&
           std::abs(s.effector[2] - s.target_height) < kHeightTolerance && s.gripper > 0.5f;
}

Rollout rollout(Scene scene, const Actor& actor, int max_steps) {
    Rollout out;
    for (int t = 0; t < max_steps; ++t) {
        Step st;
        st.observation = render(scene);
        st.action = clamp_action(actor(st.observation, scene));
        scene = step(scene, st.action);
        out.trajectory.steps.push_back(std::move(st));
        if (is_success(scene)) break;
    }
    out.trajectory.success = is_success(scene);
    out.final_scene = std::move(scene);
    return out;
}

std::vector<Trajectory> generate_dataset(int n_trajectories, std::uint64_t seed) {
    if (n_trajectories < 0) throw ContractError("generate_dataset: n must be non-negative");
    std::vector<Trajectory> data(static_cast<std::size_t>(n_trajectories));
    const Actor expert = [](const Observation&, const Scene& s) { return expert_action(s); };
    const auto n = static_cast<std::ptrdiff_t>(n_trajectories);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const std::uint64_t traj_seed = seed + static_cast<std::uint64_t>(i);
        auto r = rollout(generate_scene(traj_seed), expert);
        r.trajectory.seed = traj_seed;
        data[static_cast<std::size_t>(i)] = std::move(r.trajectory);
    }
    return data;
}

std::string encode_dataset(const std::vector<Trajectory>& data) {
    std::string out = "SYNTHGYM v1 " + std::to_string(data.size()) + "\n";
    for (const auto& traj : data) {
        std::string rec;
        binio::put_u64(rec, traj.seed);
        rec.push_back(static_cast<char>(traj.success ? 1 : 0));
        binio::put_u32(rec, static_cast<std::uint32_t>(traj.steps.size()));
        for (const auto& st : traj.steps) {
            binio::put_u32(rec, static_cast<std::uint32_t>(st.observation.task_id));
            binio::put_f32s(rec, st.action);
            binio::put_f32s(rec, st.observation.proprio);
            binio::put_f32s(rec, st.observation.rgb);
            binio::put_f32s(rec, st.observation.depth);
        }
        binio::put_u32(out, static_cast<std::uint32_t>(rec.size()));
        out += rec;
    }
    return out;
}

std::vector<Trajectory> decode_dataset(const std::string& bytes) {
    const auto eol = bytes.find('\n');
    if (eol == std::string::npos) throw FormatError("dataset: missing header line");
    std::istringstream header(bytes.substr(0, eol));
    std::string magic, version;
    long long n = -1;
    header >> magic >> version >> n;
    if (magic != "SYNTHGYM" || version != "v1" || n < 0) {
        throw FormatError("dataset: bad header '" + bytes.substr(0, eol) + "'");
    }
    binio::Reader in(std::span<const char>(bytes).subspan(eol + 1));
    std::vector<Trajectory> data;
    data.reserve(static_cast<std::size_t>(n));
    constexpr std::size_t kStepBytes = 4 + 4 * (kActionDim + 3 + kChannels * kPixels + kPixels);
    for (long long i = 0; i < n; ++i) {
        const std::uint32_t length = in.u32();
        const std::size_t start = in.position();
        Trajectory traj;
        traj.seed = in.u64();
        traj.success = in.u8() != 0;
        const std::uint32_t steps = in.u32();
        if (length != 13 + steps * kStepBytes) throw FormatError("dataset: record length mismatch");
        traj.steps.resize(steps);
        for (auto& st : traj.steps) {
            st.observation.task_id = static_cast<int>(in.u32());
            in.f32s(st.action);
            in.f32s(st.observation.proprio);
            st.observation.rgb.resize(kChannels * kPixels);
            st.observation.depth.resize(kPixels);
            in.f32s(st.observation.rgb);
            in.f32s(st.observation.depth);
        }
        if (in.position() - start != length) throw FormatError("dataset: record length mismatch");
        data.push_back(std::move(traj));
    }
    if (in.remaining() != 0) throw FormatError("dataset: trailing bytes after last record");
    return data;
}

void write_dataset(const std::filesystem::path& path, const std::vector<Trajectory>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContractError("cannot open dataset for writing: " + path.string());
    const auto bytes = encode_dataset(data);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError("failed writing dataset: " + path.string());
}

std::vector<Trajectory> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open dataset: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_dataset(bytes);
}

double rgb_size_classifier_error(int n_scenes, std::uint64_t seed) {
    if (n_scenes <= 0) throw ContractError("rgb_size_classifier_error: n must be positive");
    const int low_area = square_side(kLowHeight) * square_side(kLowHeight);
    const int high_area = square_side(kHighHeight) * square_side(kHighHeight);
    const double threshold = 0.5 * (low_area + high_area);
    int wrong = 0;
    for (int i = 0; i < n_scenes; ++i) {
        const Scene s = generate_scene(seed + static_cast<std::uint64_t>(i));
        const Observation obs = render(s);
        const auto& color = kPalette[static_cast<std::size_t>(s.target_color)];
        int count = 0;
        for (int p = 0; p < kPixels; ++p) {
            bool match = true;
            for (int ch = 0; ch < kChannels; ++ch)
                match = match && std::abs(obs.rgb[ch * kPixels + p] - color[ch]) < 0.5f;
            count += match ? 1 : 0;
        }
        const bool predicted_high = count > threshold;
        wrong += predicted_high != (s.target_height == kHighHeight) ? 1 : 0;
    }
    return static_cast<double>(wrong) / n_scenes;
}

}  // namespace di2::gym
