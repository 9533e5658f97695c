// SPDX-License-Identifier: Apache-2.0
#include "di2/evalharness.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <thread>

#include "di2/checkpoint.hpp"
#include "di2/rng.hpp"
#include "json.hpp"

namespace di2 {

namespace {

constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr std::uint64_t kRandomActorStream = 0x7A4D;
constexpr std::uint64_t kDatasetStream = 0xDA7A;

struct Episode {
    bool success = false;
    std::size_t length = 0;
};

gym::Actor actor_for(const Model& model, const std::string& mode, std::uint64_t episode_seed) {
    if (mode == "EXPERT") return [](const gym::Observation&, const gym::Scene& s) { return gym::expert_action(s); };
    if (mode == "RANDOM") {
        auto rng = std::make_shared<Rng>(derive_seed(episode_seed, kRandomActorStream));
        return [rng](const gym::Observation&, const gym::Scene&) {
            gym::Action a{};
            for (int i = 0; i < 3; ++i) a[i] = static_cast<float>(rng->uniform(-gym::kMaxDelta, gym::kMaxDelta));
            a[3] = static_cast<float>(rng->uniform());
            return a;
        };
    }
    const auto m = parse_mode(mode);
    // The gripper is regressed as a continuous value and executed as a
    // binary command.
    return [&model, m](const gym::Observation& obs, const gym::Scene&) {
        auto a = infer_action(model, obs, m);
        a[3] = a[3] > 0.5f ? 1.f : 0.f;
        return a;
    };
}

double distance(const gym::Action& a, const gym::Action& b) {
    double s = 0;
    for (int i = 0; i < gym::kActionDim; ++i) s += std::pow(double(a[i]) - double(b[i]), 2);
    return std::sqrt(s);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

Interval wilson_interval(std::size_t successes, std::size_t trials) {
    if (trials == 0) return {0, 1};
    const double z = 1.959963984540054, n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double denom = 1 + z * z / n;
    const double centre = (p + z * z / (2 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom;
    // The bounds are exact at the extremes; the formula leaves rounding residue.
    return {successes == 0 ? 0.0 : std::max(0.0, centre - half),
            successes == trials ? 1.0 : std::min(1.0, centre + half)};
}

const ModeResult& EvalReport::mode(const std::string& name) const {
    for (const auto& m : modes)
        if (m.mode == name) return m;
    throw ContractError("report has no mode " + name);
}

std::uint64_t eval_scene_seed(std::uint64_t seed, std::size_t episode) {
    return derive_seed(seed, kEvalStream) + episode;
}

EvalReport evaluate(const Model& model, std::size_t n_eval, std::uint64_t seed,
                    const std::vector<std::string>& modes, bool allow_partial) {
    if (n_eval == 0) throw ContractError("evaluate: n_eval must be positive");
    if (!allow_partial && !model.done()) {
        throw StagingError("evaluate: model is at stage " + model.stage_tag() + ", expected DONE");
    }
    EvalReport report;
    report.seed = seed;
    report.episodes = n_eval;
    report.config_text = model.config.to_text();

    for (const auto& mode : modes) {
        std::vector<Episode> eps(n_eval);
        const auto n = static_cast<std::ptrdiff_t>(n_eval);
        if (mode != "EXPERT" && mode != "RANDOM") parse_mode(mode);  // validate before the parallel region
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const auto s = eval_scene_seed(seed, static_cast<std::size_t>(i));
            const auto r = gym::rollout(gym::generate_scene(s), actor_for(model, mode, s));
            eps[static_cast<std::size_t>(i)] = {r.trajectory.success, r.trajectory.steps.size()};
        }
        ModeResult res;
        res.mode = mode;
        res.episodes = n_eval;
        std::size_t total_len = 0;
        for (const auto& e : eps) {
            res.successes += e.success ? 1 : 0;
            total_len += e.length;
        }
        res.success_rate = static_cast<double>(res.successes) / static_cast<double>(n_eval);
        res.ci = wilson_interval(res.successes, n_eval);
        res.mean_len = static_cast<double>(total_len) / static_cast<double>(n_eval);
        report.modes.push_back(res);
    }

    // Codebook coverage of true depth tokens at the initial eval states.
    std::vector<float> feats;
    for (std::size_t i = 0; i < n_eval; ++i) {
        const auto obs = gym::render(gym::generate_scene(eval_scene_seed(seed, i)));
        const auto f = frozen_features(model.encoder, extract_patches(obs.depth, 1));
        feats.insert(feats.end(), f.data().begin(), f.data().end());
    }
    const auto tok = depth_tokens(model, feats, n_eval);
    report.utilization = utilization(model.codebook, tok);
    return report;
}

double ErrorCurves::overall_mean(const std::string& mode) const {
    const auto& c = mean_distance.at(mode);
    double s = 0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < c.size(); ++t) {
        s += c[t] * static_cast<double>(counts[t]);
        n += counts[t];
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

ErrorCurves action_error_curve(const Model& model, std::size_t n_rollouts, std::uint64_t seed,
                               const std::vector<std::string>& compared) {
    if (!model.done()) {
        throw StagingError("action_error_curve: model is at stage " + model.stage_tag() + ", expected DONE");
    }
    std::vector<InferenceMode> modes;
    for (const auto& m : compared) modes.push_back(parse_mode(m));

    // per rollout, per step, per compared mode
    std::vector<std::vector<std::vector<double>>> dist(n_rollouts);
    const auto n = static_cast<std::ptrdiff_t>(n_rollouts);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        auto scene = gym::generate_scene(eval_scene_seed(seed, static_cast<std::size_t>(i)));
        auto& rows = dist[static_cast<std::size_t>(i)];
        for (int t = 0; t < gym::kMaxSteps; ++t) {
            const auto obs = gym::render(scene);
            const auto ref = gym::clamp_action(infer_action(model, obs, InferenceMode::Rgbd));
            std::vector<double> row;
            for (auto m : modes) {
                const auto a = gym::clamp_action(infer_action(model, obs, m));
                row.push_back(distance(ref, a));
            }
            rows.push_back(std::move(row));
            scene = gym::step(scene, ref);
            if (gym::is_success(scene)) break;
        }
    }

    ErrorCurves out;
    std::size_t horizon = 0;
    for (const auto& r : dist) horizon = std::max(horizon, r.size());
    out.counts.assign(horizon, 0);
    for (const auto& m : compared) out.mean_distance[m].assign(horizon, 0.0);
    for (const auto& r : dist)
        for (std::size_t t = 0; t < r.size(); ++t) {
            ++out.counts[t];
            for (std::size_t j = 0; j < compared.size(); ++j) out.mean_distance[compared[j]][t] += r[t][j];
        }
    for (auto& [m, c] : out.mean_distance)
        for (std::size_t t = 0; t < horizon; ++t) c[t] /= static_cast<double>(out.counts[t]);
    return out;
}

ErrorCurves merge_curves(const std::vector<ErrorCurves>& parts) {
    ErrorCurves out;
    std::size_t horizon = 0;
    for (const auto& p : parts) horizon = std::max(horizon, p.counts.size());
    out.counts.assign(horizon, 0);
    for (const auto& p : parts)
        for (const auto& [mode, c] : p.mean_distance) {
            auto& acc = out.mean_distance[mode];
            acc.resize(horizon, 0.0);
            for (std::size_t t = 0; t < c.size(); ++t) acc[t] += c[t] * static_cast<double>(p.counts[t]);
        }
    for (const auto& p : parts)
        for (std::size_t t = 0; t < p.counts.size(); ++t) out.counts[t] += p.counts[t];
    // Every part carries the same modes, so one count vector serves them all.
    for (auto& [mode, c] : out.mean_distance)
        for (std::size_t t = 0; t < horizon; ++t) c[t] = out.counts[t] ? c[t] / static_cast<double>(out.counts[t]) : 0.0;
    return out;
}

std::uint64_t dataset_seed(std::uint64_t seed) { return derive_seed(seed, kDatasetStream); }

SeedResult ablation_seed(const ExperimentConfig& base, std::uint64_t seed, std::size_t curve_rollouts) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    cfg.depth_predictor = DepthPredictor::Dcm;
    const auto data = gym::generate_dataset(static_cast<int>(cfg.dataset_size), dataset_seed(seed));
    const std::size_t n = cfg.eval_episodes;
    SeedResult out;
    auto row = [&](const std::string& cell, const ModeResult& r, double util) {
        out.rows.push_back({cell, seed, r.success_rate, r.ci, r.mean_len, util});
    };

    // Warm-up and codebook do not depend on the depth predictor, and the
    // codebook stage commutes with alignment, so both predictor variants
    // branch from one shared model.
    Model shared = make_model(cfg);
    const auto cache = build_cache(shared, data);
    warmup_train(shared, cache);
    codebook_train(shared, cache);

    Model dcm_model = clone_model(shared);
    align_train(dcm_model, cache);
    if (cfg.finetune_epochs > 0) finetune_train(dcm_model, cache);
    const auto rep = evaluate(dcm_model, n, seed, kPolicyModes);

    Model mlp_model = clone_model(shared);
    mlp_model.config.depth_predictor = DepthPredictor::Mlp;
    align_train(mlp_model, cache);
    if (cfg.finetune_epochs > 0) finetune_train(mlp_model, cache);
    const auto mlp_rep = evaluate(mlp_model, n, seed, {"RGB_ONLY_NO_DAC"});

    Model rgb_model = make_model(cfg);
    WarmupOptions rgb_only;
    rgb_only.zero_depth = true;
    warmup_train(rgb_model, cache, rgb_only);
    const auto rgb_rep = evaluate(rgb_model, n, seed, {"ZERO_DEPTH"}, true);

    row("MLP_NO_DAC", mlp_rep.mode("RGB_ONLY_NO_DAC"), mlp_rep.utilization);
    row("DCM_NO_DAC", rep.mode("RGB_ONLY_NO_DAC"), rep.utilization);
    row("DCM_DAC", rep.mode("RGB_ONLY"), rep.utilization);
    row("RGB_POLICY", rgb_rep.mode("ZERO_DEPTH"), rgb_rep.utilization);
    row("RGBD_POLICY", rep.mode("RGBD"), rep.utilization);
    row("ZERO_DEPTH", rep.mode("ZERO_DEPTH"), rep.utilization);
    if (curve_rollouts > 0) out.curves = action_error_curve(dcm_model, curve_rollouts, seed);

    // Only the codebook differs, so the other stages are reused as they are.
    if (cfg.alt_codebook_size > 0) {
        Model alt = clone_model(dcm_model);
        reset_codebook(alt, cfg.alt_codebook_size);
        codebook_train(alt, cache);
        const auto alt_rep = evaluate(alt, n, seed, {"RGB_ONLY"});
        out.alt_rows.push_back({"DCM_DAC_N" + std::to_string(cfg.alt_codebook_size), seed,
                                alt_rep.mode("RGB_ONLY").success_rate, alt_rep.mode("RGB_ONLY").ci,
                                alt_rep.mode("RGB_ONLY").mean_len, alt_rep.utilization});
        if (curve_rollouts > 0) out.alt_curves = action_error_curve(alt, curve_rollouts, seed, {"RGB_ONLY"});
    }
    return out;
}

std::vector<SeedResult> ablation_grid(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                      std::size_t jobs, std::size_t curve_rollouts) {
    std::vector<SeedResult> results(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    jobs = std::max<std::size_t>(1, std::min(jobs, seeds.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < seeds.size();) {
            try {
                results[i] = ablation_seed(config, seeds[i], curve_rollouts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

std::string report_csv(const EvalReport& report) {
    std::string out = "mode,seed,success_rate,ci_low,ci_high,mean_len,utilization\n";
    for (const auto& m : report.modes) {
        out += m.mode + "," + std::to_string(report.seed) + "," + fmt(m.success_rate) + "," + fmt(m.ci.low) +
               "," + fmt(m.ci.high) + "," + fmt(m.mean_len) + "," + fmt(report.utilization) + "\n";
    }
    return out;
}

std::string grid_csv(const std::vector<SeedResult>& results) {
    std::string out = "mode,seed,success_rate,ci_low,ci_high,mean_len,utilization\n";
    for (const auto& r : results)
        for (const auto* rows : {&r.rows, &r.alt_rows})
            for (const auto& g : *rows)
                out += g.cell + "," + std::to_string(g.seed) + "," + fmt(g.success_rate) + "," + fmt(g.ci.low) +
                       "," + fmt(g.ci.high) + "," + fmt(g.mean_len) + "," + fmt(g.utilization) + "\n";
    return out;
}

std::string curve_csv(const ErrorCurves& curves) {
    std::string out = "timestep,mode,mean_distance\n";
    for (const auto& [mode, c] : curves.mean_distance)
        for (std::size_t t = 0; t < c.size(); ++t) out += std::to_string(t) + "," + mode + "," + fmt(c[t]) + "\n";
    return out;
}

std::string report_jsonl(const EvalReport& report) {
    std::string out;
    for (const auto& m : report.modes) {
        nlohmann::ordered_json j;
        j["mode"] = m.mode;
        j["seed"] = report.seed;
        j["episodes"] = m.episodes;
        j["successes"] = m.successes;
        j["success_rate"] = m.success_rate;
        j["ci_low"] = m.ci.low;
        j["ci_high"] = m.ci.high;
        j["mean_len"] = m.mean_len;
        j["utilization"] = report.utilization;
        out += j.dump() + "\n";
    }
    return out;
}

std::string grid_jsonl(const std::vector<SeedResult>& results) {
    std::string out;
    for (const auto& r : results)
        for (const auto* rows : {&r.rows, &r.alt_rows})
            for (const auto& g : *rows) {
                nlohmann::ordered_json j;
                j["mode"] = g.cell;
                j["seed"] = g.seed;
                j["success_rate"] = g.success_rate;
                j["ci_low"] = g.ci.low;
                j["ci_high"] = g.ci.high;
                j["mean_len"] = g.mean_len;
                j["utilization"] = g.utilization;
                out += j.dump() + "\n";
            }
    return out;
}

void append_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw ContractError("cannot open " + path.string() + " for appending");
    out << text;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ContractError("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw ContractError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace di2
