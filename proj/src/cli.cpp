// SPDX-License-Identifier: Apache-2.0
#include "di2/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "di2/checkpoint.hpp"
#include "di2/error.hpp"
#include "di2/evalharness.hpp"
#include "json.hpp"

namespace di2 {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// Keys that later stages may override on a loaded checkpoint. Everything else
// fixes array shapes or initialisation and must come from the checkpoint.
const std::set<std::string> kStageKeys{"batch_size",    "momentum",        "align_epochs", "align_lr", "align_clip",
                                       "codebook_epochs", "codebook_lr",   "depth_predictor",
                                       "finetune_epochs", "finetune_lr",   "eval_episodes"};

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json config_json(const ExperimentConfig& c) {
    Json j = Json::object();
    std::istringstream in(c.to_text());
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find('=');
        j[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return j;
}

// Appends CSV rows, writing the header only when the file is new or empty.
void append_csv(const fs::path& path, const std::string& csv) {
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    append_file(path, fresh ? csv : csv.substr(csv.find('\n') + 1));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    // "0,1,2" or "0-4", or a mix: "0-2,7".
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) {
        if (part.empty()) throw ContractError("empty entry in seed list: " + text);
        const auto dash = part.find('-');
        try {
            if (dash == std::string::npos) {
                out.push_back(std::stoull(part));
            } else {
                const auto lo = std::stoull(part.substr(0, dash)), hi = std::stoull(part.substr(dash + 1));
                if (hi < lo) throw ContractError("descending seed range: " + part);
                for (auto s = lo; s <= hi; ++s) out.push_back(s);
            }
        } catch (const std::logic_error&) {
            throw ContractError("bad seed list: " + text);
        }
    }
    if (out.empty()) throw ContractError("seed list is empty");
    return out;
}

std::vector<std::string> split_modes(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    for (std::string m; std::getline(ss, m, ',');) {
        if (m != "EXPERT" && m != "RANDOM") parse_mode(m);
        out.push_back(m);
    }
    if (out.empty()) throw ContractError("mode list is empty");
    return out;
}

// Options shared by commands that build a config from scratch.
struct ConfigOpts {
    std::string path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;

    void add(CLI::App* app, bool with_seed = true) {
        app->add_option("--config", path, "Config file (key=value lines)");
        if (with_seed) app->add_option("--seed", seed, "Experiment seed; overrides the config file");
        app->add_option("--set", sets, "Override one config key, as key=value; repeatable");
    }

    // File first, then --set, then --seed: later assignments win.
    ExperimentConfig build() const {
        std::string text = path.empty() ? std::string() : read_text(path);
        text += "\n";
        for (const auto& s : sets) {
            if (s.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got " + s);
            text += s + "\n";
        }
        if (seed) text += "seed=" + std::to_string(*seed) + "\n";
        return ExperimentConfig::from_text(text);
    }
};

// Applies stage-level overrides to a loaded model's config.
void apply_stage_sets(Model& model, const std::vector<std::string>& sets) {
    if (sets.empty()) return;
    std::string text = model.config.to_text();
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + s);
        const auto key = s.substr(0, eq);
        if (!kStageKeys.count(key)) throw ConfigError("--set " + key + " cannot change a trained checkpoint");
        text += s + "\n";
    }
    model.config = ExperimentConfig::from_text(text);
}

std::vector<gym::Trajectory> dataset_for(const ExperimentConfig& cfg, const std::string& data_path) {
    if (!data_path.empty()) return gym::read_dataset(data_path);
    return gym::generate_dataset(static_cast<int>(cfg.dataset_size), dataset_seed(cfg.seed));
}

void print_log(std::ostream& out, const std::string& stage, const TrainLog& log) {
    out << stage << ": " << log.epoch_loss.size() << " epochs";
    if (!log.epoch_loss.empty()) out << ", loss " << log.epoch_loss.front() << " -> " << log.epoch_loss.back();
    out << "\n";
}

Json log_json(const TrainLog& log) { return Json(log.epoch_loss); }

// Run state gathered while a command executes, written as the run manifest.
struct Run {
    std::string command;
    std::vector<std::string> args;
    std::string started = utc_now();
    std::optional<ExperimentConfig> config;
    std::vector<std::string> artifacts;
    Json extra = Json::object();
    fs::path manifest;  // empty: no manifest for this run

    void produced(const fs::path& p) { artifacts.push_back(p.string()); }

    void write(int status, const std::string& error) const {
        if (manifest.empty()) return;
        Json j;
        j["command"] = command;
        j["args"] = args;
        j["config"] = config ? config_json(*config) : Json(nullptr);
        j["started"] = started;
        j["finished"] = utc_now();
        j["artifacts"] = artifacts;
        j["exit_status"] = status;
        if (!error.empty()) j["error"] = error;
        for (const auto& [k, v] : extra.items()) j[k] = v;
        write_file_atomic(manifest, j.dump(2) + "\n");
    }
};

fs::path sidecar(const fs::path& out) {
    auto p = out;
    p += ".manifest.json";
    return p;
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Depth injection for RGB-only policies: data, training, evaluation and ablations.", "di2"};
    app.require_subcommand(1);
    app.fallthrough();  // --manifest may follow the subcommand
    app.set_help_all_flag("--help-all", "Print help for every subcommand");
    std::string manifest_flag;
    app.add_option("--manifest", manifest_flag,
                   "Run manifest path (default: next to the primary output; inspect-ckpt writes one only if set)");

    Run run;
    std::function<void()> action;

    // gen
    auto* gen = app.add_subcommand("gen", "Generate an expert trajectory dataset");
    int gen_n = 0;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "Number of trajectories")->required()->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "Dataset seed")->required();
    gen->add_option("--out", gen_out, "Output dataset file")->required();
    gen->callback([&] {
        action = [&] {
            run.manifest = sidecar(gen_out);
            ensure_parent(gen_out);
            const auto data = gym::generate_dataset(gen_n, gen_seed);
            gym::write_dataset(gen_out, data);
            run.produced(gen_out);
            std::size_t steps = 0;
            for (const auto& t : data) steps += t.steps.size();
            run.extra["trajectories"] = gen_n;
            run.extra["steps"] = steps;
            out << "wrote " << gen_n << " trajectories (" << steps << " steps) to " << gen_out << "\n";
        };
    });

    // train-warmup
    auto* warm = app.add_subcommand("train-warmup", "Warm-up stage: projections, task table and policy");
    ConfigOpts warm_cfg;
    std::string warm_data, warm_out;
    bool warm_zero = false;
    warm_cfg.add(warm);
    warm->add_option("--data", warm_data, "Dataset file (default: generated from the config seed)");
    warm->add_option("--out", warm_out, "Output checkpoint")->required();
    warm->add_flag("--zero-depth", warm_zero, "Train the RGB-only policy baseline with zeroed depth tokens");
    warm->callback([&] {
        action = [&] {
            run.manifest = sidecar(warm_out);
            const auto cfg = warm_cfg.build();
            run.config = cfg;
            auto model = make_model(cfg);
            const auto cache = build_cache(model, dataset_for(cfg, warm_data));
            WarmupOptions opts;
            opts.zero_depth = warm_zero;
            const auto log = warmup_train(model, cache, opts);
            print_log(out, "warm-up", log);
            run.extra["warmup_loss"] = log_json(log);
            ensure_parent(warm_out);
            save_checkpoint(warm_out, model);
            run.produced(warm_out);
        };
    });

    // train-align / train-codebook
    struct StageCmd {
        std::string ckpt, data, out;
        std::vector<std::string> sets;
    };
    StageCmd align_cmd, code_cmd;
    auto add_stage = [&](const std::string& name, const std::string& help, StageCmd& s) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--ckpt", s.ckpt, "Input checkpoint (warm-up complete)")->required();
        sub->add_option("--data", s.data, "Dataset file (default: generated from the checkpoint's config)");
        sub->add_option("--out", s.out, "Output checkpoint (may equal --ckpt)")->required();
        sub->add_option("--set", s.sets, "Override a stage hyperparameter, as key=value; repeatable");
        return sub;
    };
    auto stage_action = [&](StageCmd& s, const std::string& label, TrainLog (*train)(Model&, const SampleCache&)) {
        return [&s, &run, &out, label, train] {
            run.manifest = sidecar(s.out);
            auto model = load_checkpoint(s.ckpt);
            apply_stage_sets(model, s.sets);
            run.config = model.config;
            const auto cache = build_cache(model, dataset_for(model.config, s.data));
            const auto log = train(model, cache);
            print_log(out, label, log);
            run.extra[label + "_loss"] = log_json(log);
            ensure_parent(s.out);
            save_checkpoint(s.out, model);
            run.produced(s.out);
            out << "stage " << model.stage_tag() << "\n";
        };
    };
    add_stage("train-align", "Align stage: fit the depth predictor to frozen depth tokens", align_cmd)
        ->callback([&] { action = stage_action(align_cmd, "align", align_train); });
    add_stage("train-codebook", "Codebook stage: fit the depth-aware codebook to frozen depth tokens", code_cmd)
        ->callback([&] { action = stage_action(code_cmd, "codebook", codebook_train); });

    // train-all
    auto* all = app.add_subcommand("train-all", "Warm-up, align and codebook stages in sequence");
    ConfigOpts all_cfg;
    std::string all_data, all_out, all_order;
    all_cfg.add(all);
    all->add_option("--data", all_data, "Dataset file (default: generated from the config seed)");
    all->add_option("--out", all_out, "Output checkpoint")->required();
    all->add_option("--stage-order", all_order, "align_first or codebook_first; overrides the config")
        ->check(CLI::IsMember({"align_first", "codebook_first"}));
    all->callback([&] {
        action = [&] {
            run.manifest = sidecar(all_out);
            auto cfg = all_cfg.build();
            if (!all_order.empty()) {
                cfg.stage_order = all_order == "align_first" ? StageOrder::AlignFirst : StageOrder::CodebookFirst;
            }
            run.config = cfg;
            auto model = make_model(cfg);
            const auto cache = build_cache(model, dataset_for(cfg, all_data));
            train_all(model, cache);
            ensure_parent(all_out);
            save_checkpoint(all_out, model);
            run.produced(all_out);
            out << "stage " << model.stage_tag() << ", " << cache.samples << " samples\n";
        };
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Paired success-rate evaluation and action-error curves");
    std::string ev_ckpt, ev_dir, ev_modes;
    std::optional<std::size_t> ev_n;
    std::uint64_t ev_seed = 0;
    std::size_t ev_curves = 20;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint at stage DONE")->required();
    ev->add_option("--n", ev_n, "Episodes per mode (default: config eval_episodes)")->check(CLI::PositiveNumber);
    ev->add_option("--seed", ev_seed, "Evaluation seed");
    ev->add_option("--modes", ev_modes,
                   "Comma list from RGBD,RGB_ONLY,RGB_ONLY_NO_DAC,ZERO_DEPTH,EXPERT,RANDOM (default: the four "
                   "policy modes)");
    ev->add_option("--curve-rollouts", ev_curves, "Rollouts for the action-error curve; 0 skips it");
    ev->add_option("--out-dir", ev_dir, "Directory for report.csv, report.jsonl, error_curve.csv")->required();
    ev->callback([&] {
        action = [&] {
            run.manifest = fs::path(ev_dir) / "manifest.json";
            const auto model = load_checkpoint(ev_ckpt);
            run.config = model.config;
            const auto modes = ev_modes.empty() ? kPolicyModes : split_modes(ev_modes);
            const auto rep = evaluate(model, ev_n.value_or(model.config.eval_episodes), ev_seed, modes);
            fs::create_directories(ev_dir);
            append_csv(fs::path(ev_dir) / "report.csv", report_csv(rep));
            append_file(fs::path(ev_dir) / "report.jsonl", report_jsonl(rep));
            run.produced(fs::path(ev_dir) / "report.csv");
            run.produced(fs::path(ev_dir) / "report.jsonl");
            for (const auto& m : rep.modes) {
                out << m.mode << " success " << m.success_rate << " [" << m.ci.low << ", " << m.ci.high
                    << "] len " << m.mean_len << "\n";
            }
            out << "codebook utilization " << rep.utilization << "\n";
            if (ev_curves > 0) {
                const auto curves = action_error_curve(model, ev_curves, ev_seed);
                write_file_atomic(fs::path(ev_dir) / "error_curve.csv", curve_csv(curves));
                run.produced(fs::path(ev_dir) / "error_curve.csv");
                for (const auto& [mode, c] : curves.mean_distance)
                    out << "mean action distance to RGBD, " << mode << ": " << curves.overall_mean(mode) << "\n";
            }
        };
    });

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation grid over several seeds");
    ConfigOpts ab_cfg;
    std::string ab_seeds, ab_dir;
    std::size_t ab_jobs = 1, ab_curves = 20;
    ab_cfg.add(ab, false);
    ab->add_option("--seeds", ab_seeds, "Seed list, e.g. 0,1,2 or 0-4")->required();
    ab->add_option("--jobs", ab_jobs, "Worker threads, one seed each")->check(CLI::PositiveNumber);
    ab->add_option("--curve-rollouts", ab_curves, "Action-error rollouts per seed; 0 skips the curves");
    ab->add_option("--out-dir", ab_dir, "Directory for report.csv, report.jsonl, error_curve.csv")->required();
    ab->callback([&] {
        action = [&] {
            run.manifest = fs::path(ab_dir) / "manifest.json";
            const auto cfg = ab_cfg.build();
            run.config = cfg;
            const auto seeds = parse_seeds(ab_seeds);
            const auto results = ablation_grid(cfg, seeds, ab_jobs, ab_curves);
            fs::create_directories(ab_dir);
            append_csv(fs::path(ab_dir) / "report.csv", grid_csv(results));
            append_file(fs::path(ab_dir) / "report.jsonl", grid_jsonl(results));
            run.produced(fs::path(ab_dir) / "report.csv");
            run.produced(fs::path(ab_dir) / "report.jsonl");
            std::map<std::string, double> mean;
            std::vector<std::string> cells = kGridCells;
            for (const auto& r : results) {
                for (const auto* rows : {&r.rows, &r.alt_rows})
                    for (const auto& g : *rows) mean[g.cell] += g.success_rate / static_cast<double>(results.size());
                if (&r == &results.front())
                    for (const auto& g : r.alt_rows) cells.push_back(g.cell);
            }
            Json summary = Json::object();
            for (const auto& cell : cells) {
                out << cell << " mean success " << mean[cell] << "\n";
                summary[cell] = mean[cell];
            }
            run.extra["mean_success"] = summary;
            if (ab_curves > 0) {
                std::vector<ErrorCurves> parts, alt_parts;
                for (const auto& r : results) {
                    parts.push_back(r.curves);
                    if (!r.alt_rows.empty()) alt_parts.push_back(r.alt_curves);
                }
                auto merged = merge_curves(parts);
                if (!alt_parts.empty()) {
                    // The alternative codebook's curve is stored under its cell name.
                    auto alt = merge_curves(alt_parts);
                    merged.mean_distance[results.front().alt_rows.front().cell] = alt.mean_distance.at("RGB_ONLY");
                }
                write_file_atomic(fs::path(ab_dir) / "error_curve.csv", curve_csv(merged));
                run.produced(fs::path(ab_dir) / "error_curve.csv");
                for (const auto& [mode, c] : merged.mean_distance)
                    out << "mean action distance to RGBD, " << mode << ": " << merged.overall_mean(mode) << "\n";
            }
        };
    });

    // inspect-ckpt
    auto* ins = app.add_subcommand("inspect-ckpt", "Print a checkpoint's stage, config and array manifest");
    std::string ins_ckpt;
    bool ins_json = false;
    ins->add_option("--ckpt", ins_ckpt, "Checkpoint file")->required();
    ins->add_flag("--json", ins_json, "Emit JSON instead of text");
    ins->callback([&] {
        action = [&] {
            const auto info = inspect_checkpoint(read_text(ins_ckpt));
            char hex[17];
            std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(info.checksum));
            if (ins_json) {
                Json j;
                j["stage"] = info.stage;
                j["completed"] = info.completed;
                j["config"] = config_json(ExperimentConfig::from_text(info.config_text));
                Json arrays = Json::array();
                for (const auto& e : info.manifest)
                    arrays.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"count", e.count}});
                j["arrays"] = arrays;
                j["checksum"] = hex;
                out << j.dump(2) << "\n";
            } else {
                out << "stage " << info.stage << "\ncompleted";
                if (info.completed.empty()) out << " none";
                for (const auto& c : info.completed) out << " " << c;
                out << "\nchecksum " << hex << "\n\n[config]\n" << info.config_text << "\n[arrays]\n";
                for (const auto& e : info.manifest) {
                    out << e.name << " ";
                    for (std::size_t i = 0; i < e.shape.size(); ++i) out << (i ? "x" : "") << e.shape[i];
                    out << " offset " << e.offset << " count " << e.count << "\n";
                }
            }
        };
    });

    auto finish = [&](int status, const std::string& error) {
        try {
            run.write(status, error);
        } catch (const std::exception& e) {
            err << "di2: could not write run manifest: " << e.what() << "\n";
            return status == 0 ? 2 : status;
        }
        return status;
    };

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "di2: " << e.what() << "\n";
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return 1;
    }

    run.command = app.get_subcommands().front()->get_name();
    run.args = args;
    try {
        action();
        if (!manifest_flag.empty()) run.manifest = manifest_flag;
        if (!run.manifest.empty()) ensure_parent(run.manifest);
        return finish(0, "");
    } catch (const InternalError& e) {
        err << "di2: internal error: " << e.what() << "\n";
        if (!manifest_flag.empty()) run.manifest = manifest_flag;
        return finish(2, e.what());
    } catch (const Error& e) {
        err << "di2: " << e.what() << "\n";
        if (!manifest_flag.empty()) run.manifest = manifest_flag;
        return finish(1, e.what());
    } catch (const std::exception& e) {
        err << "di2: internal error: " << e.what() << "\n";
        if (!manifest_flag.empty()) run.manifest = manifest_flag;
        return finish(2, e.what());
    }
}

}  // namespace di2
