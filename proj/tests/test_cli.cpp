// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "di2/checkpoint.hpp"
#include "di2/cli.hpp"
#include "json.hpp"

using namespace di2;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Scratch directory removed at scope exit.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& f) const { return (path / f).string(); }
};

const char* kSmallConfig =
    "dataset_size = 4\npolicy_hidden = 16\nmlp_hidden = 16\ncodebook_size = 8\n"
    "warmup_epochs = 2\nalign_epochs = 2\ncodebook_epochs = 2\neval_episodes = 4\n";

std::string write_config(const TempDir& dir) {
    const auto p = dir / "c.txt";
    std::ofstream(p) << kSmallConfig;
    return p;
}

}  // namespace

TEST_CASE("cli: usage errors exit 1 with usage text") {
    auto r = run({});
    CHECK(r.code == 1);
    r = run({"frobnicate"});
    CHECK(r.code == 1);
    CHECK(!r.err.empty());
    r = run({"gen", "--n", "3", "--seed", "1", "--out", "x", "--bogus"});
    CHECK(r.code == 1);
    CHECK(r.err.find("Usage") != std::string::npos);
    r = run({"gen", "--n", "3"});
    CHECK(r.code == 1);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"eval", "--help"}).code == 0);
}

TEST_CASE("cli: gen writes a dataset and a manifest") {
    TempDir dir("di2_cli_gen");
    const auto data = dir / "data.bin";
    const auto r = run({"gen", "--n", "5", "--seed", "7", "--out", data});
    REQUIRE(r.code == 0);
    CHECK(gym::read_dataset(data).size() == 5);
    CHECK(slurp(data) == gym::encode_dataset(gym::generate_dataset(5, 7)));
    const auto m = nlohmann::json::parse(slurp(data + ".manifest.json"));
    CHECK(m["command"] == "gen");
    CHECK(m["exit_status"] == 0);
    CHECK(m["artifacts"][0] == data);
    CHECK(m.contains("started"));
    CHECK(m.contains("finished"));
}

TEST_CASE("cli: inspect-ckpt lists the declared arrays") {
    TempDir dir("di2_cli_inspect");
    const auto cfg = write_config(dir);
    const auto ckpt = dir / "w.ckpt";
    REQUIRE(run({"train-warmup", "--config", cfg, "--seed", "3", "--out", ckpt}).code == 0);
    const auto r = run({"inspect-ckpt", "--ckpt", ckpt});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("stage WARMUP") != std::string::npos);
    for (const auto& [name, t] : load_checkpoint(ckpt).named_arrays()) CHECK(r.out.find(name + " ") != std::string::npos);
    const auto j = run({"inspect-ckpt", "--ckpt", ckpt, "--json"});
    REQUIRE(j.code == 0);
    CHECK(nlohmann::json::parse(j.out)["stage"] == "WARMUP");
    CHECK(run({"inspect-ckpt", "--ckpt", dir / "missing.ckpt"}).code == 1);
    std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
    const auto bad = run({"inspect-ckpt", "--ckpt", dir / "bad.ckpt"});
    CHECK(bad.code == 1);
    CHECK(bad.err.find('\n') == bad.err.size() - 1);
}

TEST_CASE("cli: train-all twice gives identical checkpoints") {
    TempDir dir("di2_cli_repro");
    const auto cfg = write_config(dir);
    REQUIRE(run({"train-all", "--config", cfg, "--seed", "7", "--out", dir / "a.ckpt"}).code == 0);
    REQUIRE(run({"train-all", "--config", cfg, "--seed", "7", "--out", dir / "b.ckpt"}).code == 0);
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    REQUIRE(run({"train-all", "--config", cfg, "--seed", "8", "--out", dir / "c.ckpt"}).code == 0);
    CHECK(slurp(dir / "a.ckpt") != slurp(dir / "c.ckpt"));
}

TEST_CASE("cli: staged training matches train-all") {
    TempDir dir("di2_cli_stages");
    const auto cfg = write_config(dir);
    const auto data = dir / "d.bin";
    REQUIRE(run({"gen", "--n", "4", "--seed", "11", "--out", data}).code == 0);
    const auto ckpt = dir / "s.ckpt";
    REQUIRE(run({"train-warmup", "--config", cfg, "--seed", "2", "--data", data, "--out", ckpt}).code == 0);
    REQUIRE(run({"train-align", "--ckpt", ckpt, "--data", data, "--out", ckpt}).code == 0);
    REQUIRE(run({"train-codebook", "--ckpt", ckpt, "--data", data, "--out", ckpt}).code == 0);
    REQUIRE(run({"train-all", "--config", cfg, "--seed", "2", "--data", data, "--out", dir / "all.ckpt"}).code == 0);
    CHECK(slurp(ckpt) == slurp(dir / "all.ckpt"));
}

TEST_CASE("cli: stage order and override contracts") {
    TempDir dir("di2_cli_contracts");
    const auto cfg = write_config(dir);
    const auto init = dir / "init.ckpt";
    save_checkpoint(init, make_model(ExperimentConfig::from_text(kSmallConfig)));
    auto r = run({"train-align", "--ckpt", init, "--out", dir / "x.ckpt"});
    CHECK(r.code == 1);
    CHECK(r.err.find("stage") != std::string::npos);
    CHECK(!fs::exists(dir / "x.ckpt"));
    const auto m = nlohmann::json::parse(slurp(dir / "x.ckpt.manifest.json"));
    CHECK(m["exit_status"] == 1);
    CHECK(m["artifacts"].empty());

    r = run({"train-warmup", "--config", cfg, "--set", "no_such_key=1", "--out", dir / "y.ckpt"});
    CHECK(r.code == 1);
    r = run({"train-warmup", "--config", cfg, "--set", "warmup_lr=1e9", "--out", dir / "y.ckpt"});
    CHECK(r.code == 1);
    CHECK(r.err.find("diverged") != std::string::npos);
    REQUIRE(run({"train-warmup", "--config", cfg, "--out", dir / "w.ckpt"}).code == 0);
    r = run({"train-align", "--ckpt", dir / "w.ckpt", "--set", "token_dim=8", "--out", dir / "z.ckpt"});
    CHECK(r.code == 1);
    CHECK(run({"train-align", "--ckpt", dir / "w.ckpt", "--set", "align_epochs=1", "--out", dir / "z.ckpt"}).code == 0);
    CHECK(run({"eval", "--ckpt", dir / "w.ckpt", "--out-dir", dir / "ev"}).code == 1);
    CHECK(run({"ablate", "--config", cfg, "--seeds", "3-1", "--out-dir", dir / "ab"}).code == 1);
}

TEST_CASE("cli: eval reports append and are reproducible") {
    TempDir dir("di2_cli_eval");
    const auto cfg = write_config(dir);
    const auto ckpt = dir / "m.ckpt";
    REQUIRE(run({"train-all", "--config", cfg, "--seed", "5", "--out", ckpt}).code == 0);
    const std::vector<std::string> eval{"eval", "--ckpt", ckpt, "--n", "4", "--seed", "9", "--curve-rollouts", "3",
                                        "--out-dir"};
    auto a = eval, b = eval;
    a.push_back(dir / "a");
    b.push_back(dir / "b");
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    for (const auto* f : {"report.csv", "report.jsonl", "error_curve.csv"})
        CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
    REQUIRE(run(a).code == 0);
    const auto csv = slurp(dir.path / "a" / "report.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2 * 4);
    const auto m = nlohmann::json::parse(slurp(dir.path / "a" / "manifest.json"));
    CHECK(m["command"] == "eval");
    CHECK(m["artifacts"].size() == 3);
    CHECK(m["config"]["seed"] == "5");
}

TEST_CASE("cli: ablate writes one row per cell and seed") {
    TempDir dir("di2_cli_ablate");
    const auto cfg = write_config(dir);
    const auto r = run({"ablate", "--config", cfg, "--seeds", "0,1", "--curve-rollouts", "2", "--out-dir", dir / "ab"});
    REQUIRE(r.code == 0);
    const auto csv = slurp(dir.path / "ab" / "report.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6 * 2);
    CHECK(fs::exists(dir.path / "ab" / "error_curve.csv"));
    CHECK(r.out.find("DCM_DAC mean success") != std::string::npos);
    CHECK(run({"ablate", "--config", cfg, "--seeds", "0", "--manifest", dir / "m.json", "--out-dir", dir / "ab"})
              .code == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "m.json"))["command"] == "ablate");
}
