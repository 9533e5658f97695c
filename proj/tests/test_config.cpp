// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "di2/config.hpp"
#include "di2/error.hpp"

using namespace di2;

TEST_CASE("config: text round trip is exact") {
    ExperimentConfig c;
    c.codebook_lambda = 0.987654f;
    c.align_lr = 3.3e-4f;
    c.depth_predictor = DepthPredictor::Mlp;
    c.stage_order = StageOrder::CodebookFirst;
    c.codebook_revival = false;
    c.seed = 18446744073709551615ull;
    const auto back = ExperimentConfig::from_text(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.codebook_lambda == c.codebook_lambda);
    CHECK(back.align_lr == c.align_lr);
    CHECK(back.depth_predictor == DepthPredictor::Mlp);
    CHECK(back.stage_order == StageOrder::CodebookFirst);
    CHECK_FALSE(back.codebook_revival);
    CHECK(back.seed == c.seed);
}

TEST_CASE("config: comments, blanks and whitespace are ignored") {
    const auto c = ExperimentConfig::from_text("# header\n\n  codebook_size = 128  # trailing\n\tseed=7\n");
    CHECK(c.codebook_size == 128);
    CHECK(c.seed == 7);
    CHECK(c.token_dim == ExperimentConfig{}.token_dim);
}

TEST_CASE("config: unknown keys and bad values are rejected") {
    CHECK_THROWS_AS(ExperimentConfig::from_text("codebook_sise = 3\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("codebook_size = three\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("codebook_size = 3x\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("just a line\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("depth_predictor = cnn\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("codebook_revival = maybe\n"), ConfigError);
}

TEST_CASE("config: range validation") {
    CHECK_THROWS_AS(ExperimentConfig::from_text("codebook_lambda = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("codebook_lambda = 0\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("token_dim = 8\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("batch_size = 0\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("momentum = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_text("warmup_lr = 0\n"), ConfigError);
    CHECK_NOTHROW(ExperimentConfig{}.validate());
}

TEST_CASE("config: published codebook preset") {
    const auto p = ExperimentConfig::reference_preset();
    CHECK(p.codebook_size == 512);
    CHECK(p.codebook_lambda == 0.99f);
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("config: keys are unique and all appear in the text form") {
    const auto keys = ExperimentConfig::keys();
    const std::set<std::string> unique(keys.begin(), keys.end());
    CHECK(unique.size() == keys.size());
    const auto text = ExperimentConfig{}.to_text();
    for (const auto& k : keys) CHECK(text.find(k + "=") != std::string::npos);
}

TEST_CASE("config: load from file and missing file") {
    const auto path = std::filesystem::temp_directory_path() / "di2_test_config.cfg";
    {
        std::ofstream out(path);
        out << "align_epochs = 3\n";
    }
    CHECK(ExperimentConfig::load(path).align_epochs == 3);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(ExperimentConfig::load(path), ConfigError);
}
