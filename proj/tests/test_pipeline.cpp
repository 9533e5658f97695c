// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "di2/checkpoint.hpp"
#include "di2/error.hpp"
#include "di2/gradcheck.hpp"
#include "di2/pipeline.hpp"

using namespace di2;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.dataset_size = 8;
    c.policy_hidden = 32;
    c.mlp_hidden = 32;
    c.codebook_size = 16;
    c.warmup_epochs = 4;
    c.align_epochs = 4;
    c.codebook_epochs = 4;
    c.eval_episodes = 4;
    return c;
}

SampleCache cache_for(const Model& m, int trajectories, std::uint64_t seed) {
    return build_cache(m, gym::generate_dataset(trajectories, seed));
}

Tensor all_rgb(const Model& m, const SampleCache& c) { return rgb_tokens(m, c.rgb, c.samples); }
Tensor all_depth(const Model& m, const SampleCache& c) { return depth_tokens(m, c.depth, c.samples); }

// Align loss of the trained predictor over a whole cache, optionally with the
// RGB tokens of sample i paired with the depth tokens of sample perm[i].
double align_value(const Model& m, const Tensor& rgb, const Tensor& depth) {
    NoGradGuard guard;
    const auto pred = predict_depth(m, rgb);
    double s = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred.data()[i] - depth.data()[i];
        s += d * d;
    }
    return s / static_cast<double>(rgb.dim(0));
}

Tensor permute_samples(const Tensor& t, const std::vector<std::size_t>& perm) {
    const std::size_t w = t.numel() / t.dim(0);
    std::vector<float> out(t.numel());
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy_n(t.data().data() + perm[i] * w, w, out.data() + i * w);
    return Tensor(t.shape(), std::move(out));
}

}  // namespace

TEST_CASE("actions: normalisation round trip") {
    const gym::Action a{0.1f, -0.05f, 0.025f, 1.f};
    const auto y = to_normalised(a);
    CHECK(y[0] == Catch::Approx(1.0));
    CHECK(y[1] == Catch::Approx(-0.5));
    CHECK(y[3] == 1.f);
    const auto back = to_physical(y);
    for (int i = 0; i < 4; ++i) CHECK(back[i] == Catch::Approx(a[i]));
}

TEST_CASE("make_model is deterministic and names every group") {
    const auto a = make_model(small_config());
    const auto b = make_model(small_config());
    CHECK(a.group_checksums() == b.group_checksums());
    const auto groups = a.group_checksums();
    for (const char* g : {"encoder", "proj_rgb", "proj_depth", "task", "policy", "dcm", "mlp", "codebook"}) {
        INFO(g);
        CHECK(groups.count(g) == 1);
    }
    CHECK(a.stage_tag() == "INIT");
    auto cfg = small_config();
    cfg.seed = 1;
    CHECK(make_model(cfg).group_checksums() != groups);
}

TEST_CASE("policy: pooling weights are a distribution over tokens") {
    const auto m = make_model(small_config());
    std::mt19937_64 gen(3);
    std::normal_distribution<float> nd;
    std::vector<float> r(2 * 16 * 16), d(2 * 16 * 16), p(6);
    for (auto* v : {&r, &d, &p})
        for (auto& x : *v) x = nd(gen);
    const std::array<std::size_t, 2> ids{0, 3};
    Tensor w;
    const auto out = policy_forward(m.warm.policy, ops::gather_rows(m.warm.task_table, ids),
                                    Tensor({2, 16, 16}, r), Tensor({2, 16, 16}, d), Tensor({2, 3}, p), &w);
    CHECK(out.shape() == Shape{2, 4});
    REQUIRE(w.shape() == Shape{2, m.config.policy_queries, 16});
    for (std::size_t row = 0; row < 2 * m.config.policy_queries; ++row) {
        double s = 0;
        for (std::size_t k = 0; k < 16; ++k) s += w.data()[row * 16 + k];
        CHECK(s == Catch::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(policy_forward(m.warm.policy, ops::gather_rows(m.warm.task_table, ids), Tensor({2, 16, 16}, r),
                                   Tensor({2, 16, 16}, d), Tensor({2, 2}, std::vector<float>(4))),
                    DimensionError);
}

TEST_CASE("warm-up loss gradients match central differences") {
    auto cfg = small_config();
    cfg.policy_hidden = 8;
    const auto data = gym::generate_dataset(1, 11);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        cfg.seed = seed;
        const auto m = make_model(cfg);
        const auto cache = build_cache(m, data);
        const std::size_t b = 2, w = 16 * cache.d0;
        const auto rgb = tensor_cast<double>(
            Tensor({b * 16, cache.d0}, std::vector<float>(cache.rgb.begin(), cache.rgb.begin() + b * w)));
        const auto depth = tensor_cast<double>(
            Tensor({b * 16, cache.d0}, std::vector<float>(cache.depth.begin(), cache.depth.begin() + b * w)));
        const auto proprio = tensor_cast<double>(
            Tensor({b, 3}, std::vector<float>(cache.proprio.begin(), cache.proprio.begin() + b * 3)));
        const auto target = tensor_cast<double>(
            Tensor({b, 4}, std::vector<float>(cache.actions.begin(), cache.actions.begin() + b * 4)));
        const std::vector<std::size_t> tasks{cache.tasks[0], (cache.tasks[0] + 1) % gym::kTaskCount};
        const auto p = warmup_cast<double>(m.warm);
        for (bool zero : {false, true}) {
            const double err = grad_check_params<double>(
                [&] { return warmup_loss(p, rgb, depth, tasks, proprio, target, zero); }, p.list(), 1e-4);
            INFO("seed " << seed << " zero_depth " << zero);
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("warm-up: one trajectory is memorised") {
    auto cfg = small_config();
    cfg.policy_hidden = 64;
    auto m = make_model(cfg);
    const auto cache = cache_for(m, 1, 5);
    WarmupOptions opts;
    opts.epochs = 2000;  // one step per epoch: the trajectory fits in one batch
    const auto log = warmup_train(m, cache, opts);
    CHECK(log.epoch_loss.size() == 2000);
    CHECK(log.epoch_loss.back() < 1e-3);
}

TEST_CASE("warm-up: frozen encoder untouched, loss decreases at lr 1e-3") {
    auto m = make_model(small_config());
    const auto cache = cache_for(m, 16, 21);
    const auto before = m.group_checksums();
    WarmupOptions opts;
    opts.epochs = 30;
    opts.lr = 1e-3f;
    const auto log = warmup_train(m, cache, opts);
    const auto after = m.group_checksums();
    CHECK(after.at("encoder") == before.at("encoder"));
    CHECK(after.at("policy") != before.at("policy"));
    for (const char* g : {"dcm", "mlp", "codebook"}) CHECK(after.at(g) == before.at(g));
    for (std::size_t e = 1; e < log.epoch_loss.size(); ++e) {
        INFO("epoch " << e);
        CHECK(log.epoch_loss[e] <= 1.05 * log.epoch_loss[e - 1]);
    }
    CHECK(log.epoch_loss.back() < log.epoch_loss.front());
    CHECK(m.stage_tag() == "WARMUP");
}

TEST_CASE("warm-up: empty dataset and divergence are reported") {
    auto m = make_model(small_config());
    SampleCache empty;
    CHECK_THROWS_AS(warmup_train(m, empty), ContractError);
    const auto cache = cache_for(m, 4, 2);
    WarmupOptions opts;
    opts.lr = 1e6f;
    opts.epochs = 20;
    try {
        warmup_train(m, cache, opts);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("align: staging, freeze contract, held-out drop and pairing") {
    auto cfg = small_config();
    cfg.dataset_size = 40;
    auto m = make_model(cfg);
    const auto cache = cache_for(m, static_cast<int>(cfg.dataset_size), 31);
    CHECK_THROWS_AS(align_train(m, cache), StagingError);
    CHECK_THROWS_AS(codebook_train(m, cache), StagingError);
    warmup_train(m, cache);

    const auto held = cache_for(m, 10, 999);
    const auto held_rgb = all_rgb(m, held), held_depth = all_depth(m, held);
    const double initial = align_value(m, held_rgb, held_depth);

    const auto before = m.group_checksums();
    m.config.align_epochs = 20;
    m.config.align_lr = 5e-4f;
    const auto log = align_train(m, cache);
    const auto after = m.group_checksums();
    for (const auto& [g, sum] : before) {
        INFO(g);
        if (g == "dcm") CHECK(after.at(g) != sum);
        else CHECK(after.at(g) == sum);
    }
    CHECK(log.epoch_loss.size() == 20);

    const double trained = align_value(m, held_rgb, held_depth);
    CHECK(trained <= 0.5 * initial);

    std::vector<std::size_t> perm(held.samples);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::mt19937_64 gen(4);
    std::shuffle(perm.begin(), perm.end(), gen);
    const double shuffled = align_value(m, permute_samples(held_rgb, perm), held_depth);
    CHECK(shuffled > trained);
}

TEST_CASE("align: the MLP substitute trains only its own parameters") {
    auto cfg = small_config();
    cfg.depth_predictor = DepthPredictor::Mlp;
    auto m = make_model(cfg);
    const auto cache = cache_for(m, 8, 41);
    warmup_train(m, cache);
    const auto before = m.group_checksums();
    align_train(m, cache);
    const auto after = m.group_checksums();
    for (const auto& [g, sum] : before) {
        INFO(g);
        if (g == "mlp") CHECK(after.at(g) != sum);
        else CHECK(after.at(g) == sum);
    }
}

TEST_CASE("codebook: freeze contract, MSE does not increase, stages commute") {
    auto cfg = small_config();
    auto warm = make_model(cfg);
    const auto cache = cache_for(warm, static_cast<int>(cfg.dataset_size), 51);
    warmup_train(warm, cache);
    const auto depth = all_depth(warm, cache);
    const Tensor flat({depth.numel() / warm.config.token_dim, warm.config.token_dim}, depth.values());

    auto a = clone_model(warm);
    const double initial = quantization_mse(a.codebook, flat);
    const auto before = a.group_checksums();
    codebook_train(a, cache);
    const auto after = a.group_checksums();
    for (const auto& [g, sum] : before) {
        INFO(g);
        if (g == "codebook") CHECK(after.at(g) != sum);
        else CHECK(after.at(g) == sum);
    }
    CHECK(quantization_mse(a.codebook, flat) <= initial);
    CHECK(a.stage_tag() == "CODEBOOK");
    align_train(a, cache);
    CHECK(a.stage_tag() == "DONE");

    auto b = clone_model(warm);
    align_train(b, cache);
    CHECK(b.stage_tag() == "ALIGN");
    codebook_train(b, cache);
    CHECK(encode_checkpoint(a) == encode_checkpoint(b));
}

TEST_CASE("full pipeline is bit-reproducible") {
    auto cfg = small_config();
    auto run = [&] {
        auto m = make_model(cfg);
        train_all(m, cache_for(m, static_cast<int>(cfg.dataset_size), 61));
        return encode_checkpoint(m);
    };
    CHECK(run() == run());
    cfg.stage_order = StageOrder::CodebookFirst;
    auto m = make_model(cfg);
    train_all(m, cache_for(m, static_cast<int>(cfg.dataset_size), 61));
    CHECK(m.done());
}

TEST_CASE("fine-tune: requires DONE and touches only the policy") {
    auto cfg = small_config();
    cfg.finetune_epochs = 2;
    auto m = make_model(cfg);
    const auto cache = cache_for(m, 4, 71);
    CHECK_THROWS_AS(finetune_train(m, cache), StagingError);
    warmup_train(m, cache);
    align_train(m, cache);
    codebook_train(m, cache);
    const auto before = m.group_checksums();
    finetune_train(m, cache);
    const auto after = m.group_checksums();
    for (const auto& [g, sum] : before) {
        INFO(g);
        if (g == "policy") CHECK(after.at(g) != sum);
        else CHECK(after.at(g) == sum);
    }
}

TEST_CASE("inference: modes differ only through the depth tokens") {
    auto m = make_model(small_config());
    const auto cache = cache_for(m, 8, 81);
    train_all(m, cache);
    const auto scene = gym::generate_scene(1234);
    const auto obs = gym::render(scene);
    const auto feat = frozen_features(m.encoder, extract_patches(obs.rgb, 3));
    const auto rgb = rgb_tokens(m, feat.data(), 1);
    const auto real = depth_tokens(m, frozen_features(m.encoder, extract_patches(obs.depth, 1)).data(), 1);
    const auto pred = predict_depth(m, rgb);
    const auto quant = quantize(m.codebook, pred).values;

    auto same = [](const gym::Action& a, const gym::Action& b) {
        for (int i = 0; i < 4; ++i)
            if (a[i] != b[i]) return false;
        return true;
    };
    auto via_tokens = [&](const Tensor& depth) {
        return to_physical(policy_action(m, rgb, depth, obs.proprio, obs.task_id));
    };
    // Each mode equals the shared policy fed that mode's depth tokens, so
    // swapping the token set is the only difference between modes.
    CHECK(same(infer_action(m, obs, InferenceMode::Rgbd), via_tokens(real)));
    CHECK(same(infer_action(m, obs, InferenceMode::RgbOnly), via_tokens(quant)));
    CHECK(same(infer_action(m, obs, InferenceMode::RgbOnlyNoDac), via_tokens(pred)));
    CHECK(same(infer_action(m, obs, InferenceMode::ZeroDepth), via_tokens(Tensor::zeros(rgb.shape()))));
    CHECK_FALSE(same(via_tokens(real), via_tokens(quant)));
}

TEST_CASE("inference: ZERO_DEPTH equals RGBD when depth tokens are zero") {
    auto m = make_model(small_config());
    for (auto* t : {&m.warm.proj_depth.weight, &m.warm.proj_depth.bias})
        for (auto& v : t->data()) v = 0.f;
    const auto obs = gym::render(gym::generate_scene(77));
    const auto a = infer_action(m, obs, InferenceMode::Rgbd);
    const auto b = infer_action(m, obs, InferenceMode::ZeroDepth);
    for (int i = 0; i < 4; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("inference: argument and staging contracts") {
    auto m = make_model(small_config());
    const auto obs = gym::render(gym::generate_scene(5));
    CHECK_THROWS_AS(infer_action(m, obs.rgb, obs.proprio, obs.task_id, InferenceMode::Rgbd), ContractError);
    CHECK_THROWS_AS(infer_action(m, obs.rgb, obs.proprio, obs.task_id, InferenceMode::ZeroDepth, &obs.depth),
                    ContractError);
    CHECK_THROWS_AS(infer_action(m, obs.rgb, obs.proprio, 9, InferenceMode::ZeroDepth), ContractError);
    CHECK_THROWS_AS(infer_action(m, obs, InferenceMode::RgbOnly), StagingError);
    CHECK_THROWS_AS(infer_action(m, obs, InferenceMode::RgbOnlyNoDac), StagingError);
    CHECK_NOTHROW(infer_action(m, obs, InferenceMode::ZeroDepth));
    CHECK(parse_mode("RGB_ONLY") == InferenceMode::RgbOnly);
    CHECK_THROWS_AS(parse_mode("DEPTH"), ContractError);
    for (auto mode : {InferenceMode::Rgbd, InferenceMode::RgbOnly, InferenceMode::RgbOnlyNoDac,
                      InferenceMode::ZeroDepth})
        CHECK(parse_mode(to_string(mode)) == mode);
}
