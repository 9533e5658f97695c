// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "di2/dcm.hpp"
#include "di2/featurizer.hpp"
#include "di2/gradcheck.hpp"

using namespace di2;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<float> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<float>(dist(gen));
    return Tensor(std::move(shape), std::move(v));
}

DcmParams random_dcm(std::uint64_t seed) {
    return make_dcm(DcmShape{}, seed, position_tags(16, 16, 1.f));
}

Tensor scalar_param(float v) { return Tensor({1, 1}, {v}, true); }

}  // namespace

TEST_CASE("zeroed output maps make the stack return P for any input") {
    std::mt19937_64 gen(1);
    auto p = random_dcm(3);
    zero_output_maps(p);
    const auto out = dcm_forward(p, random_tensor({3, 16, 16}, gen, 5.0));
    REQUIRE(out.shape() == Shape{3, 16, 16});
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < 256; ++i) CHECK(out.data()[b * 256 + i] == p.queries.data()[i]);
}

TEST_CASE("single token, unit maps: hand-evaluated forward") {
    DcmParams p;
    p.queries = scalar_param(1.f);
    BasicDcmLayer<float> l{scalar_param(1.f), scalar_param(1.f), scalar_param(1.f), scalar_param(1.f),
                           scalar_param(1.f), Tensor({1}, {0.f}, true),
                           scalar_param(1.f), Tensor({1}, {0.f}, true)};
    p.layers.push_back(l);
    std::vector<Tensor> attn;
    const auto out = dcm_forward(p, Tensor({1, 1, 1}, {1.f}), &attn);
    // keys = values = [1, 1]; scores equal so weights are [0.5, 0.5]; attended 1.
    // residual: 1 + 1 = 2; FFN relu(2) = 2; residual: 2 + 2 = 4.
    REQUIRE(attn.size() == 1);
    CHECK(attn[0].shape() == Shape{1, 1, 2});
    CHECK(attn[0].data()[0] == 0.5f);
    CHECK(attn[0].data()[1] == 0.5f);
    CHECK(out.item() == 4.f);
}

TEST_CASE("attention rows sum to one") {
    std::mt19937_64 gen(2);
    const auto p = random_dcm(4);
    std::vector<Tensor> attn;
    dcm_forward(p, random_tensor({4, 16, 16}, gen, 3.0), &attn);
    REQUIRE(attn.size() == 2);
    for (const auto& w : attn) {
        REQUIRE(w.shape() == Shape{4, 16, 32});
        for (std::size_t r = 0; r < 4 * 16; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 32; ++c) s += w.data()[r * 32 + c];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("zero key map forces uniform weights and permutation invariance") {
    std::mt19937_64 gen(3);
    auto p = random_dcm(5);
    for (auto& l : p.layers)
        for (auto& v : l.wk.data()) v = 0.f;
    const auto f = random_tensor({1, 16, 16}, gen);
    std::vector<std::size_t> perm(16);
    for (std::size_t i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;
    std::vector<float> shuffled(256);
    for (std::size_t i = 0; i < 16; ++i)
        std::copy_n(f.data().data() + perm[i] * 16, 16, shuffled.data() + i * 16);
    const auto a = dcm_forward(p, f);
    const auto b = dcm_forward(p, Tensor({1, 16, 16}, shuffled));
    for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-5);
}

TEST_CASE("input token dimension must match") {
    const auto p = random_dcm(6);
    CHECK_THROWS_AS(dcm_forward(p, Tensor::zeros({1, 16, 8})), DimensionError);
    CHECK_THROWS_AS(dcm_forward(p, Tensor::zeros({16, 16})), DimensionError);
    CHECK_THROWS_AS(align_loss(p, Tensor::zeros({2, 16, 16}), Tensor::zeros({2, 8, 16})), DimensionError);
}

TEST_CASE("align loss toy values") {
    // d(loss)/d(output) = 2 (output - target) through a scalar squared error.
    const auto out = Tensor({1, 1, 1}, {1.f}, true);
    const auto loss = batch_squared_error(out, Tensor({1, 1, 1}, {0.f}));
    CHECK(loss.item() == 1.f);
    backward(loss);
    CHECK(out.grad()[0] == 2.f);

    auto p = random_dcm(7);
    zero_output_maps(p);
    const auto target = dcm_forward(p, Tensor::zeros({2, 16, 16}));
    CHECK(align_loss(p, Tensor::zeros({2, 16, 16}), target).item() == 0.f);
}

TEST_CASE("align loss sends gradient to DCM parameters only") {
    std::mt19937_64 gen(8);
    const auto p = random_dcm(9);
    auto f_rgb = random_tensor({2, 16, 16}, gen);
    auto f_depth = random_tensor({2, 16, 16}, gen);
    f_rgb.set_requires_grad(true);
    f_depth.set_requires_grad(true);
    backward(align_loss(p, f_rgb, f_depth));
    CHECK_FALSE(f_rgb.has_grad());
    CHECK_FALSE(f_depth.has_grad());
    for (const auto& [name, t] : p.named()) {
        INFO(name);
        CHECK(t.has_grad());
    }
}

TEST_CASE("align loss gradients match central differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        std::mt19937_64 gen(100 + seed);
        const auto p = dcm_cast<double>(make_dcm(DcmShape{4, 4, 2, 2}, seed, position_tags(4, 4, 1.f)));
        const auto f_rgb = tensor_cast<double>(random_tensor({2, 5, 4}, gen));
        const auto f_depth = tensor_cast<double>(random_tensor({2, 4, 4}, gen));
        std::vector<BasicTensor<double>> params;
        for (const auto& [n, t] : p.named()) params.push_back(t);
        const double err = grad_check_params<double>([&] { return align_loss(p, f_rgb, f_depth); },
                                                     params, 1e-4);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("MLP predictor: shape, mean-pool dependence, gradients") {
    std::mt19937_64 gen(10);
    const auto m = make_mlp_predictor(16, 16, 32, 1);
    const auto f = random_tensor({3, 16, 16}, gen);
    CHECK(mlp_forward(m, f).shape() == Shape{3, 16, 16});

    // Reversing the token order leaves the mean, and so the output, unchanged.
    std::vector<float> rev(f.numel());
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t t = 0; t < 16; ++t)
            std::copy_n(f.data().data() + (b * 16 + t) * 16, 16, rev.data() + (b * 16 + 15 - t) * 16);
    const auto a = mlp_forward(m, f), b = mlp_forward(m, Tensor({3, 16, 16}, rev));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-5);

    const auto md = mlp_cast<double>(make_mlp_predictor(3, 4, 5, 2));
    const auto fr = tensor_cast<double>(random_tensor({2, 6, 4}, gen));
    const auto fd = tensor_cast<double>(random_tensor({2, 3, 4}, gen));
    std::vector<BasicTensor<double>> params;
    for (const auto& [n, t] : md.named()) params.push_back(t);
    CHECK(grad_check_params<double>([&] { return mlp_align_loss(md, fr, fd); }, params, 1e-4) < 1e-4);
}
