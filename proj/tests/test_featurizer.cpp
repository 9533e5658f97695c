// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "di2/featurizer.hpp"
#include "di2/synthgym.hpp"

using namespace di2;

namespace {

std::vector<float> random_raster(int channels, std::mt19937_64& gen) {
    std::uniform_real_distribution<float> u(0.f, 1.f);
    std::vector<float> r(static_cast<std::size_t>(channels * gym::kPixels));
    for (auto& v : r) v = u(gen);
    return r;
}

// Pixel (y, x, channel) of patch p, flattened in channel, row, column order.
double patch_value(const std::vector<float>& raster, int channels, int patch, int j) {
    const int ch = j / 64, r = (j % 64) / 8, c = j % 8;
    const int y = (patch / 4) * 8 + r, x = (patch % 4) * 8 + c;
    const int src = channels == 1 ? 0 : ch;
    return raster[static_cast<std::size_t>(src * 1024 + y * 32 + x)];
}

std::vector<double> encode_oracle(const std::vector<float>& raster, int channels,
                                  const FrozenEncoder& enc, const Projection& proj) {
    const std::size_t d0 = enc.out_dim(), d = proj.bias.numel();
    std::vector<double> out(16 * d);
    for (int p = 0; p < 16; ++p) {
        std::vector<double> feat(d0, 0.0);
        for (std::size_t o = 0; o < d0; ++o)
            for (int j = 0; j < 192; ++j)
                feat[o] += patch_value(raster, channels, p, j) * enc.weight.data()[j * d0 + o];
        for (std::size_t o = 0; o < d; ++o) {
            double acc = proj.bias.data()[o];
            for (std::size_t i = 0; i < d0; ++i) acc += feat[i] * proj.weight.data()[i * d + o];
            out[p * d + o] = acc;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("encoder columns are orthonormal and seed-determined") {
    const auto enc = make_frozen_encoder(5, 32);
    REQUIRE(enc.weight.shape() == Shape{192, 32});
    for (std::size_t a = 0; a < 32; ++a)
        for (std::size_t b = 0; b < 32; ++b) {
            double dot = 0;
            for (std::size_t i = 0; i < 192; ++i)
                dot += double(enc.weight.data()[i * 32 + a]) * enc.weight.data()[i * 32 + b];
            CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-5);
        }
    CHECK(make_frozen_encoder(5, 32).checksum() == enc.checksum());
    CHECK(make_frozen_encoder(6, 32).checksum() != enc.checksum());
    CHECK_FALSE(enc.weight.requires_grad());
}

TEST_CASE("zero raster yields the projection bias on every token") {
    const auto enc = make_frozen_encoder(1, 32);
    auto proj = make_projection(32, 16, 2);
    for (std::size_t i = 0; i < 16; ++i) proj.bias.data()[i] = 0.25f * float(i) - 1.f;
    const std::vector<float> zero(3 * 1024, 0.f);
    const auto tokens = encode(zero, 3, enc, proj);
    REQUIRE(tokens.shape() == Shape{16, 16});
    for (std::size_t t = 0; t < 16; ++t)
        for (std::size_t i = 0; i < 16; ++i) CHECK(tokens.data()[t * 16 + i] == proj.bias.data()[i]);
}

TEST_CASE("encode matches patch-extract plus two-matmul oracle") {
    std::mt19937_64 gen(11);
    const auto enc = make_frozen_encoder(3, 32);
    auto proj = make_projection(32, 16, 4);
    for (auto& b : proj.bias.data()) b = std::normal_distribution<float>(0.f, 1.f)(gen);
    for (int channels : {3, 1}) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto raster = random_raster(channels, gen);
            const auto tokens = encode(raster, channels, enc, proj);
            const auto oracle = encode_oracle(raster, channels, enc, proj);
            double worst = 0;
            for (std::size_t i = 0; i < oracle.size(); ++i)
                worst = std::max(worst, std::abs(tokens.data()[i] - oracle[i]));
            CHECK(worst < 1e-5);
        }
    }
}

TEST_CASE("depth raster is replicated across encoder channels") {
    std::mt19937_64 gen(12);
    const auto depth = random_raster(1, gen);
    std::vector<float> tripled;
    for (int c = 0; c < 3; ++c) tripled.insert(tripled.end(), depth.begin(), depth.end());
    CHECK(extract_patches(depth, 1) == extract_patches(tripled, 3));
}

TEST_CASE("encode is linear in the raster once the bias is zero") {
    std::mt19937_64 gen(13);
    const auto enc = make_frozen_encoder(3, 32);
    const auto proj = make_projection(32, 16, 4);
    const auto x = random_raster(3, gen);
    auto scaled = x;
    for (auto& v : scaled) v *= 2.5f;
    const auto a = encode(x, 3, enc, proj), b = encode(scaled, 3, enc, proj);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(b.data()[i] - 2.5f * a.data()[i]) < 1e-4);
}

TEST_CASE("gradient reaches the projection and never the frozen encoder") {
    std::mt19937_64 gen(14);
    const auto enc = make_frozen_encoder(3, 32);
    const auto proj = make_projection(32, 16, 4);
    const auto before = enc.checksum();
    const auto tokens = encode(random_raster(3, gen), 3, enc, proj);
    backward(ops::sum(ops::mul(tokens, tokens)));
    CHECK_FALSE(enc.weight.has_grad());
    CHECK(proj.weight.has_grad());
    CHECK(proj.bias.has_grad());
    CHECK(enc.checksum() == before);
}

TEST_CASE("wrong raster shapes are dimension errors") {
    const auto enc = make_frozen_encoder(3, 32);
    const auto proj = make_projection(32, 16, 4);
    CHECK_THROWS_AS(encode(std::vector<float>(100, 0.f), 3, enc, proj), DimensionError);
    CHECK_THROWS_AS(encode(std::vector<float>(2 * 1024, 0.f), 2, enc, proj), DimensionError);
    CHECK_THROWS_AS(encode(std::vector<float>(1024, 0.f), 3, enc, proj), DimensionError);
}

TEST_CASE("position tags are scaled unit vectors") {
    const auto t = position_tags(16, 20, 4.f);
    REQUIRE(t.shape() == Shape{16, 20});
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 20; ++j) CHECK(t.data()[i * 20 + j] == (i == j ? 4.f : 0.f));
    CHECK_THROWS_AS(position_tags(16, 8, 1.f), DimensionError);
}
