#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace maskunet;
using namespace testutil;

TEST(TimestepEmbedding, ZeroPhase) {
    const auto e = timestep_embedding(0.0, 32);
    ASSERT_EQ(e.size(), 32u);
    for (int i = 0; i < 16; ++i) {
        EXPECT_EQ(e[i], 0.0);
        EXPECT_EQ(e[i + 16], 1.0);
    }
    EXPECT_EQ(timestep_embedding(5.0, 2).size(), 2u);
}

TEST(TimestepEmbedding, HandEvaluatedDim4) {
    // Frequencies 1 and 1/10000.
    const auto e = timestep_embedding(1.0, 4);
    EXPECT_NEAR(e[0], std::sin(1.0), 1e-12);
    EXPECT_NEAR(e[1], std::sin(1e-4), 1e-12);
    EXPECT_NEAR(e[2], std::cos(1.0), 1e-12);
    EXPECT_NEAR(e[3], std::cos(1e-4), 1e-12);
}

TEST(TimestepEmbedding, OddDimIsConfigError) {
    EXPECT_THROW(timestep_embedding(1.0, 3), ConfigError);
    EXPECT_THROW(timestep_embedding(1.0, 0), ConfigError);
}

namespace {

MaskMap ones_for(const DenoiserModel& m, std::size_t batch, const std::vector<std::string>& layers) {
    MaskMap out;
    for (const auto& id : layers) {
        const auto& l = m.layer(id);
        out.emplace(id, Tensor::full({batch, l.out_features(), l.in_features()}, 1.0));
    }
    return out;
}

} // namespace

TEST(Denoiser, ShapeAndDeterminism) {
    DenoiserModel m(DenoiserConfig{}, 1);
    Rng rng(2);
    const Tensor z = random_tensor(rng, {4, 2});
    const std::vector<int> t{0, 10, 500, 999};
    const std::vector<int> c{0, 3, 7, 8};
    const Tensor a = m.forward(z, t, c);
    EXPECT_EQ(a.shape(), (Shape{4, 2}));
    EXPECT_EQ(max_abs_diff(a, m.forward(z, t, c)), 0.0);
    for (double v : a.data()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(max_abs_diff(DenoiserModel(DenoiserConfig{}, 1).forward(z, t, c), a), 0.0);
}

TEST(Denoiser, AllOnesMasksLeaveOutputUnchanged) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        DenoiserModel m(DenoiserConfig{}, 100 + static_cast<std::uint64_t>(trial));
        const std::size_t b = 1 + rng.index(8);
        const Tensor z = random_tensor(rng, {b, 2});
        const int t = static_cast<int>(rng.index(1000));
        const auto c = random_classes(rng, b, 9);
        const Tensor plain = m.forward(z, t, c);
        for (const auto& subset : std::vector<std::vector<std::string>>{{"hidden1"}, {"hidden2"}, {"hidden1", "hidden2"}}) {
            const MaskMap ones = ones_for(m, b, subset);
            EXPECT_LE(max_abs_diff(m.forward(z, t, c, &ones), plain), 1e-12);
        }
    }
}

TEST(Denoiser, MaskedPathMatchesZeroedWeightCopies) {
    DenoiserModel m(DenoiserConfig{}, 4);
    Rng rng(5);
    const std::size_t b = 4;
    const Tensor z = random_tensor(rng, {b, 2});
    const std::vector<int> t{3, 30, 300, 900};
    const std::vector<int> c{1, 2, 8, 5};
    MaskMap masks;
    for (const auto& id : {"hidden1", "hidden2"}) {
        const auto& l = m.layer(id);
        std::vector<double> bits(b * l.out_features() * l.in_features());
        for (double& x : bits) x = rng.index(2) ? 1.0 : 0.0;
        masks.emplace(id, Tensor(Shape{b, l.out_features(), l.in_features()}, bits));
    }
    const Tensor out = m.forward(z, t, c, &masks);
    for (std::size_t r = 0; r < b; ++r) {
        DenoiserModel copy = m;
        for (const auto& [id, mk] : masks) {
            const auto& l = copy.layer(id);
            const std::size_t n = l.out_features() * l.in_features();
            std::vector<double> w(l.weight.data().begin(), l.weight.data().end());
            for (std::size_t i = 0; i < n; ++i) w[i] *= mk.data()[r * n + i];
            copy.load_parameter(id + ".weight", w);
        }
        const Tensor zr(Shape{1, 2}, {z.data()[r * 2], z.data()[r * 2 + 1]});
        const std::vector<int> cr{c[r]};
        const Tensor ref = copy.forward(zr, t[r], cr);
        EXPECT_LE(max_abs_diff(out.data().subspan(r * 2, 2), ref.data()), 1e-12) << r;
    }
}

TEST(Denoiser, MaskContractErrors) {
    DenoiserModel m(DenoiserConfig{}, 6);
    const Tensor z = Tensor::zeros({2, 2});
    const std::vector<int> c{0, 1};
    MaskMap bad_layer{{"out", Tensor::full({2, 2, 32}, 1.0)}};
    EXPECT_THROW(m.forward(z, 0, c, &bad_layer), ConfigError);
    MaskMap bad_shape{{"hidden1", Tensor::full({2, 32, 31}, 1.0)}};
    EXPECT_THROW(m.forward(z, 0, c, &bad_shape), DimensionError);
    EXPECT_THROW(m.forward(z, 0, std::vector<int>{0, 9}), ContractError);
    EXPECT_THROW(DenoiserModel(DenoiserConfig{.maskable_layers = {"nope"}}, 0), ConfigError);
}

TEST(Denoiser, InitScaleFollowsFanIn) {
    DenoiserModel m(DenoiserConfig{.hidden_dim = 256}, 7);
    const auto w = m.layer("hidden1").weight.data();
    double ss = 0.0;
    for (double v : w) ss += v * v;
    EXPECT_NEAR(ss / static_cast<double>(w.size()), 1.0 / 256.0, 0.1 / 256.0);
    for (double v : m.layer("hidden1").bias.data()) EXPECT_EQ(v, 0.0);
}
