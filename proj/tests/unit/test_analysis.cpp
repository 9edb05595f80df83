#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace maskunet;
using namespace testutil;

namespace {

SampleSet gaussian_set(Rng& rng, std::size_t m, double mx, double my, std::vector<int> labels = {}) {
    std::vector<double> v(m * 2);
    for (std::size_t i = 0; i < m; ++i) {
        v[i * 2] = mx + rng.normal();
        v[i * 2 + 1] = my + rng.normal();
    }
    return {Tensor(Shape{m, 2}, std::move(v)), std::move(labels), "test"};
}

GaussianFit fit_of(double m0, double m1, double a, double b, double c) {
    GaussianFit g;
    g.mean = Eigen::Vector2d(m0, m1);
    g.cov.resize(2, 2);
    g.cov << a, b, b, c;
    return g;
}

} // namespace

TEST(Frechet, IdenticalSetsAndSymmetry) {
    Rng rng(1);
    const SampleSet a = gaussian_set(rng, 500, 0.3, -0.2);
    const SampleSet b = gaussian_set(rng, 700, 1.0, 0.5);
    EXPECT_LE(frechet_gaussian(a, a), 1e-10);
    EXPECT_LE(std::abs(frechet_gaussian(a, b) - frechet_gaussian(b, a)), 1e-10);
    EXPECT_GE(frechet_gaussian(a, b), 0.0);
}

TEST(Frechet, UnitOffsetMeans) {
    Rng rng(2);
    const SampleSet a = gaussian_set(rng, 100000, 0.0, 0.0);
    const SampleSet b = gaussian_set(rng, 100000, 1.0, 0.0);
    EXPECT_NEAR(frechet_gaussian(a, b), 1.0, 0.05);
}

TEST(Frechet, ClosedFormTwoByTwo) {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        auto random_cov = [&](double& a, double& b, double& c) {
            const double l00 = 0.2 + std::abs(rng.normal()), l10 = rng.normal(), l11 = 0.2 + std::abs(rng.normal());
            a = l00 * l00;
            b = l00 * l10;
            c = l10 * l10 + l11 * l11;
        };
        double a1, b1, c1, a2, b2, c2;
        random_cov(a1, b1, c1);
        random_cov(a2, b2, c2);
        const double m0 = rng.normal(), m1 = rng.normal(), n0 = rng.normal(), n1 = rng.normal();
        // Tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)) for 2x2 PSD M with eig(M) = eig(Sa Sb).
        const double tr_prod = a1 * a2 + 2 * b1 * b2 + c1 * c2;
        const double det_prod = (a1 * c1 - b1 * b1) * (a2 * c2 - b2 * b2);
        const long double ref = (long double)(m0 - n0) * (m0 - n0) + (long double)(m1 - n1) * (m1 - n1) + a1 + c1 +
                                a2 + c2 - 2.0L * std::sqrt((long double)tr_prod + 2.0L * std::sqrt((long double)det_prod));
        const double got = frechet_gaussian(fit_of(m0, m1, a1, b1, c1), fit_of(n0, n1, a2, b2, c2));
        EXPECT_NEAR(got, static_cast<double>(ref), 1e-8) << i;
    }
}

TEST(Frechet, ErrorsAndDegenerateSets) {
    const SampleSet one{Tensor::zeros({1, 2}), {}, ""};
    const SampleSet two{Tensor::zeros({2, 2}), {}, ""};
    const SampleSet three_d{Tensor::zeros({4, 3}), {}, ""};
    EXPECT_THROW(frechet_gaussian(one, two), ContractError);
    EXPECT_THROW(frechet_gaussian(two, three_d), DimensionError);
    // Identical points: zero covariance is jittered, distance stays finite and ~0.
    EXPECT_LE(frechet_gaussian(two, two), 1e-9);
}

TEST(Alignment, AtMeansAndAntipodal) {
    const auto mix = ring_mixture({});
    std::vector<double> v;
    std::vector<int> own, opposite;
    for (int k = 0; k < 8; ++k) {
        v.insert(v.end(), mix.means[k].begin(), mix.means[k].end());
        own.push_back(k);
        opposite.push_back((k + 4) % 8);
    }
    const Tensor pts(Shape{8, 2}, v);
    EXPECT_GE(alignment_score({pts, own, ""}, mix), 0.99);
    EXPECT_LE(alignment_score({pts, opposite, ""}, mix), 0.01);
    EXPECT_THROW(alignment_score({pts, {}, ""}, mix), ContractError);
}

TEST(Alignment, BayesRuleOracleAndRange) {
    const auto mix = ring_mixture({});
    Rng rng(4);
    const auto labels = random_classes(rng, 40, 8);
    const SampleSet s = gaussian_set(rng, 40, 0.0, 0.0, labels);
    const double var = mix.std * mix.std;
    double total = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
        std::vector<long double> lik(8);
        long double z = 0.0;
        for (int k = 0; k < 8; ++k) {
            const double d2 = std::pow(s.points.data()[i * 2] - mix.means[k][0], 2) +
                              std::pow(s.points.data()[i * 2 + 1] - mix.means[k][1], 2);
            lik[k] = std::exp((long double)(-d2 / (2 * var)));
            z += lik[k];
        }
        total += static_cast<double>(lik[labels[i]] / z);
    }
    const double got = alignment_score(s, mix);
    EXPECT_NEAR(got, total / 40.0, 1e-12);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
}

namespace {

MaskGenerator study_generator(const DenoiserModel& model, std::uint64_t seed) {
    return MaskGenerator::for_layer(model, MaskGeneratorConfig{.layer_id = "hidden1", .mlp_hidden = 8, .init_logit = 0.0},
                                    seed);
}

} // namespace

TEST(MaskStudy, ConstantGeneratorGivesIdenticalMasks) {
    DenoiserModel model(DenoiserConfig{}, 1);
    MaskGenerator gen = study_generator(model, 2);
    gen.zero_parameters();
    const std::vector<int> ts{999, 800, 600, 400, 200, 0};
    Rng rng(3);
    const MaskStudy s = mask_study({gen}, ts, random_tensor(rng, {1, 2}), 4);
    ASSERT_EQ(s.summary.size(), 1u);
    EXPECT_EQ(s.summary[0].max_hamming, 0u);
    EXPECT_EQ(s.summary[0].ratio_std, 0.0);
    EXPECT_EQ(s.snapshots.size(), 6u);
}

TEST(MaskStudy, RandomGeneratorVariesAndRatiosMatchBits) {
    DenoiserModel model(DenoiserConfig{}, 1);
    MaskGenerator gen = study_generator(model, 5);
    Rng rng(6);
    for (auto& [name, p] : gen.named_parameters()) gen.load_parameter(name, random_tensor(rng, p.shape()).data());
    const std::vector<int> ts{999, 800, 600, 400, 200, 0};
    const Tensor probe = random_tensor(rng, {1, 2});
    const MaskStudy s = mask_study({gen}, ts, probe, 7);
    EXPECT_GT(s.summary[0].max_hamming, 0u);
    for (const auto& snap : s.snapshots) {
        std::size_t zeros = 0;
        for (auto b : snap.bits) zeros += b == 0 ? 1 : 0;
        EXPECT_EQ(snap.ratio, static_cast<double>(zeros) / static_cast<double>(snap.bits.size()));
        EXPECT_EQ(snap.bits.size(), 32u * 32u);
    }
    const auto& h = s.summary[0].hamming;
    for (std::size_t i = 0; i < h.size(); ++i) {
        EXPECT_EQ(h[i][i], 0u);
        for (std::size_t j = 0; j < h.size(); ++j) EXPECT_EQ(h[i][j], h[j][i]);
    }
    const MaskStudy again = mask_study({gen}, ts, probe, 7);
    ASSERT_EQ(again.snapshots.size(), s.snapshots.size());
    for (std::size_t i = 0; i < s.snapshots.size(); ++i) EXPECT_EQ(again.snapshots[i].bits, s.snapshots[i].bits);
}

TEST(MaskStudy, HammingDistance) {
    const std::vector<std::uint8_t> a{1, 0, 1, 1}, b{1, 1, 0, 1};
    EXPECT_EQ(hamming_distance(a, b), 2u);
    EXPECT_EQ(hamming_distance(a, a), 0u);
    EXPECT_THROW(hamming_distance(a, std::vector<std::uint8_t>{1}), DimensionError);
}
