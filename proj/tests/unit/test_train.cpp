#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace maskunet;
using namespace testutil;

TEST(AdamW, NullAndDecayOnlySteps) {
    std::vector<double> p{1.5, -2.0};
    const std::vector<double> g{0.0, 0.0};
    MomentState st;
    adamw_step(p, g, st, 1, {.lr = 0.1, .weight_decay = 0.0});
    EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
    adamw_step(p, g, st, 2, {.lr = 0.1, .weight_decay = 1e-2});
    EXPECT_DOUBLE_EQ(p[0], 1.5 * (1.0 - 1e-3));
    EXPECT_DOUBLE_EQ(p[1], -2.0 * (1.0 - 1e-3));
}

namespace {

// Independent scalar AdamW.
double reference_adamw(double p, const std::vector<double>& grads, double lr, double wd) {
    double m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        const double t = static_cast<double>(k + 1);
        p = p - lr * wd * p;
        m = 0.9 * m + 0.1 * grads[k];
        v = 0.999 * v + 0.001 * grads[k] * grads[k];
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        p = p - lr * mh / (std::sqrt(vh) + 1e-8);
    }
    return p;
}

} // namespace

TEST(AdamW, ScalarReferenceThreeSteps) {
    const std::vector<double> grads{0.3, -1.2, 0.05};
    for (double wd : {0.0, 1e-2}) {
        std::vector<double> p{0.7};
        MomentState st;
        for (long k = 0; k < 3; ++k) adamw_step(p, std::span(&grads[k], 1), st, k + 1, {.lr = 0.01, .weight_decay = wd});
        EXPECT_NEAR(p[0], reference_adamw(0.7, grads, 0.01, wd), 1e-12) << wd;
    }
}

TEST(AdamW, ZeroDecayIsPlainAdam) {
    // Plain Adam written without any decay term.
    const std::vector<double> grads{1.0, 0.5, -0.25, 2.0};
    double p_ref = -0.4, m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) {
        m = 0.9 * m + 0.1 * grads[k];
        v = 0.999 * v + 0.001 * grads[k] * grads[k];
        p_ref -= 0.05 * (m / (1 - std::pow(0.9, k + 1.0))) / (std::sqrt(v / (1 - std::pow(0.999, k + 1.0))) + 1e-8);
    }
    std::vector<double> p{-0.4};
    MomentState st;
    for (std::size_t k = 0; k < grads.size(); ++k)
        adamw_step(p, std::span(&grads[k], 1), st, static_cast<long>(k + 1), {.lr = 0.05, .weight_decay = 0.0});
    EXPECT_NEAR(p[0], p_ref, 1e-12);
}

TEST(AdamW, NonFiniteGradientAbortsWholeStep) {
    Tensor a = Tensor::full({2}, 1.0, true);
    Tensor b = Tensor(Shape{2}, {1.0, 5e-324}, true); // d log(b)/db overflows
    backward(add(sum(a), sum(log(b))));
    AdamW opt({a, b}, {.lr = 0.1});
    EXPECT_THROW(opt.step(), NumericError);
    EXPECT_EQ(a.data()[0], 1.0);
    EXPECT_EQ(b.data()[0], 1.0);
    EXPECT_EQ(opt.steps(), 0);
}

namespace {

struct Fixture {
    MixtureSpec mix = ring_mixture({});
    NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
    Dataset data;
    Dataset heldout;

    explicit Fixture(std::size_t n = 600) {
        Rng rng(1);
        data = sample_mixture(mix, n, rng);
        heldout = sample_mixture(mix, 400, rng);
    }
};

std::vector<MaskGenerator> generators_for(const DenoiserModel& model, double init_logit, int hidden = 8) {
    std::vector<MaskGenerator> gens;
    std::uint64_t s = 0;
    for (const auto& id : model.config().maskable_layers)
        gens.push_back(MaskGenerator::for_layer(
            model, MaskGeneratorConfig{.layer_id = id, .mlp_hidden = hidden, .init_logit = init_logit}, ++s));
    return gens;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& ps) {
    std::vector<std::vector<double>> out;
    for (const auto& p : ps) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

} // namespace

TEST(TrainBase, ZeroEpochsLeavesInitialization) {
    Fixture f;
    DenoiserModel model(DenoiserConfig{}, 3);
    const std::string before = denoiser_digest(model);
    const TrainLog log = train_base(model, f.data, f.sched, {.epochs = 0});
    EXPECT_TRUE(log.epoch_loss.empty());
    EXPECT_EQ(denoiser_digest(model), before);
    EXPECT_EQ(denoiser_digest(model), denoiser_digest(DenoiserModel(DenoiserConfig{}, 3)));
}

TEST(TrainBase, DeterministicAndLossDecreases) {
    Fixture f(5000);
    DenoiserModel a(DenoiserConfig{}, 4), b(DenoiserConfig{}, 4);
    const TrainConfig cfg{.epochs = 12, .seed = 9};
    const TrainLog la = train_base(a, f.data, f.sched, cfg);
    const TrainLog lb = train_base(b, f.data, f.sched, cfg);
    EXPECT_EQ(denoiser_digest(a), denoiser_digest(b));
    EXPECT_EQ(la.epoch_loss, lb.epoch_loss);
    ASSERT_EQ(la.epoch_loss.size(), 12u);
    EXPECT_LT(la.epoch_loss.back(), la.epoch_loss.front());
}

TEST(TrainBase, ConfigErrors) {
    Fixture f;
    DenoiserModel m(DenoiserConfig{}, 0);
    EXPECT_THROW(train_base(m, f.data, f.sched, {.batch_size = 0}), ConfigError);
    EXPECT_THROW(train_base(m, f.data, f.sched, {.epochs = -1}), ConfigError);
    EXPECT_THROW(train_base(m, Dataset{Tensor::zeros({0, 2}), {}}, f.sched, {.epochs = 1}), ContractError);
}

TEST(TrainFinetune, ZeroLrKeepsWeightsAndIsDeterministic) {
    Fixture f;
    DenoiserModel base(DenoiserConfig{}, 5);
    train_base(base, f.data, f.sched, {.epochs = 1});
    const DenoiserModel same = train_full_finetune(base, f.data, f.sched, {.epochs = 2, .lr = 0.0, .weight_decay = 0.0});
    EXPECT_EQ(denoiser_digest(same), denoiser_digest(base));
    const TrainConfig cfg{.epochs = 1, .seed = 3, .mode = TrainMode::full_finetune};
    const DenoiserModel x = train_full_finetune(base, f.data, f.sched, cfg);
    const DenoiserModel y = train_full_finetune(base, f.data, f.sched, cfg);
    EXPECT_EQ(denoiser_digest(x), denoiser_digest(y));
    EXPECT_NE(denoiser_digest(x), denoiser_digest(base));
}

TEST(TrainMask, SaturatedInitReproducesBaseLoss) {
    Fixture f;
    DenoiserModel base(DenoiserConfig{}, 6);
    train_base(base, f.data, f.sched, {.epochs = 2});
    const auto gens = generators_for(base, 40.0);
    const double masked = eval_diffusion_loss(base, gens, f.heldout, f.sched, 17);
    const double plain = eval_diffusion_loss(base, {}, f.heldout, f.sched, 17);
    EXPECT_NEAR(masked, plain, 1e-9);
}

TEST(TrainMask, FreezesBaseAndUpdatesOnlyGenerators) {
    Fixture f;
    DenoiserModel base(DenoiserConfig{}, 7);
    train_base(base, f.data, f.sched, {.epochs = 2});
    const std::string before = denoiser_digest(base);
    auto gens = generators_for(base, 1.0);
    std::vector<Tensor> gp;
    for (auto& g : gens)
        for (auto& p : g.parameters()) gp.push_back(p);
    const auto g0 = snapshot(gp);
    const TrainLog log = train_mask_generators(base, gens, f.data, f.sched, {.epochs = 2, .mode = TrainMode::mask_generator});
    EXPECT_EQ(log.epoch_loss.size(), 2u);
    EXPECT_EQ(denoiser_digest(base), before);
    EXPECT_NE(snapshot(gp), g0);
    std::vector<MaskGenerator> none;
    EXPECT_THROW(train_mask_generators(base, none, f.data, f.sched, {}), ConfigError);
}

TEST(TrainMask, Deterministic) {
    Fixture f;
    DenoiserModel base(DenoiserConfig{}, 8);
    auto a = generators_for(base, 1.0);
    auto b = generators_for(base, 1.0);
    const TrainConfig cfg{.epochs = 1, .seed = 5, .mode = TrainMode::mask_generator};
    const TrainLog la = train_mask_generators(base, a, f.data, f.sched, cfg);
    const TrainLog lb = train_mask_generators(base, b, f.data, f.sched, cfg);
    EXPECT_EQ(la.epoch_loss, lb.epoch_loss);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(snapshot(a[i].parameters()), snapshot(b[i].parameters()));
}

TEST(TrainMask, AblationFlagsReachGenerators) {
    Fixture f;
    DenoiserModel base(DenoiserConfig{}, 9);
    auto gens = generators_for(base, 1.0);
    train_mask_generators(base, gens, f.data, f.sched,
                          {.epochs = 1, .mode = TrainMode::mask_generator, .use_temb = false, .use_sample = true});
    for (const auto& g : gens) {
        EXPECT_FALSE(g.config().use_temb);
        EXPECT_TRUE(g.config().use_sample);
    }
}

// End-to-end loss through generator, soft Gumbel-Sigmoid masks and the frozen
// denoiser against central differences in the generator parameters.
TEST(TrainMask, EndToEndSoftPathGradient) {
    Fixture f;
    DenoiserModel base(DenoiserConfig{.hidden_dim = 6, .temb_dim = 4, .num_classes = 8}, 10);
    base.set_trainable(false);
    Rng init(11);
    for (auto& [name, p] : base.named_parameters())
        if (name.ends_with(".bias")) base.load_parameter(name, random_tensor(init, p.shape(), false, 0.3).data());
    auto gens = generators_for(base, 0.5, 5);
    std::vector<Tensor> leaves;
    for (auto& g : gens)
        for (auto& [name, p] : g.named_parameters()) {
            g.load_parameter(name, random_tensor(init, p.shape(), false, 0.5).data());
            leaves.push_back(p);
        }
    const Tensor z0 = f.data.points;
    const Tensor batch(Shape{6, 2}, {z0.data().begin(), z0.data().begin() + 12});
    const std::vector<int> c(f.data.labels.begin(), f.data.labels.begin() + 6);
    Rng probe(12);
    for (int i = 0; i < 20; ++i) {
        auto loss = [&] {
            Rng rng(900 + static_cast<std::uint64_t>(i));
            auto predict = [&](const Tensor& z_t, std::span<const int> t, std::span<const int> cc) {
                return masked_predict(base, gens, z_t, t, cc, false, rng);
            };
            return diffusion_loss(predict, batch, c, f.sched, rng);
        };
        EXPECT_LE(fd_probe(loss, leaves, probe), 1e-5) << i;
    }
}
