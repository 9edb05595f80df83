#pragma once

// Training loops: base pretraining / full fine-tuning of every denoiser weight,
// and mask-generator training against a frozen denoiser.

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maskunet/data.hpp"
#include "maskunet/denoiser.hpp"
#include "maskunet/diffusion.hpp"
#include "maskunet/error.hpp"
#include "maskunet/mask_generator.hpp"
#include "maskunet/optim.hpp"
#include "maskunet/random.hpp"

namespace maskunet {

enum class TrainMode { base, full_finetune, mask_generator };

inline const char* to_string(TrainMode m) {
    switch (m) {
    case TrainMode::base: return "base";
    case TrainMode::full_finetune: return "full_finetune";
    case TrainMode::mask_generator: return "mask_generator";
    }
    return "?";
}

struct TrainConfig {
    int epochs = 12;
    int batch_size = 128;
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double cond_dropout = 0.1;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::base;
    bool use_temb = true;
    bool use_sample = true;

    void validate() const {
        if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
        if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw ConfigError("train.cond_dropout must lie in [0, 1]");
    }
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

namespace detail {

struct Batch {
    Tensor z0;
    std::vector<int> labels;
};

inline Batch gather_batch(const Dataset& data, std::span<const std::size_t> idx) {
    const std::size_t d = data.points.dim(1);
    const auto pv = data.points.data();
    std::vector<double> v(idx.size() * d);
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                    v.begin() + static_cast<std::ptrdiff_t>(i * d));
        labels[i] = data.labels[idx[i]];
    }
    return {Tensor(Shape{idx.size(), d}, std::move(v)), std::move(labels)};
}

// Calls step(batch, rng, epoch, index) -> loss value over seeded shuffled
// mini-batches; the last partial batch is kept.
template <class Step>
TrainLog run_epochs(const Dataset& data, const TrainConfig& cfg, Step&& step) {
    cfg.validate();
    if (data.size() == 0) throw ContractError("train: empty dataset");
    TrainLog log;
    std::vector<std::size_t> order(data.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(derive_seed(cfg.seed, {0x5348u, static_cast<std::uint64_t>(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle.engine());
        double total = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            Batch batch = gather_batch(data, std::span(order).subspan(start, end - start));
            Rng rng(derive_seed(cfg.seed, {0x5354u, static_cast<std::uint64_t>(epoch), batch_index}));
            double loss;
            try {
                loss = step(batch, rng);
            } catch (const NumericError& e) {
                throw NumericError("train: divergence at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index) + ": " + e.what());
            }
            total += loss * static_cast<double>(end - start);
            ++batch_index;
        }
        log.epoch_loss.push_back(total / static_cast<double>(order.size()));
    }
    return log;
}

inline void drop_conditions(std::vector<int>& labels, double p, int null_class, Rng& rng) {
    if (p <= 0.0) return;
    for (int& c : labels) {
        if (rng.uniform_open() < p) c = null_class;
    }
}

} // namespace detail

// Trains every weight of `model` with the diffusion loss (base pretraining or
// full fine-tuning, depending on where `model` came from).
inline TrainLog train_denoiser(DenoiserModel& model, const Dataset& data, const NoiseSchedule& sched,
                               const TrainConfig& cfg) {
    model.set_trainable(true);
    AdamW opt(model.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    return detail::run_epochs(data, cfg, [&](detail::Batch& b, Rng& rng) {
        detail::drop_conditions(b.labels, cfg.cond_dropout, model.null_class(), rng);
        auto predict = [&](const Tensor& z_t, std::span<const int> t, std::span<const int> c) {
            return model.forward(z_t, t, c);
        };
        const Tensor loss = diffusion_loss(predict, b.z0, b.labels, sched, rng);
        opt.zero_grad();
        backward(loss);
        opt.step();
        return loss.item();
    });
}

inline TrainLog train_base(DenoiserModel& model, const Dataset& data, const NoiseSchedule& sched,
                           const TrainConfig& cfg) {
    return train_denoiser(model, data, sched, cfg);
}

// Starts from a copy of `base`; returns the fine-tuned model.
inline DenoiserModel train_full_finetune(const DenoiserModel& base, const Dataset& data, const NoiseSchedule& sched,
                                         const TrainConfig& cfg, TrainLog* log = nullptr) {
    DenoiserModel model = base;
    TrainLog l = train_denoiser(model, data, sched, cfg);
    if (log) *log = std::move(l);
    return model;
}

// Masked epsilon prediction: masks come from the generators evaluated on the
// current noisy sample and timesteps.
inline Tensor masked_predict(const DenoiserModel& model, const std::vector<MaskGenerator>& gens, const Tensor& z_t,
                             std::span<const int> t, std::span<const int> c, bool hard, Rng& rng,
                             MaskNoise noise = MaskNoise::sampled) {
    if (gens.empty()) return model.forward(z_t, t, c);
    const MaskMap masks = generate_masks(gens, t, z_t, hard, rng, noise);
    return model.forward(z_t, t, c, &masks);
}

// Only generator parameters are optimized; the base model is never written.
inline TrainLog train_mask_generators(const DenoiserModel& base, std::vector<MaskGenerator>& gens,
                                      const Dataset& data, const NoiseSchedule& sched, const TrainConfig& cfg) {
    if (gens.empty()) throw ConfigError("train: mask_generator mode needs at least one generator");
    DenoiserModel frozen = base;
    frozen.set_trainable(false);
    std::vector<Tensor> params;
    for (auto& g : gens) {
        g.set_flags(cfg.use_temb, cfg.use_sample);
        for (auto& p : g.parameters()) params.push_back(p);
    }
    AdamW opt(params, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    return detail::run_epochs(data, cfg, [&](detail::Batch& b, Rng& rng) {
        detail::drop_conditions(b.labels, cfg.cond_dropout, frozen.null_class(), rng);
        auto predict = [&](const Tensor& z_t, std::span<const int> t, std::span<const int> c) {
            return masked_predict(frozen, gens, z_t, t, c, true, rng);
        };
        const Tensor loss = diffusion_loss(predict, b.z0, b.labels, sched, rng);
        opt.zero_grad();
        backward(loss);
        opt.step();
        return loss.item();
    });
}

// Mean diffusion loss over `data` with a fixed seed; no parameter updates.
inline double eval_diffusion_loss(const DenoiserModel& model, const std::vector<MaskGenerator>& gens,
                                  const Dataset& data, const NoiseSchedule& sched, std::uint64_t seed,
                                  int batch_size = 256) {
    DenoiserModel frozen = model;
    frozen.set_trainable(false);
    std::vector<MaskGenerator> fixed = gens;
    for (auto& g : fixed)
        for (auto& p : g.parameters()) p.set_requires_grad(false);
    double total = 0.0;
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
        auto b = detail::gather_batch(data, std::span(idx).subspan(start, end - start));
        Rng rng(derive_seed(seed, {0x4556u, batch_index++}));
        auto predict = [&](const Tensor& z_t, std::span<const int> t, std::span<const int> c) {
            return masked_predict(frozen, fixed, z_t, t, c, true, rng);
        };
        total += diffusion_loss(predict, b.z0, b.labels, sched, rng).item() * static_cast<double>(end - start);
    }
    return total / static_cast<double>(data.size());
}

} // namespace maskunet
