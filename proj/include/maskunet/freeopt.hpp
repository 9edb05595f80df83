#pragma once

// Training-free mask optimization: per-timestep gradient updates of raw mask
// logits against analytic rewards, with no mask generator involved.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskunet/data.hpp"
#include "maskunet/denoiser.hpp"
#include "maskunet/diffusion.hpp"
#include "maskunet/error.hpp"
#include "maskunet/masking.hpp"
#include "maskunet/optim.hpp"
#include "maskunet/random.hpp"
#include "maskunet/sampling.hpp"

namespace maskunet {

enum class RewardKind { mode_proximity, mixture_loglik };

inline const char* to_string(RewardKind k) {
    return k == RewardKind::mode_proximity ? "mode_proximity" : "mixture_loglik";
}

inline RewardKind parse_reward_kind(const std::string& s) {
    if (s == "mode_proximity") return RewardKind::mode_proximity;
    if (s == "mixture_loglik") return RewardKind::mixture_loglik;
    throw ConfigError("unknown reward kind '" + s + "'");
}

struct RewardSpec {
    RewardKind kind = RewardKind::mode_proximity;
    double weight = 1.0;
};

// ImageReward / HPSv2 stand-ins with the 1.0 / 5.0 balance.
inline std::vector<RewardSpec> default_rewards() {
    return {{RewardKind::mode_proximity, 1.0}, {RewardKind::mixture_loglik, 5.0}};
}

namespace detail {

inline Tensor mixture_loglik_op(const Tensor& x, const MixtureSpec& mix) {
    const std::size_t rows = x.dim(0), d = x.dim(1);
    const auto xv = x.data();
    std::vector<double> value(rows);
    std::vector<double> score(rows * d); // d/dx log p(x)
    const double var = mix.std * mix.std;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = xv.subspan(r * d, d);
        value[r] = mixture_log_density(mix, row);
        const auto post = mixture_posterior(mix, row);
        for (std::size_t k = 0; k < post.size(); ++k)
            for (std::size_t j = 0; j < d; ++j) score[r * d + j] += post[k] * (mix.means[k][j] - row[j]) / var;
    }
    return custom_op("mixture_loglik", Shape{rows}, std::move(value), {x},
                     [score = std::move(score), d](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (std::size_t r = 0; r < g.size(); ++r)
                             for (std::size_t j = 0; j < d; ++j) gi[0][r * d + j] += g[r] * score[r * d + j];
                     });
}

} // namespace detail

// Higher is better. x: [B, D] decoded samples, c: one class per row. Returns
// the batch mean as a scalar tensor.
inline Tensor evaluate_reward(const Tensor& x, std::span<const int> c, const MixtureSpec& mix, RewardKind kind) {
    if (x.rank() != 2 || x.dim(1) != mix.dim()) {
        throw DimensionError("evaluate_reward: expected [B x " + std::to_string(mix.dim()) + "], got " +
                             shape_str(x.shape()));
    }
    if (c.size() != x.dim(0)) throw DimensionError("evaluate_reward: one condition per row required");
    if (kind == RewardKind::mode_proximity) {
        std::vector<double> mu;
        for (int ci : c) {
            const auto& m = mix.mean_of(ci);
            mu.insert(mu.end(), m.begin(), m.end());
        }
        const Tensor target(x.shape(), std::move(mu));
        return mean(neg(sum_last(square(sub(x, target)))));
    }
    for (int ci : c) (void)mix.mean_of(ci);
    return mean(detail::mixture_loglik_op(x, mix));
}

// -sum_i w_i * reward_i(x, c)
inline Tensor reward_loss(const Tensor& x, std::span<const int> c, const MixtureSpec& mix,
                          std::span<const RewardSpec> specs) {
    if (specs.empty()) throw ContractError("reward_loss: no reward specs");
    Tensor total;
    for (const auto& s : specs) {
        if (!std::isfinite(s.weight)) throw ConfigError("reward_loss: non-finite reward weight");
        const Tensor term = scale(evaluate_reward(x, c, mix, s.kind), -s.weight);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

// VAE stand-in: samples live directly in data space.
inline Tensor decode_latent(const Tensor& z0) { return z0; }

enum class X0Mode { predicted, direct };
enum class FinalMask { threshold, sampled };

struct FreeOptConfig {
    int lambda = 15;           // inner iterations per timestep
    double lr = 1e-2;
    double weight_decay = 1e-2;
    int steps = 15;            // sampler steps
    double guidance = 7.5;
    double eta = 0.0;
    double tau = 1.0;
    double delta = 0.5;
    double init_logit = 1.0;   // "m = 1.0"; threshold mask is all ones
    bool warm_start = true;    // carry logits across timesteps
    X0Mode x0_mode = X0Mode::direct; // reward on z_{t-1} taken as z_0
    FinalMask final_mask = FinalMask::threshold;
    std::uint64_t seed = 0;

    void validate() const {
        if (lambda < 0) throw ConfigError("freeopt.lambda must be >= 0");
        if (steps < 1) throw ConfigError("freeopt.steps must be >= 1");
        if (!(lr >= 0.0)) throw ConfigError("freeopt.lr must be >= 0");
        if (guidance < 0.0) throw ConfigError("freeopt.guidance must be >= 0");
        check_mask_params(tau, delta);
    }
};

struct MaskState {
    std::map<std::string, Tensor> logits; // [C_out, C_in] per maskable layer
    double tau = 1.0;
    double delta = 0.5;

    static MaskState init(const DenoiserModel& model, double logit, double tau, double delta) {
        MaskState s;
        s.tau = tau;
        s.delta = delta;
        for (const auto& id : model.config().maskable_layers) {
            const Linear& l = model.layer(id);
            s.logits.emplace(id, Tensor::full(l.weight.shape(), logit, true));
        }
        return s;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& [_, t] : logits) out.push_back(t);
        return out;
    }

    void reset(double logit) {
        for (auto& [_, t] : logits)
            for (double& v : t.mutable_data()) v = logit;
    }
};

struct IterationRecord {
    int timestep;
    int iteration;
    double loss;
};

struct MaskRecord {
    int timestep;
    std::string layer_id;
    MaskTensor mask; // [C_out, C_in], hard
};

struct StepResult {
    Tensor z_prev;
    std::vector<double> losses;
    double best_loss = std::numeric_limits<double>::quiet_NaN();
    int best_iteration = -1;
    std::vector<MaskRecord> final_masks;
};

namespace detail {

// Hard masks from the current logits, each shaped [1, C_out, C_in].
inline MaskMap masks_from_state(const MaskState& state, Rng* rng, std::vector<MaskRecord>* records, int t) {
    MaskMap out;
    for (const auto& [id, logits] : state.logits) {
        const MaskTensor m = rng ? gumbel_sigmoid(logits, state.tau, state.delta, true, *rng)
                                 : threshold_mask(logits, state.tau, state.delta);
        if (records) records->push_back({t, id, {m.values.detach(), true}});
        out.emplace(id, reshape(m.values, Shape{1, logits.dim(0), logits.dim(1)}));
    }
    return out;
}

} // namespace detail

// Runs the inner loop at one timestep for a single sample z_t [1, D] and
// returns z_{t_prev} recomputed from the final logits. `stream` is the
// sample's own RNG stream; it is only consumed for the returned step (eta > 0),
// so lambda = 0 reproduces plain sampling exactly.
inline StepResult optimize_timestep(const Tensor& z_t, int t, int t_prev, int c, MaskState& state,
                                    const FreeOptConfig& cfg, const DenoiserModel& model, const NoiseSchedule& sched,
                                    const MixtureSpec& mix, std::span<const RewardSpec> specs, AdamW& opt,
                                    Rng& stream) {
    cfg.validate();
    if (z_t.rank() != 2 || z_t.dim(0) != 1) {
        throw DimensionError("optimize_timestep: expects a single sample [1 x D], got " + shape_str(z_t.shape()));
    }
    const std::vector<int> cls{c};
    const std::size_t dim = z_t.dim(1);
    const double sigma = ddim_sigma(cfg.eta, sched.alpha_bar(t), sched.alpha_bar(t_prev));
    StepResult res;
    for (int k = 0; k < cfg.lambda; ++k) {
        Rng rng(derive_seed(cfg.seed, {0x464fu, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)}));
        const MaskMap masks = detail::masks_from_state(state, &rng, nullptr, t);
        const Tensor eps = guided_eps(model, z_t, t, cls, cfg.guidance, &masks);
        Tensor x0;
        if (cfg.x0_mode == X0Mode::predicted) {
            x0 = predict_x0(z_t, eps, t, sched);
        } else {
            x0 = sigma > 0.0 ? ddim_step(z_t, eps, t, t_prev, cfg.eta, sched, rng.normal_tensor(Shape{1, dim}))
                             : ddim_step(z_t, eps, t, t_prev, cfg.eta, sched, nullptr, nullptr);
        }
        const Tensor loss = reward_loss(decode_latent(x0), cls, mix, specs);
        if (!std::isfinite(loss.item())) {
            throw NumericError("free-opt: non-finite loss at timestep " + std::to_string(t) + ", iteration " +
                               std::to_string(k));
        }
        opt.zero_grad();
        backward(loss);
        try {
            opt.step();
        } catch (const NumericError& e) {
            throw NumericError("free-opt: timestep " + std::to_string(t) + ", iteration " + std::to_string(k) +
                               ": " + e.what());
        }
        res.losses.push_back(loss.item());
        if (res.best_iteration < 0 || loss.item() < res.best_loss) {
            res.best_loss = loss.item();
            res.best_iteration = k;
        }
    }

    std::optional<Rng> final_rng;
    if (cfg.final_mask == FinalMask::sampled) {
        final_rng.emplace(derive_seed(cfg.seed, {0x4646u, static_cast<std::uint64_t>(t)}));
    }
    MaskMap masks = detail::masks_from_state(state, final_rng ? &*final_rng : nullptr, &res.final_masks, t);
    for (auto& [id, m] : masks) m = m.detach();
    const Tensor z = z_t.detach();
    const Tensor eps = guided_eps(model, z, t, cls, cfg.guidance, &masks);
    res.z_prev = sigma > 0.0 ? ddim_step(z, eps, t, t_prev, cfg.eta, sched, stream.normal_tensor(Shape{1, dim}))
                             : ddim_step(z, eps, t, t_prev, cfg.eta, sched, nullptr, nullptr);
    return res;
}

struct FreeOptResult {
    Tensor x0; // [1, D]
    std::vector<IterationRecord> log;
    std::vector<MaskRecord> masks; // final hard mask per (timestep, layer)
    MaskState state;
};

// Full training-free generation for sample `row` of class c. The initial
// latent comes from the same per-row stream as sample(), which makes
// lambda = 0 (or all-zero reward weights) identical to plain sampling.
inline FreeOptResult generate_training_free(int c, std::size_t row, const FreeOptConfig& cfg,
                                            const DenoiserModel& model, const NoiseSchedule& sched,
                                            const MixtureSpec& mix, std::span<const RewardSpec> specs) {
    cfg.validate();
    if (model.config().maskable_layers.empty()) throw ConfigError("free-opt: model has no maskable layers");
    DenoiserModel frozen = model;
    frozen.set_trainable(false);

    std::vector<Rng> streams;
    streams.push_back(row_stream(cfg.seed, row));
    Tensor z = initial_latents(1, static_cast<std::size_t>(model.config().data_dim), streams);

    FreeOptResult out;
    out.state = MaskState::init(frozen, cfg.init_logit, cfg.tau, cfg.delta);
    AdamW opt(out.state.parameters(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    FreeOptConfig row_cfg = cfg;
    row_cfg.seed = derive_seed(cfg.seed, {0x524fu, row});

    const auto ts = inference_timesteps(sched.T, cfg.steps);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
        if (!cfg.warm_start && k > 0) out.state.reset(cfg.init_logit);
        StepResult step = optimize_timestep(z, t, t_prev, c, out.state, row_cfg, frozen, sched, mix, specs, opt,
                                            streams.front());
        for (std::size_t i = 0; i < step.losses.size(); ++i)
            out.log.push_back({t, static_cast<int>(i), step.losses[i]});
        for (auto& m : step.final_masks) out.masks.push_back(std::move(m));
        z = step.z_prev;
    }
    out.x0 = decode_latent(z);
    return out;
}

// Weighted reward of a finished sample (higher is better).
inline double total_reward(const Tensor& x, int c, const MixtureSpec& mix, std::span<const RewardSpec> specs) {
    const std::vector<int> cls{c};
    return -reward_loss(x.detach(), cls, mix, specs).item();
}

} // namespace maskunet
