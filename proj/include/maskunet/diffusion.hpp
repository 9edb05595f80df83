#pragma once

// Forward corruption, x0 recovery, DDIM reverse steps, classifier-free
// guidance and the epsilon-prediction training loss.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskunet/error.hpp"
#include "maskunet/random.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    // alpha_bar at step t; the virtual step t = -1 before the chain starts is 1.
    double alpha_bar(int t) const {
        if (t == -1) return 1.0;
        if (t < -1 || t >= T) {
            throw ContractError("schedule: timestep " + std::to_string(t) + " outside [-1, " + std::to_string(T) +
                                ")");
        }
        return alpha_bars[static_cast<std::size_t>(t)];
    }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be positive, got " + std::to_string(T));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                          ", " + std::to_string(beta_end));
    }
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alphas.resize(s.betas.size());
    s.alpha_bars.resize(s.betas.size());
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        const auto i = static_cast<std::size_t>(t);
        s.betas[i] = beta;
        s.alphas[i] = 1.0 - beta;
        prod *= s.alphas[i];
        s.alpha_bars[i] = prod;
    }
    return s;
}

// Schedule from explicit betas (tests and custom schedules).
inline NoiseSchedule schedule_from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule: empty beta table");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: beta " + std::to_string(b) + " outside (0, 1)");
        s.alphas.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bars.push_back(prod);
    }
    s.betas = std::move(betas);
    return s;
}

// Evenly spaced inference timesteps from T-1 down to 0, strictly decreasing.
inline std::vector<int> inference_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) {
        throw ConfigError("sampler: steps must lie in [1, " + std::to_string(T) + "], got " + std::to_string(steps));
    }
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double pos = steps == 1 ? static_cast<double>(T - 1)
                                      : static_cast<double>(T - 1) * static_cast<double>(steps - 1 - i) /
                                            static_cast<double>(steps - 1);
        ts[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(pos));
    }
    return ts;
}

namespace detail {

// Per-row coefficient expanded to the full [B, ...] shape of x.
inline Tensor row_coefficients(const Tensor& x, std::span<const double> per_row) {
    const std::size_t rows = x.dim(0);
    const std::size_t width = x.numel() / rows;
    std::vector<double> v(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) v[r * width + j] = per_row[r];
    return Tensor(x.shape(), std::move(v));
}

inline void check_same(const char* name, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

} // namespace detail

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& sched) {
    detail::check_same("add_noise", z0, eps);
    if (t < 0 || t >= sched.T) throw ContractError("add_noise: timestep " + std::to_string(t) + " out of range");
    const double ab = sched.alpha_bar(t);
    return add(scale(z0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

// Per-example timesteps; t has one entry per leading row of z0.
inline Tensor add_noise(const Tensor& z0, const Tensor& eps, std::span<const int> t, const NoiseSchedule& sched) {
    detail::check_same("add_noise", z0, eps);
    if (z0.rank() == 0 || t.size() != z0.dim(0)) {
        throw DimensionError("add_noise: need one timestep per row of " + shape_str(z0.shape()));
    }
    std::vector<double> a(t.size()), b(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < 0 || t[i] >= sched.T) {
            throw ContractError("add_noise: timestep " + std::to_string(t[i]) + " out of range");
        }
        const double ab = sched.alpha_bar(t[i]);
        a[i] = std::sqrt(ab);
        b[i] = std::sqrt(1.0 - ab);
    }
    return add(mul(z0, detail::row_coefficients(z0, a)), mul(eps, detail::row_coefficients(eps, b)));
}

// (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
inline Tensor predict_x0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    detail::check_same("predict_x0", z_t, eps_hat);
    const double ab = sched.alpha_bar(t);
    if (!(ab > 0.0)) throw NumericError("predict_x0: alpha_bar at t=" + std::to_string(t) + " is not positive");
    return scale(sub(z_t, scale(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
}

inline double ddim_sigma(double eta, double ab_t, double ab_prev) {
    return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
}

// One DDIM update z_t -> z_{t_prev}. t_prev = -1 is the terminal step and
// returns the x0 estimate. Differentiable through z_t and eps_hat. Exactly one
// of rng/noise is consulted, and only when sigma > 0.
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                        const NoiseSchedule& sched, Rng* rng, const Tensor* noise) {
    if (!(t_prev < t)) {
        throw ContractError("ddim_step: t_prev (" + std::to_string(t_prev) + ") must precede t (" +
                            std::to_string(t) + ")");
    }
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("ddim_step: eta must lie in [0, 1]");
    const double ab_t = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    const double sigma = ddim_sigma(eta, ab_t, ab_prev);
    const double radicand = 1.0 - ab_prev - sigma * sigma;
    if (radicand < 0.0) {
        throw NumericError("ddim_step: negative radicand " + std::to_string(radicand) + " at t=" +
                           std::to_string(t) + " (schedule misconfigured)");
    }
    const Tensor x0 = predict_x0(z_t, eps_hat, t, sched);
    Tensor out = add(scale(x0, std::sqrt(ab_prev)), scale(eps_hat, std::sqrt(radicand)));
    if (sigma > 0.0) out = add(out, scale(noise ? *noise : rng->normal_tensor(z_t.shape()), sigma));
    return out;
}

inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                        const NoiseSchedule& sched, Rng& rng) {
    return ddim_step(z_t, eps_hat, t, t_prev, eta, sched, &rng, nullptr);
}

// Variant with caller-supplied standard-normal noise (per-row streams).
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev, double eta,
                        const NoiseSchedule& sched, const Tensor& noise) {
    detail::check_same("ddim_step", z_t, noise);
    return ddim_step(z_t, eps_hat, t, t_prev, eta, sched, nullptr, &noise);
}

// eps_u + s (eps_c - eps_u)
inline Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s) {
    detail::check_same("cfg_combine", eps_uncond, eps_cond);
    if (s < 0.0) throw ConfigError("cfg_combine: guidance scale must be non-negative");
    return add(eps_uncond, scale(sub(eps_cond, eps_uncond), s));
}

struct SamplerConfig {
    int num_inference_steps = 50;
    double eta = 0.0;
    double guidance_scale = 7.5;
    std::uint64_t seed = 0;
};

// MSE(eps_theta(z_t, t, c), eps) with t ~ U{0..T-1} and eps ~ N(0, I) per example.
// `predict` is any callable (z_t, timesteps, conditions) -> eps_hat.
template <class Predict>
Tensor diffusion_loss(Predict&& predict, const Tensor& z0, std::span<const int> conditions,
                      const NoiseSchedule& sched, Rng& rng) {
    if (z0.rank() == 0 || z0.dim(0) == 0) throw ContractError("diffusion_loss: empty batch");
    const std::size_t batch = z0.dim(0);
    if (conditions.size() != batch) throw DimensionError("diffusion_loss: one condition per example required");
    std::vector<int> t(batch);
    for (auto& ti : t) ti = static_cast<int>(rng.index(static_cast<std::size_t>(sched.T)));
    const Tensor eps = rng.normal_tensor(z0.shape());
    const Tensor z_t = add_noise(z0.detach(), eps, t, sched);
    const Tensor eps_hat = predict(z_t, std::span<const int>(t), conditions);
    return mse(eps_hat, eps);
}

} // namespace maskunet
