#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "maskunet/error.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

struct MomentState {
    std::vector<double> m;
    std::vector<double> v;
};

// One AdamW update of a single parameter buffer. `step` is the 1-based step
// index used for bias correction. Decay is decoupled: p <- p - lr*wd*p first,
// then the bias-corrected moment update.
inline void adamw_step(std::span<double> param, std::span<const double> grad, MomentState& state, long step,
                       const AdamWConfig& cfg) {
    if (grad.size() != param.size()) throw DimensionError("adamw_step: gradient shape does not match parameter");
    for (double g : grad) {
        if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");
    }
    if (state.m.size() != param.size()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        param[i] -= cfg.lr * cfg.weight_decay * param[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

// Optimizer over a fixed list of leaf tensors. Parameters that received no
// gradient in the last backward pass are treated as having a zero gradient.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg)
        : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

    void step() {
        // Validate everything first so a bad gradient aborts the whole step.
        for (const auto& p : params_)
            for (double g : p.grad()) {
                if (!std::isfinite(g)) throw NumericError("adamw: non-finite gradient, step aborted");
            }
        ++step_;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            std::vector<double> zeros;
            std::span<const double> g = p.grad();
            if (g.empty()) {
                zeros.assign(p.numel(), 0.0);
                g = zeros;
            }
            adamw_step(p.mutable_data(), g, states_[i], step_, cfg_);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    long steps() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<Tensor> params_;
    std::vector<MomentState> states_;
    AdamWConfig cfg_;
    long step_ = 0;
};

} // namespace maskunet
