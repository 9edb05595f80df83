#pragma once

// Binary weight masks: Gumbel-Sigmoid discretization, masked weights and the
// batched masked linear map.

#include <cmath>
#include <map>
#include <vector>
#include <string>

#include "maskunet/error.hpp"
#include "maskunet/random.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

struct MaskTensor {
    Tensor values; // [B, C_out, C_in] (or any shape before reshaping)
    bool hard = false;
};

// Per-layer masks keyed by layer id, each [B, C_out, C_in].
using MaskMap = std::map<std::string, Tensor>;

// g1 - g2 for independent standard Gumbel draws, i.e. standard logistic noise.
inline Tensor logistic_noise(const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    // g1 - g2 for independent Gumbel(0, 1) is Logistic(0, 1); draw it by
    // inverse CDF from a single uniform.
    for (double& x : v) {
        const double u = rng.uniform_open();
        x = std::log(u / (1.0 - u));
    }
    return Tensor(shape, std::move(v));
}

inline void check_mask_params(double tau, double delta) {
    if (!(tau > 0.0)) throw ConfigError("gumbel_sigmoid: tau must be positive, got " + std::to_string(tau));
    if (!(delta > 0.0 && delta < 1.0)) {
        throw ConfigError("gumbel_sigmoid: delta must lie in (0, 1), got " + std::to_string(delta));
    }
}

// y = sigmoid((logits + noise) / tau). When hard, the forward value is
// [y >= delta] and gradients flow through y (straight-through).
inline MaskTensor gumbel_sigmoid(const Tensor& logits, const Tensor& noise, double tau, double delta, bool hard) {
    check_mask_params(tau, delta);
    if (noise.shape() != logits.shape()) {
        throw DimensionError("gumbel_sigmoid: noise " + shape_str(noise.shape()) + " vs logits " +
                             shape_str(logits.shape()));
    }
    if (hard && !logits.requires_grad() && !noise.requires_grad()) {
        // Inference: same arithmetic as the graph path below, without the graph.
        const auto lv = logits.data();
        const auto nv = noise.data();
        const double inv_tau = 1.0 / tau;
        std::vector<double> bits(lv.size());
        for (std::size_t i = 0; i < lv.size(); ++i)
            bits[i] = detail::stable_sigmoid(inv_tau * (lv[i] + nv[i])) >= delta ? 1.0 : 0.0;
        return {Tensor(logits.shape(), std::move(bits)), true};
    }
    const Tensor soft = sigmoid(scale(add(logits, noise), 1.0 / tau));
    if (!hard) return {soft, false};
    return {straight_through(soft, delta), true};
}

inline MaskTensor gumbel_sigmoid(const Tensor& logits, double tau, double delta, bool hard, Rng& rng) {
    check_mask_params(tau, delta);
    return gumbel_sigmoid(logits, logistic_noise(logits.shape(), rng), tau, delta, hard);
}

// Noise-free hard mask: [sigmoid(logits / tau) >= delta], straight-through.
inline MaskTensor threshold_mask(const Tensor& logits, double tau, double delta) {
    return gumbel_sigmoid(logits, Tensor::zeros(logits.shape()), tau, delta, true);
}

// w_hat = m' (.) w with w [C_out, C_in] broadcast over the batch of m' [B, C_out, C_in].
inline Tensor apply_mask(const Tensor& weight, const Tensor& mask) {
    if (weight.rank() != 2 || mask.rank() != 3 || mask.dim(1) != weight.dim(0) || mask.dim(2) != weight.dim(1)) {
        throw DimensionError("apply_mask: mask " + shape_str(mask.shape()) + " does not fit weight " +
                             shape_str(weight.shape()));
    }
    return mul(mask, weight);
}

// o = BMM(h, w_hat) + bias; the bias is never masked.
inline Tensor masked_linear(const Tensor& h, const Tensor& w_hat, const Tensor& bias) {
    if (w_hat.rank() != 3 || bias.rank() != 1 || bias.dim(0) != w_hat.dim(1)) {
        throw DimensionError("masked_linear: bias " + shape_str(bias.shape()) + " does not fit weights " +
                             shape_str(w_hat.shape()));
    }
    return add(bmm(h, w_hat), bias);
}

// Fraction of zero entries in a hard mask.
inline double mask_ratio(const MaskTensor& m) {
    if (!m.hard) throw ContractError("mask_ratio: requires a hard mask");
    const auto v = m.values.data();
    if (v.empty()) return 0.0;
    std::size_t zeros = 0;
    for (double x : v) zeros += x == 0.0 ? 1 : 0;
    return static_cast<double>(zeros) / static_cast<double>(v.size());
}

} // namespace maskunet
