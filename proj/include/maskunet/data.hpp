#pragma once

// Synthetic ground truth: isotropic Gaussian mixtures, by default K components
// evenly spaced on a ring and scaled so each coordinate has unit variance.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "maskunet/error.hpp"
#include "maskunet/random.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

struct MixtureSpec {
    std::vector<std::vector<double>> means; // K x D
    double std = 1.0;                       // shared isotropic component std
    // Equal component weights.

    std::size_t components() const { return means.size(); }
    std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }

    const std::vector<double>& mean_of(int c) const {
        if (c < 0 || static_cast<std::size_t>(c) >= means.size()) {
            throw ContractError("mixture: unknown class id " + std::to_string(c));
        }
        return means[static_cast<std::size_t>(c)];
    }
};

struct RingParams {
    int components = 8;
    double radius = 4.0;
    double std = 0.3;
    bool normalize = true;
};

// With K >= 3 evenly spaced angles each coordinate has variance r^2/2 + s^2,
// which is the scale removed when normalize is set.
inline MixtureSpec ring_mixture(const RingParams& p) {
    if (p.components < 1) throw ConfigError("data.components must be >= 1");
    if (!(p.radius >= 0.0) || !(p.std > 0.0)) throw ConfigError("data: radius must be >= 0 and std > 0");
    const double scale = p.normalize ? 1.0 / std::sqrt(p.radius * p.radius / 2.0 + p.std * p.std) : 1.0;
    MixtureSpec m;
    m.std = p.std * scale;
    for (int k = 0; k < p.components; ++k) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(p.components);
        m.means.push_back({p.radius * scale * std::cos(a), p.radius * scale * std::sin(a)});
    }
    return m;
}

struct Dataset {
    Tensor points;           // [M, D]
    std::vector<int> labels; // component index per point

    std::size_t size() const { return labels.size(); }
};

inline Dataset sample_mixture(const MixtureSpec& mix, std::size_t n, Rng& rng) {
    const std::size_t d = mix.dim();
    std::vector<double> v(n * d);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = rng.index(mix.components());
        labels[i] = static_cast<int>(k);
        for (std::size_t j = 0; j < d; ++j) v[i * d + j] = mix.means[k][j] + mix.std * rng.normal();
    }
    return {Tensor(Shape{n, d}, std::move(v)), std::move(labels)};
}

// Per-component log N(x; mu_k, std^2 I) + log(1/K) for one point.
inline std::vector<double> component_log_joint(const MixtureSpec& mix, std::span<const double> x) {
    const double var = mix.std * mix.std;
    const double d = static_cast<double>(mix.dim());
    const double norm = -0.5 * d * std::log(2.0 * std::numbers::pi * var) -
                        std::log(static_cast<double>(mix.components()));
    std::vector<double> out(mix.components());
    for (std::size_t k = 0; k < out.size(); ++k) {
        double sq = 0.0;
        for (std::size_t j = 0; j < mix.dim(); ++j) {
            const double diff = x[j] - mix.means[k][j];
            sq += diff * diff;
        }
        out[k] = norm - 0.5 * sq / var;
    }
    return out;
}

inline double log_sum_exp(std::span<const double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

inline double mixture_log_density(const MixtureSpec& mix, std::span<const double> x) {
    const auto lj = component_log_joint(mix, x);
    return log_sum_exp(lj);
}

// Posterior responsibilities p(k | x).
inline std::vector<double> mixture_posterior(const MixtureSpec& mix, std::span<const double> x) {
    auto lj = component_log_joint(mix, x);
    const double lse = log_sum_exp(lj);
    for (double& v : lj) v = std::exp(v - lse);
    return lj;
}

} // namespace maskunet
