#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "maskunet/maskunet.hpp"

namespace testutil {

using namespace maskunet;

inline Tensor random_tensor(Rng& rng, Shape shape, bool grad = false, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v), grad);
}

// Entries bounded away from 0 (keeps relu away from its kink under FD steps).
inline Tensor away_from_zero(Rng& rng, Shape shape, bool grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        const double u = rng.normal();
        x = u >= 0 ? u + 0.05 : u - 0.05;
    }
    return Tensor(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a.data(), b.data()); }

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Directional central-difference check of backward() at the current values of
// `leaves` along a random direction. Returns the relative error.
inline double fd_probe(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, Rng& rng,
                       double h = 1e-6) {
    for (auto& l : leaves) l.zero_grad();
    backward(loss_fn());
    std::vector<std::vector<double>> dirs;
    double analytic = 0.0;
    for (auto& l : leaves) {
        std::vector<double> d(l.numel());
        for (double& x : d) x = rng.normal();
        const auto g = l.grad();
        for (std::size_t i = 0; i < d.size(); ++i) analytic += (g.empty() ? 0.0 : g[i]) * d[i];
        dirs.push_back(std::move(d));
    }
    std::vector<std::vector<double>> saved;
    for (auto& l : leaves) saved.emplace_back(l.data().begin(), l.data().end());
    auto place = [&](double s) {
        for (std::size_t k = 0; k < leaves.size(); ++k) {
            auto v = leaves[k].mutable_data();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = saved[k][i] + s * dirs[k][i];
        }
    };
    place(h);
    const double fp = loss_fn().item();
    place(-h);
    const double fm = loss_fn().item();
    place(0.0);
    return rel_err(analytic, (fp - fm) / (2.0 * h));
}

inline std::vector<int> random_classes(Rng& rng, std::size_t n, int k) {
    std::vector<int> c(n);
    for (int& x : c) x = static_cast<int>(rng.index(static_cast<std::size_t>(k)));
    return c;
}

} // namespace testutil
