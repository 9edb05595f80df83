#pragma once

// Batched DDIM sampling with classifier-free guidance, optionally routing the
// maskable layers through generator-produced masks.
//
// Each row i owns an RNG stream derived from (seed, i) for its initial noise
// and any stochastic DDIM noise, so a row's trajectory does not depend on the
// batch it is generated in.

#include <cstdint>
#include <span>
#include <vector>

#include "maskunet/denoiser.hpp"
#include "maskunet/diffusion.hpp"
#include "maskunet/mask_generator.hpp"
#include "maskunet/random.hpp"

namespace maskunet {

struct SampleOptions {
    SamplerConfig sampler;
    MaskNoise mask_noise = MaskNoise::sampled;
};

inline Rng row_stream(std::uint64_t seed, std::size_t row) { return Rng(derive_seed(seed, {0x524fu, row})); }

// Initial latent z_T for rows [0, n) drawn from their per-row streams.
inline Tensor initial_latents(std::size_t n, std::size_t dim, std::vector<Rng>& streams) {
    std::vector<double> v(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) v[i * dim + j] = streams[i].normal();
    return Tensor(Shape{n, dim}, std::move(v));
}

inline Tensor row_noise(std::size_t dim, std::vector<Rng>& streams) {
    std::vector<double> v(streams.size() * dim);
    for (std::size_t i = 0; i < streams.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) v[i * dim + j] = streams[i].normal();
    return Tensor(Shape{streams.size(), dim}, std::move(v));
}

// Guided epsilon for one step; the same masks serve the conditional and
// unconditional passes.
inline Tensor guided_eps(const DenoiserModel& model, const Tensor& z, int t, std::span<const int> classes,
                         double guidance, const MaskMap* masks) {
    const std::vector<int> nulls(classes.size(), model.null_class());
    const Tensor eps_c = model.forward(z, t, classes, masks);
    const Tensor eps_u = model.forward(z, t, nulls, masks);
    return cfg_combine(eps_u, eps_c, guidance);
}

inline Tensor sample(const DenoiserModel& model, const std::vector<MaskGenerator>& gens,
                     std::span<const int> classes, const NoiseSchedule& sched, const SampleOptions& opts) {
    const auto& sc = opts.sampler;
    const std::size_t n = classes.size();
    const auto dim = static_cast<std::size_t>(model.config().data_dim);
    if (n == 0) return Tensor::zeros(Shape{0, dim});
    DenoiserModel frozen = model;
    frozen.set_trainable(false);
    std::vector<MaskGenerator> fixed = gens;
    for (auto& g : fixed)
        for (auto& p : g.parameters()) p.set_requires_grad(false);

    std::vector<Rng> streams;
    streams.reserve(n);
    for (std::size_t i = 0; i < n; ++i) streams.push_back(row_stream(sc.seed, i));
    Tensor z = initial_latents(n, dim, streams);

    const auto ts = inference_timesteps(sched.T, sc.num_inference_steps);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
        Tensor eps;
        if (fixed.empty()) {
            eps = guided_eps(frozen, z, t, classes, sc.guidance_scale, nullptr);
        } else {
            Rng mask_rng(derive_seed(sc.seed, {0x4d4bu, static_cast<std::uint64_t>(t)}));
            const std::vector<int> tv(n, t);
            const MaskMap masks = generate_masks(fixed, tv, z, true, mask_rng, opts.mask_noise);
            eps = guided_eps(frozen, z, t, classes, sc.guidance_scale, &masks);
        }
        const double sigma = ddim_sigma(sc.eta, sched.alpha_bar(t), sched.alpha_bar(t_prev));
        z = sigma > 0.0 ? ddim_step(z, eps, t, t_prev, sc.eta, sched, row_noise(dim, streams))
                        : ddim_step(z, eps, t, t_prev, sc.eta, sched, nullptr, nullptr);
    }
    return z;
}

// Class ids 0..K-1, each repeated per_class times.
inline std::vector<int> balanced_classes(int num_classes, std::size_t per_class) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(num_classes) * per_class);
    for (int c = 0; c < num_classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i) out.push_back(c);
    return out;
}

} // namespace maskunet
