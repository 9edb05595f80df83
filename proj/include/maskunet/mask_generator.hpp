#pragma once

// Per-layer mask generator. The timestep embedding and the pooled sample are
// merged (z' = FC(t_emb) + GAP(z)), mapped to logits by a 4-layer MLP, and
// discretized with Gumbel-Sigmoid into a [B, C_out, C_in] weight mask.

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskunet/denoiser.hpp"
#include "maskunet/error.hpp"
#include "maskunet/masking.hpp"
#include "maskunet/random.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

struct MaskGeneratorConfig {
    std::string layer_id;
    int in_channels = 2; // C: width of the pooled sample
    int temb_dim = 32;   // C1
    int mlp_hidden = 64;
    int out_rows = 0;    // C_out of the target layer
    int out_cols = 0;    // C_in of the target layer
    double tau = 1.0;
    double delta = 0.5;
    bool use_temb = true;
    bool use_sample = true;
    // Bias of the last MLP layer at initialization; large values start the
    // generator at (almost surely) all-ones masks.
    double init_logit = 6.0;

    int out_dim() const { return out_rows * out_cols; } // C2

    void validate() const {
        if (!use_temb && !use_sample) {
            throw ConfigError("mask generator '" + layer_id + "': at least one of use_temb/use_sample must be set");
        }
        if (out_rows < 1 || out_cols < 1) throw ConfigError("mask generator '" + layer_id + "': empty target layer");
        if (in_channels < 1 || mlp_hidden < 1) throw ConfigError("mask generator '" + layer_id + "': bad widths");
        if (temb_dim < 2 || temb_dim % 2) throw ConfigError("mask generator '" + layer_id + "': temb_dim must be even");
        check_mask_params(tau, delta);
    }
};

class MaskGenerator {
public:
    MaskGenerator(MaskGeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(seed);
        const auto c = static_cast<std::size_t>(config_.in_channels);
        const auto c1 = static_cast<std::size_t>(config_.temb_dim);
        const auto h = static_cast<std::size_t>(config_.mlp_hidden);
        const auto c2 = static_cast<std::size_t>(config_.out_dim());
        fc_ = Linear::init(c1, c, rng);
        mlp_[0] = Linear::init(c, h, rng);
        mlp_[1] = Linear::init(h, h, rng);
        mlp_[2] = Linear::init(h, h, rng);
        mlp_[3] = Linear::init(h, c2, rng, 0.1);
        for (double& b : mlp_[3].bias.mutable_data()) b = config_.init_logit;
    }

    // Generator sized for one maskable layer of `model`.
    static MaskGenerator for_layer(const DenoiserModel& model, MaskGeneratorConfig config, std::uint64_t seed) {
        if (!model.is_maskable(config.layer_id)) {
            throw ConfigError("mask generator: layer '" + config.layer_id + "' is not maskable");
        }
        const Linear& l = model.layer(config.layer_id);
        config.out_rows = static_cast<int>(l.out_features());
        config.out_cols = static_cast<int>(l.in_features());
        config.in_channels = model.config().data_dim;
        return MaskGenerator(std::move(config), seed);
    }

    MaskGenerator(const MaskGenerator& o) : config_(o.config_), fc_(o.fc_.clone()) {
        for (std::size_t i = 0; i < mlp_.size(); ++i) mlp_[i] = o.mlp_[i].clone();
    }
    MaskGenerator& operator=(const MaskGenerator& o) {
        if (this != &o) *this = MaskGenerator(o);
        return *this;
    }
    MaskGenerator(MaskGenerator&&) noexcept = default;
    MaskGenerator& operator=(MaskGenerator&&) noexcept = default;

    const MaskGeneratorConfig& config() const { return config_; }
    const Linear& fc() const { return fc_; }
    const Linear& mlp(std::size_t i) const { return mlp_.at(i); }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("fc.bias", fc_.bias);
        out.emplace_back("fc.weight", fc_.weight);
        for (std::size_t i = 0; i < mlp_.size(); ++i) {
            out.emplace_back("mlp" + std::to_string(i) + ".bias", mlp_[i].bias);
            out.emplace_back("mlp" + std::to_string(i) + ".weight", mlp_[i].weight);
        }
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [_, t] : named_parameters()) out.push_back(t);
        return out;
    }

    void load_parameter(const std::string& name, std::span<const double> values) {
        for (auto& [n, p] : named_parameters()) {
            if (n == name) {
                if (p.numel() != values.size()) {
                    throw DimensionError("mask generator: parameter '" + name + "' size mismatch");
                }
                std::copy(values.begin(), values.end(), p.mutable_data().begin());
                return;
            }
        }
        throw ConfigError("mask generator: unknown parameter '" + name + "'");
    }

    // Test hook: zero every weight and bias.
    void zero_parameters() {
        for (auto& p : parameters())
            for (double& v : p.mutable_data()) v = 0.0;
    }

    void set_flags(bool use_temb, bool use_sample) {
        config_.use_temb = use_temb;
        config_.use_sample = use_sample;
        config_.validate();
    }

private:
    MaskGeneratorConfig config_;
    Linear fc_;
    std::array<Linear, 4> mlp_;
};

// z' = FC(t_emb) + GAP(z); a disabled branch contributes zeros.
inline Tensor fuse_inputs(const Tensor& t_emb, const Tensor& z, const MaskGenerator& gen) {
    const auto& cfg = gen.config();
    cfg.validate();
    const std::size_t c = static_cast<std::size_t>(cfg.in_channels);
    if (t_emb.rank() != 2 || t_emb.dim(1) != static_cast<std::size_t>(cfg.temb_dim)) {
        throw DimensionError("fuse_inputs: t_emb " + shape_str(t_emb.shape()) + " does not match temb_dim " +
                             std::to_string(cfg.temb_dim));
    }
    const std::size_t batch = t_emb.dim(0);
    Tensor merged;
    if (cfg.use_temb) merged = gen.fc()(t_emb);
    if (cfg.use_sample) {
        const Tensor pooled = gap(z);
        if (pooled.dim(0) != batch || pooled.dim(1) != c) {
            throw DimensionError("fuse_inputs: pooled sample " + shape_str(pooled.shape()) + " expected [" +
                                 std::to_string(batch) + "x" + std::to_string(c) + "]");
        }
        merged = merged.defined() ? add(merged, pooled) : pooled;
    }
    return merged;
}

// Linear -> ReLU -> Linear -> ReLU -> Linear -> Linear.
inline Tensor mask_logits(const Tensor& fused, const MaskGenerator& gen) {
    const auto c = static_cast<std::size_t>(gen.config().in_channels);
    if (fused.rank() != 2 || fused.dim(1) != c) {
        throw DimensionError("mask_logits: expected [B x " + std::to_string(c) + "], got " +
                             shape_str(fused.shape()));
    }
    Tensor x = relu(gen.mlp(0)(fused));
    x = relu(gen.mlp(1)(x));
    x = gen.mlp(2)(x);
    return gen.mlp(3)(x);
}

// Logits reshaped to [B, C_out, C_in] for one generator.
inline Tensor generator_logits(const MaskGenerator& gen, std::span<const int> t, const Tensor& z) {
    const auto& cfg = gen.config();
    const Tensor t_emb = timestep_embedding_batch(t, cfg.temb_dim);
    const Tensor logits = mask_logits(fuse_inputs(t_emb, z, gen), gen);
    return reshape(logits, Shape{t.size(), static_cast<std::size_t>(cfg.out_rows),
                                 static_cast<std::size_t>(cfg.out_cols)});
}

enum class MaskNoise { sampled, none };

// Runs every generator on (t, z) and discretizes; keyed by target layer id.
inline MaskMap generate_masks(const std::vector<MaskGenerator>& gens, std::span<const int> t, const Tensor& z,
                              bool hard, Rng& rng, MaskNoise noise = MaskNoise::sampled) {
    MaskMap out;
    for (const auto& gen : gens) {
        const auto& cfg = gen.config();
        if (out.count(cfg.layer_id)) {
            throw ConfigError("generate_masks: two generators target layer '" + cfg.layer_id + "'");
        }
        const Tensor logits = generator_logits(gen, t, z);
        const Tensor eps = noise == MaskNoise::sampled ? logistic_noise(logits.shape(), rng)
                                                       : Tensor::zeros(logits.shape());
        out.emplace(cfg.layer_id, gumbel_sigmoid(logits, eps, cfg.tau, cfg.delta, hard).values);
    }
    return out;
}

inline std::size_t parameter_count(const MaskGenerator& gen) {
    std::size_t n = 0;
    for (const auto& p : gen.parameters()) n += p.numel();
    return n;
}

} // namespace maskunet
