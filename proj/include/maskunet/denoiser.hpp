#pragma once

// Conditional epsilon-prediction network used as the frozen base model.
//
// Topology (B = batch, D = data_dim, H = hidden_dim, C1 = temb_dim):
//
//   h0  = relu(in(z) + temb(t_emb) + cond(class_embed[c]))   D  -> H
//   h1  = relu(hidden1(h0))                                  H  -> H
//   h2  = relu(hidden2(h1))                                  H  -> H
//   eps = out(h2) + skip(z)                                  H  -> D
//
// Any layer listed in maskable_layers accepts a per-sample [B, C_out, C_in]
// mask and then runs through masked_linear instead of the plain linear map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskunet/error.hpp"
#include "maskunet/masking.hpp"
#include "maskunet/random.hpp"
#include "maskunet/tensor.hpp"

namespace maskunet {

// Sinusoidal embedding: [sin(t f_0..f_{h-1}), cos(t f_0..f_{h-1})] with
// h = dim / 2 and frequencies geometric from 1 down to 1/10000.
inline std::vector<double> timestep_embedding(double t, int dim) {
    if (dim <= 0 || dim % 2 != 0) {
        throw ConfigError("timestep_embedding: dim must be even and positive, got " + std::to_string(dim));
    }
    const int half = dim / 2;
    std::vector<double> out(static_cast<std::size_t>(dim));
    for (int i = 0; i < half; ++i) {
        const double frac = half == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(half - 1);
        const double freq = std::exp(-std::log(10000.0) * frac);
        out[static_cast<std::size_t>(i)] = std::sin(t * freq);
        out[static_cast<std::size_t>(i + half)] = std::cos(t * freq);
    }
    return out;
}

// Stacked embeddings for a batch of timesteps: [B, dim].
inline Tensor timestep_embedding_batch(std::span<const int> t, int dim) {
    std::vector<double> v;
    v.reserve(t.size() * static_cast<std::size_t>(dim));
    for (int ti : t) {
        const auto e = timestep_embedding(static_cast<double>(ti), dim);
        v.insert(v.end(), e.begin(), e.end());
    }
    return Tensor(Shape{t.size(), static_cast<std::size_t>(dim)}, std::move(v));
}

struct Linear {
    Tensor weight; // [C_out, C_in]
    Tensor bias;   // [C_out]

    std::size_t out_features() const { return weight.dim(0); }
    std::size_t in_features() const { return weight.dim(1); }

    // Weights ~ N(0, 1/fan_in), zero bias.
    static Linear init(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
        Linear l;
        std::vector<double> w(in * out);
        const double sd = gain / std::sqrt(static_cast<double>(in));
        for (double& x : w) x = sd * rng.normal();
        l.weight = Tensor(Shape{out, in}, std::move(w), true);
        l.bias = Tensor::zeros(Shape{out}, true);
        return l;
    }

    Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

    Linear clone() const { return {weight.clone(), bias.clone()}; }
};

struct DenoiserConfig {
    int data_dim = 2;
    int hidden_dim = 32;
    int temb_dim = 32;
    int num_classes = 8;
    std::vector<std::string> maskable_layers{"hidden1", "hidden2"};
};

class DenoiserModel {
public:
    static const std::vector<std::string>& layer_ids() {
        static const std::vector<std::string> ids{"in", "temb", "cond", "hidden1", "hidden2", "out", "skip"};
        return ids;
    }

    DenoiserModel(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
        validate();
        Rng rng(seed);
        const auto d = static_cast<std::size_t>(config_.data_dim);
        const auto h = static_cast<std::size_t>(config_.hidden_dim);
        const auto c1 = static_cast<std::size_t>(config_.temb_dim);
        layers_.emplace("in", Linear::init(d, h, rng));
        layers_.emplace("temb", Linear::init(c1, h, rng));
        layers_.emplace("cond", Linear::init(c1, h, rng));
        layers_.emplace("hidden1", Linear::init(h, h, rng));
        layers_.emplace("hidden2", Linear::init(h, h, rng));
        layers_.emplace("out", Linear::init(h, d, rng));
        layers_.emplace("skip", Linear::init(d, d, rng));
        const std::size_t rows = static_cast<std::size_t>(config_.num_classes) + 1;
        class_embed_ = rng.normal_tensor(Shape{rows, c1});
        class_embed_.set_requires_grad(true);
    }

    DenoiserModel(const DenoiserModel& other) : config_(other.config_), class_embed_(other.class_embed_.clone()) {
        for (const auto& [k, l] : other.layers_) layers_.emplace(k, l.clone());
    }

    DenoiserModel& operator=(const DenoiserModel& other) {
        if (this != &other) *this = DenoiserModel(other);
        return *this;
    }

    DenoiserModel(DenoiserModel&&) noexcept = default;
    DenoiserModel& operator=(DenoiserModel&&) noexcept = default;

    const DenoiserConfig& config() const { return config_; }
    int null_class() const { return config_.num_classes; }

    const Linear& layer(const std::string& id) const {
        auto it = layers_.find(id);
        if (it == layers_.end()) throw ConfigError("denoiser: unknown layer '" + id + "'");
        return it->second;
    }

    bool is_maskable(const std::string& id) const {
        const auto& m = config_.maskable_layers;
        return std::find(m.begin(), m.end(), id) != m.end();
    }

    // Parameters in a fixed, name-sorted order.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("class_embed", class_embed_);
        for (const auto& [k, l] : layers_) {
            out.emplace_back(k + ".bias", l.bias);
            out.emplace_back(k + ".weight", l.weight);
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [_, t] : named_parameters()) out.push_back(t);
        return out;
    }

    void set_trainable(bool on) {
        for (auto& p : parameters()) p.set_requires_grad(on);
    }

    // eps_hat for z_t [B, D] at per-example timesteps and condition ids.
    Tensor forward(const Tensor& z_t, std::span<const int> t, std::span<const int> c,
                   const MaskMap* masks = nullptr) const {
        if (z_t.rank() != 2 || z_t.dim(1) != static_cast<std::size_t>(config_.data_dim)) {
            throw DimensionError("denoiser: expected input [B, " + std::to_string(config_.data_dim) + "], got " +
                                 shape_str(z_t.shape()));
        }
        const std::size_t batch = z_t.dim(0);
        if (t.size() != batch || c.size() != batch) {
            throw DimensionError("denoiser: need one timestep and one condition per example");
        }
        for (int ci : c) {
            if (ci < 0 || ci > config_.num_classes) {
                throw ContractError("denoiser: condition id " + std::to_string(ci) + " outside [0, " +
                                    std::to_string(config_.num_classes) + "]");
            }
        }
        if (masks) {
            for (const auto& [id, m] : *masks) {
                if (!is_maskable(id)) throw ConfigError("denoiser: layer '" + id + "' is not maskable");
                const Linear& l = layer(id);
                if (m.rank() != 3 || m.dim(0) != batch || m.dim(1) != l.out_features() ||
                    m.dim(2) != l.in_features()) {
                    throw DimensionError("denoiser: mask for '" + id + "' has shape " + shape_str(m.shape()) +
                                         ", expected [" + std::to_string(batch) + "x" +
                                         std::to_string(l.out_features()) + "x" + std::to_string(l.in_features()) +
                                         "]");
                }
            }
        }

        const Tensor temb = timestep_embedding_batch(t, config_.temb_dim);
        const Tensor cemb = gather_rows(class_embed_, c);

        auto apply = [&](const std::string& id, const Tensor& x) {
            const Linear& l = layer(id);
            if (masks) {
                if (auto it = masks->find(id); it != masks->end()) {
                    const Tensor h = reshape(x, Shape{batch, 1, l.in_features()});
                    const Tensor o = masked_linear(h, apply_mask(l.weight, it->second), l.bias);
                    return reshape(o, Shape{batch, l.out_features()});
                }
            }
            return l(x);
        };

        const Tensor h0 = relu(add(add(apply("in", z_t), apply("temb", temb)), apply("cond", cemb)));
        const Tensor h1 = relu(apply("hidden1", h0));
        const Tensor h2 = relu(apply("hidden2", h1));
        return add(apply("out", h2), apply("skip", z_t));
    }

    Tensor forward(const Tensor& z_t, int t, std::span<const int> c, const MaskMap* masks = nullptr) const {
        const std::vector<int> ts(z_t.rank() ? z_t.dim(0) : 0, t);
        return forward(z_t, ts, c, masks);
    }

    // Overwrites parameter values by name (checkpoint loading).
    void load_parameter(const std::string& name, std::span<const double> values) {
        for (auto& [n, p] : named_parameters()) {
            if (n == name) {
                if (p.numel() != values.size()) {
                    throw DimensionError("denoiser: parameter '" + name + "' expects " + std::to_string(p.numel()) +
                                         " values, got " + std::to_string(values.size()));
                }
                std::copy(values.begin(), values.end(), p.mutable_data().begin());
                return;
            }
        }
        throw ConfigError("denoiser: unknown parameter '" + name + "'");
    }

private:
    void validate() const {
        if (config_.data_dim < 1) throw ConfigError("model.data_dim must be >= 1");
        if (config_.hidden_dim < 1) throw ConfigError("model.hidden_dim must be >= 1");
        if (config_.temb_dim < 2 || config_.temb_dim % 2 != 0) throw ConfigError("model.temb_dim must be even");
        if (config_.num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
        for (const auto& id : config_.maskable_layers) {
            const auto& ids = layer_ids();
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
                throw ConfigError("model.maskable_layers: unknown layer '" + id + "'");
            }
        }
    }

    DenoiserConfig config_;
    std::map<std::string, Linear> layers_;
    Tensor class_embed_;
};

} // namespace maskunet
