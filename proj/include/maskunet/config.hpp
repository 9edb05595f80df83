#pragma once

// Experiment configuration: a flat tree of dotted keys read from a small text
// format and written back canonically (sorted, one `key = value` per line).
//
//   # comment
//   seed = 7
//   [train]
//   epochs = 12          # same as train.epochs = 12 at top level
//
// Lists are comma-separated. Unknown keys are rejected with their line number.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "maskunet/denoiser.hpp"
#include "maskunet/diffusion.hpp"
#include "maskunet/error.hpp"
#include "maskunet/freeopt.hpp"
#include "maskunet/io.hpp"
#include "maskunet/mask_generator.hpp"
#include "maskunet/sampling.hpp"
#include "maskunet/train.hpp"

namespace maskunet {

struct DataConfig {
    RingParams ring;
    std::size_t train_size = 5000;
    std::size_t heldout_size = 2000;
    std::uint64_t seed = 1;
};

struct ScheduleConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct EvalConfig {
    std::size_t per_class = 250;
    std::vector<std::uint64_t> seeds{1};
};

struct StudyConfig {
    std::vector<int> timesteps{999, 800, 600, 400, 200, 0};
    std::uint64_t probe_seed = 11;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ScheduleConfig schedule;
    DenoiserConfig model;
    // Shared settings for every generator; one generator per entry of mask_layers.
    MaskGeneratorConfig mask;
    std::vector<std::string> mask_layers{"hidden1", "hidden2"};
    TrainConfig train;
    // Optimizer settings for train-mask (generator parameters only).
    TrainConfig mask_train{.epochs = 4, .mode = TrainMode::mask_generator};
    SampleOptions sampler;
    FreeOptConfig freeopt;
    std::vector<RewardSpec> rewards = default_rewards();
    std::size_t freeopt_per_class = 4;
    EvalConfig eval;
    StudyConfig study;

    void validate() const {
        schedule_check();
        for (const auto& id : mask_layers) {
            const auto& m = model.maskable_layers;
            if (std::find(m.begin(), m.end(), id) == m.end()) {
                throw ConfigError("mask.layers: '" + id + "' is not in model.maskable_layers");
            }
        }
        train.validate();
        mask_train.validate();
        freeopt.validate();
        if (!mask.use_temb && !mask.use_sample) throw ConfigError("mask: use_temb and use_sample cannot both be false");
        check_mask_params(mask.tau, mask.delta);
        if (data.ring.components != model.num_classes) {
            throw ConfigError("data.components must equal model.num_classes");
        }
        if (eval.seeds.empty()) throw ConfigError("eval.seeds: at least one seed required");
        for (int t : study.timesteps)
            if (t < 0 || t >= schedule.T) throw ConfigError("study.timesteps: " + std::to_string(t) + " outside [0, T)");
    }

private:
    void schedule_check() const {
        (void)make_schedule(schedule.T, schedule.beta_start, schedule.beta_end);
        if (sampler.sampler.num_inference_steps < 1 || sampler.sampler.num_inference_steps > schedule.T) {
            throw ConfigError("sampler.steps must lie in [1, schedule.T]");
        }
        if (freeopt.steps > schedule.T) throw ConfigError("freeopt.steps must be <= schedule.T");
        if (!(sampler.sampler.eta >= 0.0 && sampler.sampler.eta <= 1.0)) throw ConfigError("sampler.eta must lie in [0, 1]");
        if (sampler.sampler.guidance_scale < 0.0) throw ConfigError("sampler.guidance must be >= 0");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

template <class Int>
Int parse_int(const std::string& s) {
    Int v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("expected true/false, got '" + s + "'");
}

inline std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
Field int_ref(std::function<T&(ExperimentConfig&)> ref) {
    return {[ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_int<T>(v); }};
}

inline Field double_ref(std::function<double&(ExperimentConfig&)> ref) {
    return {[ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double(v); }};
}

inline Field bool_ref(std::function<bool&(ExperimentConfig&)> ref) {
    return {[ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(v); }};
}

inline Field strings_ref(std::function<std::vector<std::string>&(ExperimentConfig&)> ref) {
    return {[ref](const ExperimentConfig& c) { return join(ref(const_cast<ExperimentConfig&>(c))); },
            [ref](ExperimentConfig& c, const std::string& v) { ref(c) = split_list(v); }};
}

template <class T>
Field ints_ref(std::function<std::vector<T>&(ExperimentConfig&)> ref) {
    return {[ref](const ExperimentConfig& c) {
                std::vector<std::string> s;
                for (auto x : ref(const_cast<ExperimentConfig&>(c))) s.push_back(std::to_string(x));
                return join(s);
            },
            [ref](ExperimentConfig& c, const std::string& v) {
                std::vector<T> out;
                for (const auto& s : split_list(v)) out.push_back(parse_int<T>(s));
                ref(c) = out;
            }};
}

inline std::string rewards_to_string(const std::vector<RewardSpec>& r) {
    std::vector<std::string> s;
    for (const auto& spec : r) s.push_back(std::string(to_string(spec.kind)) + ":" + format_double(spec.weight));
    return join(s);
}

inline std::vector<RewardSpec> rewards_from_string(const std::string& v) {
    std::vector<RewardSpec> out;
    for (const auto& item : split_list(v)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("expected kind:weight, got '" + item + "'");
        out.push_back({parse_reward_kind(trim(item.substr(0, colon))), parse_double(trim(item.substr(colon + 1)))});
    }
    return out;
}

inline const std::map<std::string, Field>& fields() {
    using C = ExperimentConfig;
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        f["seed"] = int_ref<std::uint64_t>([](C& c) -> std::uint64_t& { return c.seed; });
        f["data.components"] = int_ref<int>([](C& c) -> int& { return c.data.ring.components; });
        f["data.radius"] = double_ref([](C& c) -> double& { return c.data.ring.radius; });
        f["data.std"] = double_ref([](C& c) -> double& { return c.data.ring.std; });
        f["data.normalize"] = bool_ref([](C& c) -> bool& { return c.data.ring.normalize; });
        f["data.train_size"] = int_ref<std::size_t>([](C& c) -> std::size_t& { return c.data.train_size; });
        f["data.heldout_size"] = int_ref<std::size_t>([](C& c) -> std::size_t& { return c.data.heldout_size; });
        f["data.seed"] = int_ref<std::uint64_t>([](C& c) -> std::uint64_t& { return c.data.seed; });
        f["schedule.T"] = int_ref<int>([](C& c) -> int& { return c.schedule.T; });
        f["schedule.beta_start"] = double_ref([](C& c) -> double& { return c.schedule.beta_start; });
        f["schedule.beta_end"] = double_ref([](C& c) -> double& { return c.schedule.beta_end; });
        f["model.data_dim"] = int_ref<int>([](C& c) -> int& { return c.model.data_dim; });
        f["model.hidden_dim"] = int_ref<int>([](C& c) -> int& { return c.model.hidden_dim; });
        f["model.temb_dim"] = int_ref<int>([](C& c) -> int& { return c.model.temb_dim; });
        f["model.num_classes"] = int_ref<int>([](C& c) -> int& { return c.model.num_classes; });
        f["model.maskable_layers"] = strings_ref([](C& c) -> std::vector<std::string>& { return c.model.maskable_layers; });
        f["mask.layers"] = strings_ref([](C& c) -> std::vector<std::string>& { return c.mask_layers; });
        f["mask.mlp_hidden"] = int_ref<int>([](C& c) -> int& { return c.mask.mlp_hidden; });
        f["mask.temb_dim"] = int_ref<int>([](C& c) -> int& { return c.mask.temb_dim; });
        f["mask.tau"] = double_ref([](C& c) -> double& { return c.mask.tau; });
        f["mask.delta"] = double_ref([](C& c) -> double& { return c.mask.delta; });
        f["mask.use_temb"] = bool_ref([](C& c) -> bool& { return c.mask.use_temb; });
        f["mask.use_sample"] = bool_ref([](C& c) -> bool& { return c.mask.use_sample; });
        f["mask.init_logit"] = double_ref([](C& c) -> double& { return c.mask.init_logit; });
        f["mask.epochs"] = int_ref<int>([](C& c) -> int& { return c.mask_train.epochs; });
        f["mask.batch_size"] = int_ref<int>([](C& c) -> int& { return c.mask_train.batch_size; });
        f["mask.lr"] = double_ref([](C& c) -> double& { return c.mask_train.lr; });
        f["mask.weight_decay"] = double_ref([](C& c) -> double& { return c.mask_train.weight_decay; });
        f["mask.cond_dropout"] = double_ref([](C& c) -> double& { return c.mask_train.cond_dropout; });
        f["train.epochs"] = int_ref<int>([](C& c) -> int& { return c.train.epochs; });
        f["train.batch_size"] = int_ref<int>([](C& c) -> int& { return c.train.batch_size; });
        f["train.lr"] = double_ref([](C& c) -> double& { return c.train.lr; });
        f["train.weight_decay"] = double_ref([](C& c) -> double& { return c.train.weight_decay; });
        f["train.cond_dropout"] = double_ref([](C& c) -> double& { return c.train.cond_dropout; });
        f["sampler.steps"] = int_ref<int>([](C& c) -> int& { return c.sampler.sampler.num_inference_steps; });
        f["sampler.eta"] = double_ref([](C& c) -> double& { return c.sampler.sampler.eta; });
        f["sampler.guidance"] = double_ref([](C& c) -> double& { return c.sampler.sampler.guidance_scale; });
        f["sampler.mask_noise"] = {
            [](const C& c) { return std::string(c.sampler.mask_noise == MaskNoise::sampled ? "sampled" : "none"); },
            [](C& c, const std::string& v) {
                if (v == "sampled") c.sampler.mask_noise = MaskNoise::sampled;
                else if (v == "none") c.sampler.mask_noise = MaskNoise::none;
                else throw ConfigError("expected sampled|none, got '" + v + "'");
            }};
        f["freeopt.lambda"] = int_ref<int>([](C& c) -> int& { return c.freeopt.lambda; });
        f["freeopt.lr"] = double_ref([](C& c) -> double& { return c.freeopt.lr; });
        f["freeopt.weight_decay"] = double_ref([](C& c) -> double& { return c.freeopt.weight_decay; });
        f["freeopt.steps"] = int_ref<int>([](C& c) -> int& { return c.freeopt.steps; });
        f["freeopt.guidance"] = double_ref([](C& c) -> double& { return c.freeopt.guidance; });
        f["freeopt.eta"] = double_ref([](C& c) -> double& { return c.freeopt.eta; });
        f["freeopt.tau"] = double_ref([](C& c) -> double& { return c.freeopt.tau; });
        f["freeopt.delta"] = double_ref([](C& c) -> double& { return c.freeopt.delta; });
        f["freeopt.init_logit"] = double_ref([](C& c) -> double& { return c.freeopt.init_logit; });
        f["freeopt.warm_start"] = bool_ref([](C& c) -> bool& { return c.freeopt.warm_start; });
        f["freeopt.x0_mode"] = {
            [](const C& c) { return std::string(c.freeopt.x0_mode == X0Mode::predicted ? "predicted" : "direct"); },
            [](C& c, const std::string& v) {
                if (v == "predicted") c.freeopt.x0_mode = X0Mode::predicted;
                else if (v == "direct") c.freeopt.x0_mode = X0Mode::direct;
                else throw ConfigError("expected predicted|direct, got '" + v + "'");
            }};
        f["freeopt.final_mask"] = {
            [](const C& c) { return std::string(c.freeopt.final_mask == FinalMask::threshold ? "threshold" : "sampled"); },
            [](C& c, const std::string& v) {
                if (v == "threshold") c.freeopt.final_mask = FinalMask::threshold;
                else if (v == "sampled") c.freeopt.final_mask = FinalMask::sampled;
                else throw ConfigError("expected threshold|sampled, got '" + v + "'");
            }};
        f["freeopt.rewards"] = {[](const C& c) { return rewards_to_string(c.rewards); },
                                [](C& c, const std::string& v) { c.rewards = rewards_from_string(v); }};
        f["freeopt.per_class"] = int_ref<std::size_t>([](C& c) -> std::size_t& { return c.freeopt_per_class; });
        f["eval.per_class"] = int_ref<std::size_t>([](C& c) -> std::size_t& { return c.eval.per_class; });
        f["eval.seeds"] = ints_ref<std::uint64_t>([](C& c) -> std::vector<std::uint64_t>& { return c.eval.seeds; });
        f["study.timesteps"] = ints_ref<int>([](C& c) -> std::vector<int>& { return c.study.timesteps; });
        f["study.probe_seed"] = int_ref<std::uint64_t>([](C& c) -> std::uint64_t& { return c.study.probe_seed; });
        return f;
    }();
    return table;
}

} // namespace detail

inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const auto& f = detail::fields();
    auto it = f.find(key);
    if (it == f.end()) throw ConfigError(key + ": unknown key");
    try {
        it->second.set(cfg, value);
    } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

// Parses config text on top of `base`. Errors are prefixed with
// `<source>:<line>: <key>`.
inline ExperimentConfig parse_config(const std::string& text, const std::string& source = "config",
                                     ExperimentConfig base = {}) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (!section.empty()) key = section + "." + key;
        try {
            set_config_value(base, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    try {
        base.validate();
    } catch (const Error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return base;
}

// Sorted `key = value` lines; parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
    return out;
}

// Generator config for one layer, sized against the model.
inline MaskGeneratorConfig generator_config(const ExperimentConfig& cfg, const std::string& layer) {
    MaskGeneratorConfig g = cfg.mask;
    g.layer_id = layer;
    g.use_temb = cfg.mask.use_temb;
    g.use_sample = cfg.mask.use_sample;
    return g;
}

} // namespace maskunet
