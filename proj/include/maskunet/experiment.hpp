#pragma once

// End-to-end pipelines behind the CLI subcommands. Each one is a pure function
// of (config, seed, input checkpoints) and returns the files it would write as
// in-memory strings, so tests can compare bytes without touching the disk.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskunet/analysis.hpp"
#include "maskunet/checkpoint.hpp"
#include "maskunet/config.hpp"
#include "maskunet/data.hpp"
#include "maskunet/diffusion.hpp"
#include "maskunet/freeopt.hpp"
#include "maskunet/io.hpp"
#include "maskunet/sampling.hpp"
#include "maskunet/train.hpp"

namespace maskunet {

using OutputFiles = std::map<std::string, std::string>; // file name -> content

struct RunContext {
    ExperimentConfig cfg;
    MixtureSpec mix;
    NoiseSchedule sched;
    Dataset train;
    Dataset heldout;
};

// The data sets depend only on the data section, never on the run seed.
inline RunContext make_context(const ExperimentConfig& cfg) {
    cfg.validate();
    RunContext ctx{cfg, ring_mixture(cfg.data.ring), make_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end), {}, {}};
    Rng train_rng(derive_seed(cfg.data.seed, {0x4441u, 0}));
    Rng held_rng(derive_seed(cfg.data.seed, {0x4441u, 1}));
    ctx.train = sample_mixture(ctx.mix, cfg.data.train_size, train_rng);
    ctx.heldout = sample_mixture(ctx.mix, cfg.data.heldout_size, held_rng);
    return ctx;
}

inline std::string train_log_csv(const TrainLog& log) {
    CsvWriter csv({"epoch", "loss"});
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) csv.row({std::to_string(e), format_double(log.epoch_loss[e])});
    return csv.str();
}

// ---------------------------------------------------------------------------
// Training

inline Checkpoint run_train_base(const RunContext& ctx, TrainLog* log_out = nullptr) {
    const auto& cfg = ctx.cfg;
    DenoiserModel model(cfg.model, derive_seed(cfg.seed, {0x4d44u}));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {0x5442u});
    tc.mode = TrainMode::base;
    TrainLog log = train_base(model, ctx.train, ctx.sched, tc);
    Checkpoint ck;
    ck.arm = "base";
    ck.config = cfg;
    ck.seed = cfg.seed;
    ck.model = std::move(model);
    ck.log_digest = digest_of(log.epoch_loss);
    if (log_out) *log_out = std::move(log);
    return ck;
}

inline std::vector<MaskGenerator> make_generators(const ExperimentConfig& cfg, const DenoiserModel& model,
                                                  std::uint64_t seed) {
    std::vector<MaskGenerator> gens;
    for (std::size_t i = 0; i < cfg.mask_layers.size(); ++i) {
        gens.push_back(MaskGenerator::for_layer(model, generator_config(cfg, cfg.mask_layers[i]),
                                                derive_seed(seed, {0x4747u, i})));
    }
    return gens;
}

// The base denoiser is copied into the result untouched.
inline Checkpoint run_train_mask(const RunContext& ctx, const Checkpoint& base, TrainLog* log_out = nullptr) {
    const auto& cfg = ctx.cfg;
    const DenoiserModel& model = base.denoiser();
    std::vector<MaskGenerator> gens = make_generators(cfg, model, cfg.seed);
    TrainConfig tc = cfg.mask_train;
    tc.seed = derive_seed(cfg.seed, {0x544du});
    tc.mode = TrainMode::mask_generator;
    tc.use_temb = cfg.mask.use_temb;
    tc.use_sample = cfg.mask.use_sample;
    TrainLog log = train_mask_generators(model, gens, ctx.train, ctx.sched, tc);
    Checkpoint ck;
    ck.arm = cfg.mask.use_temb && cfg.mask.use_sample ? "mask" : cfg.mask.use_temb ? "mask_temb" : "mask_sample";
    ck.config = cfg;
    ck.seed = cfg.seed;
    ck.model = model;
    ck.generators = std::move(gens);
    ck.log_digest = digest_of(log.epoch_loss);
    if (log_out) *log_out = std::move(log);
    return ck;
}

inline Checkpoint run_finetune(const RunContext& ctx, const Checkpoint& base, TrainLog* log_out = nullptr) {
    const auto& cfg = ctx.cfg;
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, {0x4654u});
    tc.mode = TrainMode::full_finetune;
    TrainLog log;
    Checkpoint ck;
    ck.model = train_full_finetune(base.denoiser(), ctx.train, ctx.sched, tc, &log);
    ck.arm = "finetune";
    ck.config = cfg;
    ck.seed = cfg.seed;
    ck.log_digest = digest_of(log.epoch_loss);
    if (log_out) *log_out = std::move(log);
    return ck;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ArmMetrics {
    std::string arm;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    double fgd = 0.0;
    double alignment = 0.0;
    double mean_reward = 0.0;
};

inline double mean_reward(const SampleSet& s, const MixtureSpec& mix, std::span<const RewardSpec> specs) {
    const auto d = s.dim();
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto row = s.points.data().subspan(i * d, d);
        total += total_reward(Tensor(Shape{1, d}, {row.begin(), row.end()}), s.labels[i], mix, specs);
    }
    return total / static_cast<double>(s.size());
}

inline ArmMetrics score_samples(const std::string& arm, std::uint64_t seed, const SampleSet& s, const RunContext& ctx) {
    if (s.size() == 0) throw ContractError("empty evaluation: no samples were generated");
    ArmMetrics m;
    m.arm = arm;
    m.seed = seed;
    m.n = s.size();
    const SampleSet ref{ctx.heldout.points, ctx.heldout.labels, "heldout"};
    m.fgd = frechet_gaussian(s, ref);
    m.alignment = alignment_score(s, ctx.mix);
    m.mean_reward = mean_reward(s, ctx.mix, ctx.cfg.rewards);
    return m;
}

inline SampleSet generate_samples(const Checkpoint& ck, const RunContext& ctx, std::uint64_t seed,
                                  std::size_t per_class) {
    const auto classes = balanced_classes(ck.denoiser().config().num_classes, per_class);
    SampleOptions opts = ctx.cfg.sampler;
    opts.sampler.seed = seed;
    SampleSet s;
    s.points = sample(ck.denoiser(), ck.generators, classes, ctx.sched, opts);
    s.labels = classes;
    s.provenance = ck.arm;
    return s;
}

inline ArmMetrics evaluate_arm(const Checkpoint& ck, const RunContext& ctx, std::uint64_t seed) {
    return score_samples(ck.arm, seed, generate_samples(ck, ctx, seed, ctx.cfg.eval.per_class), ctx);
}

// Table-1-style rows: one per (arm, seed).
inline std::string metrics_csv(const std::vector<ArmMetrics>& rows) {
    CsvWriter csv({"arm", "seed", "fgd", "alignment"});
    for (const auto& m : rows) csv.row({m.arm, std::to_string(m.seed), format_double(m.fgd), format_double(m.alignment)});
    return csv.str();
}

inline std::string reward_csv(const std::vector<ArmMetrics>& rows) {
    CsvWriter csv({"arm", "seed", "n", "mean_reward"});
    for (const auto& m : rows) csv.row({m.arm, std::to_string(m.seed), std::to_string(m.n), format_double(m.mean_reward)});
    return csv.str();
}

inline std::string samples_csv(const SampleSet& s) {
    const auto d = s.dim();
    std::vector<std::string> header{"source", "row", "class"};
    for (std::size_t j = 0; j < d; ++j) header.push_back("x" + std::to_string(j));
    CsvWriter csv(header);
    const auto v = s.points.data();
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::vector<std::string> cells{s.provenance, std::to_string(i), std::to_string(s.labels[i])};
        for (std::size_t j = 0; j < d; ++j) cells.push_back(format_double(v[i * d + j]));
        csv.row(cells);
    }
    return csv.str();
}

// One row per (checkpoint, eval seed), checkpoints in the given order.
inline OutputFiles run_eval(const std::vector<Checkpoint>& arms, const RunContext& ctx) {
    if (arms.empty()) throw ContractError("empty evaluation: no checkpoints given");
    if (ctx.cfg.eval.per_class == 0) throw ContractError("empty evaluation: eval.per_class is 0");
    std::vector<ArmMetrics> rows;
    for (const auto& ck : arms)
        for (auto seed : ctx.cfg.eval.seeds) rows.push_back(evaluate_arm(ck, ctx, seed));
    return {{"metrics.csv", metrics_csv(rows)}};
}

inline OutputFiles run_sample(const Checkpoint& ck, const RunContext& ctx) {
    if (ctx.cfg.eval.per_class == 0) throw ContractError("empty evaluation: eval.per_class is 0");
    const SampleSet s = generate_samples(ck, ctx, ctx.cfg.seed, ctx.cfg.eval.per_class);
    const ArmMetrics m = score_samples(ck.arm, ctx.cfg.seed, s, ctx);
    return {{"samples.csv", samples_csv(s)}, {"metrics.csv", metrics_csv({m})}, {"rewards.csv", reward_csv({m})}};
}

// Generated samples next to the held-out reference, for external plotting.
inline OutputFiles run_export_samples(const Checkpoint& ck, const RunContext& ctx) {
    SampleSet gen = generate_samples(ck, ctx, ctx.cfg.seed, ctx.cfg.eval.per_class);
    const SampleSet ref{ctx.heldout.points, ctx.heldout.labels, "heldout"};
    std::string csv = samples_csv(gen);
    const std::string held = samples_csv(ref);
    csv += held.substr(held.find('\n') + 1);
    return {{"samples.csv", csv}};
}

// ---------------------------------------------------------------------------
// Training-free optimization

inline std::string mask_jsonl_line(int t, const std::string& layer, double ratio, std::span<const std::uint8_t> bits) {
    return "{\"timestep\":" + std::to_string(t) + ",\"layer\":\"" + layer + "\",\"ratio\":" + format_double(ratio) +
           ",\"bits\":\"" + base64_encode(pack_bits(bits)) + "\"}\n";
}

struct FreeOptRun {
    SampleSet samples;
    std::vector<double> rewards; // final total reward per row
    std::string log_csv;
    std::string masks_jsonl;
};

inline FreeOptRun run_freeopt_samples(const Checkpoint& ck, const RunContext& ctx) {
    const auto& cfg = ctx.cfg;
    const DenoiserModel& model = ck.denoiser();
    const auto classes = balanced_classes(model.config().num_classes, cfg.freeopt_per_class);
    FreeOptConfig fc = cfg.freeopt;
    fc.seed = cfg.seed;
    const auto dim = static_cast<std::size_t>(model.config().data_dim);
    std::vector<double> pts;
    FreeOptRun out;
    CsvWriter log({"row", "class", "timestep", "iteration", "loss"});
    for (std::size_t row = 0; row < classes.size(); ++row) {
        const FreeOptResult r = generate_training_free(classes[row], row, fc, model, ctx.sched, ctx.mix, cfg.rewards);
        for (double v : r.x0.data()) pts.push_back(v);
        out.rewards.push_back(total_reward(r.x0, classes[row], ctx.mix, cfg.rewards));
        for (const auto& rec : r.log) {
            log.row({std::to_string(row), std::to_string(classes[row]), std::to_string(rec.timestep),
                     std::to_string(rec.iteration), format_double(rec.loss)});
        }
        for (const auto& m : r.masks) {
            const MaskSnapshot snap = make_snapshot(m.timestep, m.layer_id, m.mask);
            out.masks_jsonl += mask_jsonl_line(snap.timestep, snap.layer_id, snap.ratio, snap.bits);
        }
    }
    out.samples.points = Tensor(Shape{classes.size(), dim}, std::move(pts));
    out.samples.labels = classes;
    out.samples.provenance = ck.arm + "+freeopt";
    out.log_csv = log.str();
    return out;
}

inline OutputFiles run_free_opt(const Checkpoint& ck, const RunContext& ctx) {
    if (ctx.cfg.freeopt_per_class == 0) throw ContractError("empty evaluation: freeopt.per_class is 0");
    FreeOptRun r = run_freeopt_samples(ck, ctx);
    const ArmMetrics m = score_samples(r.samples.provenance, ctx.cfg.seed, r.samples, ctx);
    return {{"samples.csv", samples_csv(r.samples)},
            {"metrics.csv", metrics_csv({m})},
            {"rewards.csv", reward_csv({m})},
            {"freeopt_log.csv", r.log_csv},
            {"masks.jsonl", r.masks_jsonl}};
}

// ---------------------------------------------------------------------------
// Mask-position study

inline Tensor study_probe(const ExperimentConfig& cfg) {
    Rng rng(cfg.study.probe_seed);
    return rng.normal_tensor(Shape{1, static_cast<std::size_t>(cfg.model.data_dim)});
}

inline OutputFiles run_mask_study(const Checkpoint& ck, const RunContext& ctx) {
    if (ck.generators.empty()) throw ContractError("mask-study: checkpoint '" + ck.arm + "' has no mask generators");
    const MaskStudy study = mask_study(ck.generators, ctx.cfg.study.timesteps, study_probe(ctx.cfg), ctx.cfg.seed);
    std::string jsonl;
    for (const auto& s : study.snapshots) jsonl += mask_jsonl_line(s.timestep, s.layer_id, s.ratio, s.bits);
    CsvWriter ratios({"layer", "timestep", "ratio"});
    CsvWriter summary({"layer", "ratio_mean", "ratio_std", "max_hamming"});
    for (const auto& l : study.summary) {
        for (std::size_t i = 0; i < l.timesteps.size(); ++i)
            ratios.row({l.layer_id, std::to_string(l.timesteps[i]), format_double(l.ratios[i])});
        summary.row({l.layer_id, format_double(l.ratio_mean), format_double(l.ratio_std), std::to_string(l.max_hamming)});
    }
    return {{"mask_study.jsonl", jsonl}, {"mask_ratios.csv", ratios.str()}, {"mask_summary.csv", summary.str()}};
}

} // namespace maskunet
