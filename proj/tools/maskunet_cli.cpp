// maskunet command-line driver.
//
//   maskunet <subcommand> [--config FILE] [--seed N] [--out DIR] [--base CKPT] [--ckpt CKPT ...]
//
// Exit codes: 0 success, 1 runtime/config error, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "maskunet/maskunet.hpp"

namespace fs = std::filesystem;
using namespace maskunet;

namespace {

struct Args {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::string base;
    std::vector<std::string> ckpts;
};

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

ExperimentConfig resolve_config(const Args& a, const Checkpoint* from) {
    ExperimentConfig cfg;
    if (!a.config_path.empty()) {
        cfg = parse_config(read_file(a.config_path), a.config_path);
    } else if (from) {
        cfg = from->config;
    }
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    return cfg;
}

void write_outputs(const fs::path& dir, const OutputFiles& files) {
    for (const auto& [name, content] : files) write_file(dir / name, content);
}

void write_checkpoint_outputs(const fs::path& dir, const Checkpoint& ck, const TrainLog& log) {
    save_checkpoint(ck, dir / "checkpoint.ckpt");
    write_file(dir / "train_log.csv", train_log_csv(log));
}

int run(const std::string& cmd, const Args& a) {
    const fs::path out(a.out);
    std::optional<Checkpoint> base;
    if (!a.base.empty()) base = load_checkpoint(a.base);
    std::vector<Checkpoint> ckpts;
    for (const auto& p : a.ckpts) ckpts.push_back(load_checkpoint(p));
    const Checkpoint* cfg_source = base ? &*base : ckpts.empty() ? nullptr : &ckpts.front();
    const RunContext ctx = make_context(resolve_config(a, cfg_source));

    auto need_base = [&]() -> const Checkpoint& {
        if (!base) throw ConfigError(cmd + ": --base <checkpoint> is required");
        return *base;
    };
    auto need_one = [&]() -> const Checkpoint& {
        if (ckpts.size() != 1) throw ConfigError(cmd + ": exactly one --ckpt <checkpoint> is required");
        return ckpts.front();
    };

    if (cmd == "train-base") {
        TrainLog log;
        const Checkpoint ck = run_train_base(ctx, &log);
        write_checkpoint_outputs(out, ck, log);
        write_file(out / "metrics.csv", metrics_csv({evaluate_arm(ck, ctx, ctx.cfg.seed)}));
    } else if (cmd == "train-mask") {
        const Checkpoint& b = need_base();
        const std::string before = denoiser_digest(b.denoiser());
        TrainLog log;
        const Checkpoint ck = run_train_mask(ctx, b, &log);
        if (denoiser_digest(ck.denoiser()) != before || denoiser_digest(b.denoiser()) != before) {
            throw IntegrityError("train-mask: base weights changed during mask training");
        }
        write_checkpoint_outputs(out, ck, log);
    } else if (cmd == "finetune") {
        TrainLog log;
        write_checkpoint_outputs(out, run_finetune(ctx, need_base(), &log), log);
    } else if (cmd == "sample") {
        write_outputs(out, run_sample(need_one(), ctx));
    } else if (cmd == "free-opt") {
        write_outputs(out, run_free_opt(need_one(), ctx));
    } else if (cmd == "eval") {
        write_outputs(out, run_eval(ckpts, ctx));
    } else if (cmd == "mask-study") {
        write_outputs(out, run_mask_study(need_one(), ctx));
    } else if (cmd == "export-samples") {
        write_outputs(out, run_export_samples(need_one(), ctx));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Timestep-conditioned weight masking for a toy conditional diffusion model", "maskunet"};
    app.require_subcommand(1);
    Args args;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"train-base", "train the base denoiser"},
        {"train-mask", "train mask generators on a frozen base (--base)"},
        {"finetune", "fine-tune every weight of a base model (--base)"},
        {"sample", "draw samples from a checkpoint (--ckpt)"},
        {"free-opt", "training-free mask optimization at inference (--ckpt)"},
        {"eval", "Frechet distance and alignment for one or more checkpoints (--ckpt ...)"},
        {"mask-study", "hard masks across timesteps for a fixed probe (--ckpt)"},
        {"export-samples", "generated and held-out points as CSV (--ckpt)"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", args.config_path, "config file (key = value)");
        sub->add_option("--seed", args.seed, "override the run seed");
        sub->add_option("--out", args.out, "output directory")->capture_default_str();
        if (name == "train-mask" || name == "finetune") sub->add_option("--base", args.base, "base checkpoint");
        if (name != "train-base" && name != "train-mask" && name != "finetune") {
            sub->add_option("--ckpt", args.ckpts, "checkpoint");
        }
    }

    if (argc > 1 && argv[1][0] != '-') {
        const std::string first = argv[1];
        const bool known = std::any_of(commands.begin(), commands.end(), [&](const auto& c) { return c.first == first; });
        if (!known) {
            std::cerr << "error: usage: unknown subcommand '" << first << "'\n" << app.help();
            return 2;
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << one_line(e.what()) << "\n" << app.help();
        return 2;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        return run(cmd, args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << one_line(e.what()) << "\n";
    }
    return 1;
}
