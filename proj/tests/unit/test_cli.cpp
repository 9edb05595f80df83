#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "test_support.hpp"

using namespace maskunet;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / ("maskunet_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// Runs the CLI with stderr captured to <workdir>/stderr.txt; returns the exit status.
int cli(const std::string& args) {
    const std::string cmd = std::string("\"") + MASKUNET_CLI + "\" " + args + " 2> \"" +
                            (workdir() / "stderr.txt").string() + "\" > /dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stderr() { return read_file(workdir() / "stderr.txt"); }

// Desk preset shrunk for speed.
fs::path small_config(const std::string& name, const std::string& extra = "") {
    const fs::path p = workdir() / name;
    write_file(p, read_file(std::string(MASKUNET_SOURCE_DIR) + "/presets/base.cfg") +
                      "\n[data]\ntrain_size = 1000\nheldout_size = 400\n[train]\nepochs = 2\n"
                      "[mask]\nepochs = 1\n[eval]\nper_class = 20\n" +
                      extra);
    return p;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_file(p));
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

// Trained once and shared by the tests below.
const fs::path& base_ckpt() {
    static const fs::path ck = [] {
        const fs::path cfg = small_config("small.cfg");
        const fs::path out = workdir() / "base";
        EXPECT_EQ(cli("train-base --config \"" + cfg.string() + "\" --out \"" + out.string() + "\""), 0) << last_stderr();
        return out / "checkpoint.ckpt";
    }();
    return ck;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

} // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli("frobnicate"), 2);
    EXPECT_NE(last_stderr().find("error: usage: unknown subcommand 'frobnicate'"), std::string::npos) << last_stderr();
    EXPECT_EQ(cli(""), 2);
    EXPECT_EQ(cli("sample --no-such-flag"), 2);
}

TEST(Cli, BadConfigExitsOneWithLocation) {
    const fs::path bad = workdir() / "bad.cfg";
    write_file(bad, "seed = 1\n[train]\nepochs = lots\n");
    EXPECT_EQ(cli("train-base --config " + q(bad) + " --out " + q(workdir() / "bad")), 1);
    const std::string err = last_stderr();
    EXPECT_EQ(err.rfind("error: config: ", 0), 0u) << err;
    EXPECT_NE(err.find(bad.string() + ":3: train.epochs"), std::string::npos) << err;
    EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1) << err;
}

TEST(Cli, MissingCheckpointIsRuntimeError) {
    EXPECT_EQ(cli("sample --ckpt " + q(workdir() / "nope.ckpt") + " --out " + q(workdir() / "x")), 1);
    EXPECT_EQ(last_stderr().rfind("error: ", 0), 0u);
    EXPECT_EQ(cli("sample --config " + q(small_config("s.cfg")) + " --out " + q(workdir() / "x")), 1);
}

TEST(Cli, TrainBaseIsDeterministic) {
    const fs::path cfg = small_config("small.cfg");
    const fs::path again = workdir() / "base_again";
    ASSERT_EQ(cli("train-base --config " + q(cfg) + " --out " + q(again)), 0) << last_stderr();
    const fs::path first = base_ckpt().parent_path();
    EXPECT_EQ(read_file(first / "checkpoint.ckpt"), read_file(again / "checkpoint.ckpt"));
    EXPECT_EQ(read_file(first / "metrics.csv"), read_file(again / "metrics.csv"));
    EXPECT_EQ(read_file(first / "train_log.csv"), read_file(again / "train_log.csv"));
    const auto rows = read_csv(first / "metrics.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0], (std::vector<std::string>{"arm", "seed", "fgd", "alignment"}));
}

TEST(Cli, SampleRepeatsByteIdentically) {
    const fs::path a = workdir() / "sample_a", b = workdir() / "sample_b";
    ASSERT_EQ(cli("sample --ckpt " + q(base_ckpt()) + " --seed 7 --out " + q(a)), 0) << last_stderr();
    ASSERT_EQ(cli("sample --ckpt " + q(base_ckpt()) + " --seed 7 --out " + q(b)), 0) << last_stderr();
    for (const char* f : {"samples.csv", "metrics.csv", "rewards.csv"}) EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
    const auto rows = read_csv(a / "metrics.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1][1], "7");
}

TEST(Cli, FreeOptWithoutIterationsMatchesSample) {
    const fs::path cfg = small_config("lambda0.cfg", "[freeopt]\nlambda = 0\nper_class = 3\n"
                                                     "[sampler]\nsteps = 15\nguidance = 7.5\n[eval]\nper_class = 3\n");
    const fs::path s = workdir() / "l0_sample", f = workdir() / "l0_free";
    ASSERT_EQ(cli("sample --config " + q(cfg) + " --ckpt " + q(base_ckpt()) + " --out " + q(s)), 0) << last_stderr();
    ASSERT_EQ(cli("free-opt --config " + q(cfg) + " --ckpt " + q(base_ckpt()) + " --out " + q(f)), 0) << last_stderr();
    const auto ms = read_csv(s / "metrics.csv"), mf = read_csv(f / "metrics.csv");
    ASSERT_EQ(ms.size(), 2u);
    ASSERT_EQ(mf.size(), 2u);
    EXPECT_EQ(mf[1][0], "base+freeopt");
    EXPECT_EQ(std::vector<std::string>(ms[1].begin() + 1, ms[1].end()), std::vector<std::string>(mf[1].begin() + 1, mf[1].end()));
    const auto ss = read_csv(s / "samples.csv"), sf = read_csv(f / "samples.csv");
    ASSERT_EQ(ss.size(), sf.size());
    for (std::size_t i = 0; i < ss.size(); ++i)
        EXPECT_EQ(std::vector<std::string>(ss[i].begin() + 1, ss[i].end()), std::vector<std::string>(sf[i].begin() + 1, sf[i].end()));
    EXPECT_EQ(read_csv(f / "freeopt_log.csv").size(), 1u); // header only
}

TEST(Cli, MaskPipelineEndToEnd) {
    const fs::path mask = workdir() / "mask";
    const std::string before = read_file(base_ckpt());
    ASSERT_EQ(cli("train-mask --base " + q(base_ckpt()) + " --out " + q(mask)), 0) << last_stderr();
    EXPECT_EQ(read_file(base_ckpt()), before);
    const Checkpoint b = load_checkpoint(base_ckpt()), m = load_checkpoint(mask / "checkpoint.ckpt");
    EXPECT_EQ(m.arm, "mask");
    EXPECT_EQ(m.generators.size(), 2u);
    EXPECT_EQ(denoiser_digest(m.denoiser()), denoiser_digest(b.denoiser()));

    const fs::path ev = workdir() / "eval";
    ASSERT_EQ(cli("eval --ckpt " + q(base_ckpt()) + " --ckpt " + q(mask / "checkpoint.ckpt") + " --out " + q(ev)), 0)
        << last_stderr();
    const auto rows = read_csv(ev / "metrics.csv");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1][0], "base");
    EXPECT_EQ(rows[2][0], "mask");

    const fs::path st = workdir() / "study";
    ASSERT_EQ(cli("mask-study --ckpt " + q(mask / "checkpoint.ckpt") + " --out " + q(st)), 0) << last_stderr();
    EXPECT_TRUE(fs::exists(st / "mask_study.jsonl"));
    EXPECT_EQ(read_csv(st / "mask_summary.csv")[0],
              (std::vector<std::string>{"layer", "ratio_mean", "ratio_std", "max_hamming"}));
    EXPECT_EQ(cli("mask-study --ckpt " + q(base_ckpt()) + " --out " + q(st)), 1);

    const fs::path ex = workdir() / "export";
    ASSERT_EQ(cli("export-samples --ckpt " + q(mask / "checkpoint.ckpt") + " --out " + q(ex)), 0) << last_stderr();
    EXPECT_EQ(read_csv(ex / "samples.csv").size(), 1u + 160u + 400u);

    const fs::path ft = workdir() / "finetune";
    ASSERT_EQ(cli("finetune --base " + q(base_ckpt()) + " --out " + q(ft)), 0) << last_stderr();
    EXPECT_EQ(load_checkpoint(ft / "checkpoint.ckpt").arm, "finetune");
}

TEST(Cli, EmptyEvaluationIsRejected) {
    const fs::path cfg = small_config("empty.cfg", "[eval]\nper_class = 0\n");
    EXPECT_EQ(cli("eval --config " + q(cfg) + " --ckpt " + q(base_ckpt()) + " --out " + q(workdir() / "e0")), 1);
    EXPECT_NE(last_stderr().find("empty evaluation"), std::string::npos) << last_stderr();
}
