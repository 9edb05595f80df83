#pragma once

// Single-file checkpoint container.
//
//   MASKUNET-CHECKPOINT
//   format_version 1
//   arm <name>
//   seed <u64>
//   log_digest <16 hex digits>
//   config_lines <n>
//   <n canonical config lines>
//   blob_count <k>
//   blob <name> <shape, e.g. 32x16> <byte offset> <byte length>   (k lines)
//   end_header
//   <raw little-endian float64 payload; offsets are relative to its start>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "maskunet/config.hpp"
#include "maskunet/denoiser.hpp"
#include "maskunet/error.hpp"
#include "maskunet/io.hpp"
#include "maskunet/mask_generator.hpp"

namespace maskunet {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int format_version = kCheckpointVersion;
    std::string arm = "base";
    ExperimentConfig config;
    std::optional<DenoiserModel> model;
    std::vector<MaskGenerator> generators;
    std::string log_digest = hex64(0);
    std::uint64_t seed = 0;

    const DenoiserModel& denoiser() const {
        if (!model) throw ContractError("checkpoint: no denoiser weights");
        return *model;
    }
};

inline std::string digest_of(const std::vector<double>& epoch_loss) {
    std::string bytes;
    append_le_doubles(bytes, epoch_loss);
    return hex64(fnv1a(bytes));
}

namespace detail {

struct BlobEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t length = 0;
};

inline std::string shape_token(const Shape& s) {
    if (s.empty()) return "scalar";
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

inline Shape parse_shape_token(const std::string& tok) {
    if (tok == "scalar") return {};
    Shape s;
    std::stringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, 'x')) s.push_back(parse_int<std::size_t>(part));
    return s;
}

inline std::vector<std::pair<std::string, Tensor>> checkpoint_tensors(const Checkpoint& ck) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [n, t] : ck.denoiser().named_parameters()) out.emplace_back("denoiser/" + n, t);
    for (const auto& g : ck.generators)
        for (auto& [n, t] : g.named_parameters()) out.emplace_back("generator/" + g.config().layer_id + "/" + n, t);
    return out;
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    const auto tensors = detail::checkpoint_tensors(ck);
    std::string payload;
    std::ostringstream blobs;
    for (const auto& [name, t] : tensors) {
        const std::size_t offset = payload.size();
        append_le_doubles(payload, t.data());
        blobs << "blob " << name << ' ' << detail::shape_token(t.shape()) << ' ' << offset << ' '
              << payload.size() - offset << '\n';
    }
    const std::string cfg = serialize_config(ck.config);
    const auto cfg_lines = static_cast<std::size_t>(std::count(cfg.begin(), cfg.end(), '\n'));
    std::ostringstream h;
    h << "MASKUNET-CHECKPOINT\n"
      << "format_version " << ck.format_version << '\n'
      << "arm " << ck.arm << '\n'
      << "seed " << ck.seed << '\n'
      << "log_digest " << ck.log_digest << '\n'
      << "config_lines " << cfg_lines << '\n'
      << cfg << "blob_count " << tensors.size() << '\n'
      << blobs.str() << "end_header\n";
    return h.str() + payload;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "checkpoint") {
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw IntegrityError(source + ": truncated header");
        std::string line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return line;
    };
    auto expect_kv = [&](const std::string& key) -> std::string {
        const std::string line = next_line();
        if (line.rfind(key + " ", 0) != 0) throw IntegrityError(source + ": expected '" + key + "' in header");
        return line.substr(key.size() + 1);
    };

    if (next_line() != "MASKUNET-CHECKPOINT") throw IntegrityError(source + ": not a checkpoint file");
    Checkpoint ck;
    try {
        ck.format_version = detail::parse_int<int>(expect_kv("format_version"));
    } catch (const ConfigError&) {
        throw IntegrityError(source + ": malformed format_version");
    }
    if (ck.format_version != kCheckpointVersion) {
        throw IntegrityError(source + ": unsupported format_version " + std::to_string(ck.format_version) +
                             " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    std::vector<detail::BlobEntry> entries;
    try {
        ck.arm = expect_kv("arm");
        ck.seed = detail::parse_int<std::uint64_t>(expect_kv("seed"));
        ck.log_digest = expect_kv("log_digest");
        const auto n_cfg = detail::parse_int<std::size_t>(expect_kv("config_lines"));
        std::string cfg_text;
        for (std::size_t i = 0; i < n_cfg; ++i) cfg_text += next_line() + "\n";
        ck.config = parse_config(cfg_text, source + " (embedded config)");
        const auto n_blobs = detail::parse_int<std::size_t>(expect_kv("blob_count"));
        for (std::size_t i = 0; i < n_blobs; ++i) {
            std::istringstream ls(next_line());
            std::string tag, name, shape;
            std::size_t offset = 0, length = 0;
            if (!(ls >> tag >> name >> shape >> offset >> length) || tag != "blob") {
                throw IntegrityError(source + ": malformed blob directory entry " + std::to_string(i));
            }
            entries.push_back({name, detail::parse_shape_token(shape), offset, length});
        }
    } catch (const ConfigError& e) {
        throw IntegrityError(source + ": bad header: " + e.what());
    }
    if (next_line() != "end_header") throw IntegrityError(source + ": missing end_header");

    const std::size_t payload_size = bytes.size() - pos;
    std::size_t expected_offset = 0;
    std::vector<std::pair<std::string, Tensor>> blobs;
    for (const auto& e : entries) {
        if (e.length != shape_numel(e.shape) * 8) {
            throw IntegrityError(source + ": blob '" + e.name + "' length " + std::to_string(e.length) +
                                 " does not match shape " + detail::shape_token(e.shape));
        }
        if (e.offset != expected_offset) throw IntegrityError(source + ": blob '" + e.name + "' has a gap or overlap");
        if (e.offset + e.length > payload_size) throw IntegrityError(source + ": blob '" + e.name + "' is truncated");
        auto values = read_le_doubles(std::span<const char>(bytes.data() + pos + e.offset, e.length));
        blobs.emplace_back(e.name, Tensor(e.shape, std::move(values)));
        expected_offset += e.length;
    }
    if (expected_offset != payload_size) throw IntegrityError(source + ": trailing bytes after last blob");

    // Rebuild the modules from the embedded config, then overwrite every
    // parameter; each one must be present exactly once.
    DenoiserModel model(ck.config.model, ck.seed);
    std::vector<std::string> gen_layers;
    for (const auto& [name, _] : blobs) {
        if (name.rfind("generator/", 0) == 0) {
            const auto layer = name.substr(10, name.find('/', 10) - 10);
            if (std::find(gen_layers.begin(), gen_layers.end(), layer) == gen_layers.end()) gen_layers.push_back(layer);
        }
    }
    std::vector<MaskGenerator> gens;
    for (const auto& layer : gen_layers) {
        gens.push_back(MaskGenerator::for_layer(model, generator_config(ck.config, layer), 0));
    }
    std::size_t loaded = 0;
    for (const auto& [name, t] : blobs) {
        try {
            if (name.rfind("denoiser/", 0) == 0) {
                model.load_parameter(name.substr(9), t.data());
            } else if (name.rfind("generator/", 0) == 0) {
                const auto slash = name.find('/', 10);
                const auto layer = name.substr(10, slash - 10);
                auto it = std::find_if(gens.begin(), gens.end(),
                                       [&](const MaskGenerator& g) { return g.config().layer_id == layer; });
                it->load_parameter(name.substr(slash + 1), t.data());
            } else {
                throw IntegrityError("unknown blob");
            }
        } catch (const Error& e) {
            throw IntegrityError(source + ": blob '" + name + "': " + e.what());
        }
        ++loaded;
    }
    Checkpoint probe;
    probe.model = model;
    probe.generators = gens;
    if (detail::checkpoint_tensors(probe).size() != loaded) {
        throw IntegrityError(source + ": blob directory does not cover every parameter");
    }
    ck.model = std::move(model);
    ck.generators = std::move(gens);
    return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return parse_checkpoint(read_file(path), path.string());
}

// Byte digest of the denoiser weights only (freeze checks).
inline std::string denoiser_digest(const DenoiserModel& model) {
    std::string bytes;
    for (const auto& [n, t] : model.named_parameters()) {
        bytes += n;
        append_le_doubles(bytes, t.data());
    }
    return hex64(fnv1a(bytes));
}

} // namespace maskunet
