#pragma once

// Text output helpers shared by the CLI pipelines: shortest round-trip number
// formatting, CSV tables, bit packing and base64 for mask snapshots.

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "maskunet/error.hpp"

namespace maskunet {

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw NumericError("format_double: conversion failed");
    return std::string(buf.data(), end);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) throw ConfigError("expected a number, got '" + s + "'");
    return v;
}

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

    void row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_) throw ContractError("csv: row width does not match header");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    std::string str() const { return out_.str(); }

private:
    std::size_t columns_;
    std::ostringstream out_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("io", "cannot open '" + path.string() + "' for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw Error("io", "failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("io", "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Bit i of the input lands in byte i / 8 at position i % 8 (LSB first).
inline std::vector<std::uint8_t> pack_bits(std::span<const std::uint8_t> bits) {
    std::vector<std::uint8_t> out((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return out;
}

inline std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> bytes, std::size_t count) {
    if (count > bytes.size() * 8) throw DimensionError("unpack_bits: not enough bytes");
    std::vector<std::uint8_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = (bytes[i / 8] >> (i % 8)) & 1u;
    return out;
}

inline std::string base64_encode(std::span<const std::uint8_t> data) {
    static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < data.size(); i += 3) {
        const std::uint32_t v = (std::uint32_t{data[i]} << 16) | (std::uint32_t{data[i + 1]} << 8) | data[i + 2];
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += table[(v >> 6) & 63];
        out += table[v & 63];
    }
    const std::size_t rest = data.size() - i;
    if (rest) {
        std::uint32_t v = std::uint32_t{data[i]} << 16;
        if (rest == 2) v |= std::uint32_t{data[i + 1]} << 8;
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += rest == 2 ? table[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (s.size() % 4) throw IntegrityError("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < s.size(); i += 4) {
        std::uint32_t v = 0;
        int pad = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            const char c = s[i + j];
            if (c == '=') {
                ++pad;
                v <<= 6;
                continue;
            }
            const int d = val(c);
            if (d < 0 || pad) throw IntegrityError("base64: invalid character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    return out;
}

// 64-bit FNV-1a, used for log digests and freeze checks.
inline std::uint64_t fnv1a(std::span<const char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 15];
        v >>= 4;
    }
    return s;
}

// Little-endian encoding of doubles regardless of host byte order.
inline void append_le_doubles(std::string& out, std::span<const double> values) {
    for (double v : values) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            out.push_back(static_cast<char>(bits & 0xff));
            bits >>= 8;
        }
    }
}

inline std::vector<double> read_le_doubles(std::span<const char> bytes) {
    if (bytes.size() % 8) throw IntegrityError("blob length is not a multiple of 8 bytes");
    std::vector<double> out(bytes.size() / 8);
    for (std::size_t k = 0; k < out.size(); ++k) {
        std::uint64_t bits = 0;
        for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(bytes[k * 8 + static_cast<std::size_t>(i)]);
        out[k] = std::bit_cast<double>(bits);
    }
    return out;
}

} // namespace maskunet
