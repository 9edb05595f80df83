#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

#include "maskunet/tensor.hpp"

namespace maskunet {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream seed for a (base, tag...) tuple, e.g. (run seed, timestep, iteration).
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(base);
    for (auto t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
    return s;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }

    // Uniform on the open interval (0, 1).
    double uniform_open() {
        double u;
        do {
            u = uniform_(engine_);
        } while (u <= 0.0);
        return u;
    }

    // Standard Gumbel(0, 1).
    double gumbel() { return -std::log(-std::log(uniform_open())); }

    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    Tensor normal_tensor(Shape shape) {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = normal();
        return Tensor(std::move(shape), std::move(v));
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace maskunet
