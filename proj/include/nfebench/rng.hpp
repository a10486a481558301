#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "nfebench/tensor.hpp"

namespace nfe {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL);

// Seeded generator threaded explicitly through every stochastic operation.
// split() derives an independent child stream from (seed, key) without
// consuming state from the parent.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }
    Rng split(std::uint64_t key) const { return Rng(splitmix64(seed_ ^ splitmix64(key + 0x9e37))); }
    Rng split(std::string_view key) const { return split(fnv1a64(key)); }

    double uniform() { return uniform_(engine_); }
    double normal() { return normal_(engine_); }
    std::size_t index(std::size_t n);

    Tensor normal_tensor(std::size_t rows, std::size_t cols);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace nfe
