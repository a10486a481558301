#include "nfebench/rng.hpp"

namespace nfe {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t h) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(engine_);
}

Tensor Rng::normal_tensor(std::size_t rows, std::size_t cols) {
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.data()) v = normal();
    return t;
}

}  // namespace nfe
