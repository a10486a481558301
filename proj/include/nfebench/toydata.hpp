#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "nfebench/tensor.hpp"

namespace nfe {

enum class DatasetKind { two_gaussians, gaussian_ring, checkerboard, cond_upsample };

std::string to_string(DatasetKind k);
DatasetKind dataset_kind_from_string(const std::string& s);  // throws, listing valid kinds
const std::vector<std::string>& dataset_kind_names();

struct DatasetSpec {
    DatasetKind kind = DatasetKind::two_gaussians;
    std::size_t n = 10000;
    std::uint64_t seed = 0;

    // two_gaussians: modes at (+-mode_offset, 0)
    double mode_offset = 2.0;
    double mode_std = 0.5;
    // gaussian_ring
    int ring_count = 8;
    double ring_radius = 3.0;
    double ring_std = 0.2;
    // checkerboard: cells x cells board of unit squares centred on the origin
    int checker_cells = 4;
    // cond_upsample: K tokens, target dim d; anchors and mixing fixed by anchor_seed
    int K = 16;
    int d = 8;
    std::uint64_t anchor_seed = 1234;
    double anchor_scale = 2.0;
    double noise_var = 0.1;

    void validate() const;
    int data_dim() const;
    int cond_dim() const;
};

nlohmann::json to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);

struct Dataset {
    DatasetSpec spec;
    Tensor y;                 // [n, data_dim]
    Tensor cond;              // [n, cond_dim]; zeros for unconditional kinds
    std::vector<int> token;   // cond_upsample token in 1..K, 0 otherwise

    std::size_t size() const { return token.size(); }
    Dataset subset(std::span<const std::size_t> idx) const;
};

Dataset generate(const DatasetSpec& spec);

// Per-token anchor mean and mixing matrix of cond_upsample (row-major d x d).
struct TokenAnchors {
    std::vector<std::vector<double>> mean;
    std::vector<std::vector<double>> mixing;
};
TokenAnchors cond_upsample_anchors(const DatasetSpec& spec);

bool checkerboard_occupied(double x, double y, int cells);

struct DatasetSplit {
    Dataset train;
    Dataset eval;
    Dataset test;
};

// Seeded random partition; fractions must sum to 1. A split that would be
// empty while its fraction is positive is an error, as is an empty train split.
DatasetSplit split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace nfe
