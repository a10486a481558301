#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "nfebench/params.hpp"

namespace nfe {

// On-disk container shared by checkpoints, datasets, sample batches, pair
// sets and bespoke transforms:
//
//   bytes 0..7   ASCII magic "NFEBLOB1"
//   bytes 8..15  header length H, little-endian uint64
//   next H bytes JSON header (UTF-8)
//   remainder    tensor payload, little-endian IEEE-754 float64
//
// The header always carries "format_version" and "tensors", a map
// name -> {shape, dtype: "f64", offset}, offsets in bytes from the start of
// the payload. Everything else in the header is caller metadata
// (method, hyperparameters, dataset spec, ...).
inline constexpr int kBlobFormatVersion = 1;

struct Blob {
    nlohmann::json header = nlohmann::json::object();
    TensorMap tensors;
};

std::string encode_blob(const Blob& blob);
Blob decode_blob(const std::string& bytes);

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path);

}  // namespace nfe
