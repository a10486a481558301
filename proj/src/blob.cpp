#include "nfebench/blob.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nfebench/error.hpp"

namespace nfe {

namespace {

constexpr char kMagic[8] = {'N', 'F', 'E', 'B', 'L', 'O', 'B', '1'};

template <typename T>
void put_le(std::string& out, T v) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(const char* p) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

}  // namespace

std::string encode_blob(const Blob& blob) {
    nlohmann::json header = blob.header;
    header["format_version"] = kBlobFormatVersion;
    nlohmann::json manifest = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : blob.tensors) {
        manifest[name] = {{"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}};
        offset += t.size() * sizeof(double);
    }
    header["tensors"] = manifest;
    const std::string text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : blob.tensors)
        for (double v : t.data()) put_le<double>(out, v);
    return out;
}

Blob decode_blob(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("blob: missing NFEBLOB1 magic");
    const auto hlen = get_le<std::uint64_t>(bytes.data() + 8);
    if (16 + hlen > bytes.size()) throw IoError("blob: truncated header");
    Blob blob;
    try {
        blob.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("blob: bad header JSON: ") + e.what());
    }
    if (blob.header.value("format_version", 0) != kBlobFormatVersion)
        throw IoError("blob: unsupported format_version");
    const std::size_t payload = 16 + hlen;
    for (const auto& [name, entry] : blob.header.at("tensors").items()) {
        if (entry.value("dtype", "") != "f64") throw IoError("blob: tensor '" + name + "' has unsupported dtype");
        Shape shape = entry.at("shape").get<Shape>();
        const auto off = entry.at("offset").get<std::uint64_t>();
        const std::size_t n = shape_numel(shape);
        if (payload + off + n * sizeof(double) > bytes.size())
            throw IoError("blob: tensor '" + name + "' extends past end of file");
        std::vector<double> data(n);
        const char* p = bytes.data() + payload + off;
        for (std::size_t i = 0; i < n; ++i) data[i] = get_le<double>(p + i * sizeof(double));
        blob.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    return blob;
}

void write_blob(const std::filesystem::path& path, const Blob& blob) {
    const std::string bytes = encode_blob(blob);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

Blob read_blob(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return decode_blob(ss.str());
}

}  // namespace nfe
