#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "streamnas/errors.hpp"
#include "streamnas/tensor.hpp"

namespace streamnas {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

/// Flat binary parameter checkpoint: 8-byte magic, u32 version, u64 tensor
/// count, then per tensor a length-prefixed name, u32 rank, u64 dims and the
/// raw little-endian float64 payload.
namespace checkpoint {

inline constexpr char kMagic[8] = {'S', 'N', 'A', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IoError("checkpoint: truncated file " + path);
    return value;
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save(const std::string& path, const NamedTensors& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    detail::write_pod(out, kVersion);
    detail::write_pod(out, static_cast<std::uint64_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod(out, static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d = 0; d < tensor.rank(); ++d)
            detail::write_pod(out, static_cast<std::uint64_t>(tensor.dim(d)));
        out.write(reinterpret_cast<const char*>(tensor.data().data()),
                  static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint: write failed for " + path);
}

inline NamedTensors load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("checkpoint: bad magic in " + path);
    const auto version = detail::read_pod<std::uint32_t>(in, path);
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    const auto count = detail::read_pod<std::uint64_t>(in, path);
    NamedTensors tensors;
    tensors.reserve(count);
    for (std::uint64_t t = 0; t < count; ++t) {
        const auto name_len = detail::read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = detail::read_pod<std::uint32_t>(in, path);
        Shape shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in, path));
            numel *= shape[d];
        }
        std::vector<double> data(numel);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!in) throw IoError("checkpoint: truncated tensor payload in " + path);
        tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return tensors;
}

}  // namespace checkpoint
}  // namespace streamnas
