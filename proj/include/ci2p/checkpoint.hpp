#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ci2p/errors.hpp"
#include "ci2p/param_store.hpp"

namespace ci2p {

// On-disk layout, all integers little-endian:
//   "CI2P" | version u32 | entry_count u32
//   per entry: name_len u32 | name | dtype u8 (0=f32, 1=f64) | rank u8
//              | dims u64[rank] | payload
//   CRC32 of everything before it
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    std::uint8_t dtype = 0;
    std::vector<std::int64_t> dims;
    std::vector<std::uint8_t> payload;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed = 0);

void write_checkpoint_file(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint_file(const std::string& path);

template <class S>
constexpr std::uint8_t dtype_code() {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8);
    return sizeof(S) == 4 ? 0 : 1;
}

template <class S>
void save_checkpoint(const std::string& path, const ParamStore<S>& store) {
    std::vector<CheckpointEntry> entries;
    entries.reserve(store.size());
    for (const auto& [name, e] : store.entries()) {
        CheckpointEntry ce;
        ce.name = name;
        ce.dtype = dtype_code<S>();
        for (int i = 0; i < e.tensor.rank(); ++i) ce.dims.push_back(e.tensor.dim(i));
        ce.payload.resize(e.tensor.data().size() * sizeof(S));
        std::memcpy(ce.payload.data(), e.tensor.data().data(), ce.payload.size());
        entries.push_back(std::move(ce));
    }
    write_checkpoint_file(path, entries);
}

// Copies values into an already-built store. Names, shapes, and dtype must
// match exactly.
template <class S>
void load_checkpoint_into(const std::string& path, ParamStore<S>& store) {
    auto entries = read_checkpoint_file(path);
    if (entries.size() != store.size()) {
        throw DataError(path + ": checkpoint has " + std::to_string(entries.size()) +
                        " tensors, store expects " + std::to_string(store.size()));
    }
    for (const auto& ce : entries) {
        if (!store.contains(ce.name)) {
            throw DataError(path + ": unexpected tensor '" + ce.name + "'");
        }
        if (ce.dtype != dtype_code<S>()) {
            throw DataError(path + ": tensor '" + ce.name + "' has dtype code " +
                            std::to_string(ce.dtype) + ", expected " +
                            std::to_string(dtype_code<S>()));
        }
        Tensor<S> t = store.get(ce.name);
        if (static_cast<int>(ce.dims.size()) != t.rank()) {
            throw DataError(path + ": tensor '" + ce.name + "' rank mismatch");
        }
        for (int i = 0; i < t.rank(); ++i) {
            if (ce.dims[static_cast<std::size_t>(i)] != t.dim(i)) {
                throw DataError(path + ": tensor '" + ce.name + "' shape mismatch");
            }
        }
        std::memcpy(t.data().data(), ce.payload.data(), ce.payload.size());
    }
}

}  // namespace ci2p
