#pragma once

// Checkpoint container: named parameter tensors with shape headers.
// Layout (all integers little-endian):
//   u8  format version (currently 1)
//   u32 tensor count
//   per tensor: u16 name length, name bytes, u8 rank, u32 extent per axis,
//               f64 payload (little-endian IEEE doubles, row-major)

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gaussflow/tensor.hpp"

namespace gaussflow {

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

constexpr std::uint8_t kCheckpointVersion = 1;

inline void put_bytes(std::ostream& os, const char* b, std::size_t n) { os.write(b, std::streamsize(n)); }

inline void put_u8(std::ostream& os, std::uint8_t v) {
    char b = char(v);
    put_bytes(os, &b, 1);
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {char(v & 0xff), char(v >> 8)};
    put_bytes(os, b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char(v >> 24)};
    put_bytes(os, b, 4);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 8);
}

inline void get_bytes(std::istream& is, char* b, std::size_t n, const char* what) {
    is.read(b, std::streamsize(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
}

inline std::uint8_t get_u8(std::istream& is, const char* what) {
    char b;
    get_bytes(is, &b, 1, what);
    return std::uint8_t(b);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
    char b[2];
    get_bytes(is, b, 2, what);
    return std::uint16_t(std::uint8_t(b[0])) | (std::uint16_t(std::uint8_t(b[1])) << 8);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    char b[4];
    get_bytes(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b[i])) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is, const char* what) {
    char b[8];
    get_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b[i])) << (8 * i);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, Tensor>>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    detail::put_u8(os, detail::kCheckpointVersion);
    detail::put_u32(os, std::uint32_t(params.size()));
    for (const auto& [name, t] : params) {
        if (name.size() > 0xffff) throw CheckpointError("parameter name too long: " + name);
        detail::put_u16(os, std::uint16_t(name.size()));
        detail::put_bytes(os, name.data(), name.size());
        detail::put_u8(os, std::uint8_t(t.rank()));
        for (int a = 0; a < t.rank(); ++a) detail::put_u32(os, std::uint32_t(t.dim(a)));
        for (std::size_t i = 0; i < t.numel(); ++i) detail::put_f64(os, t[i]);
    }
    if (!os) throw CheckpointError("write failed for checkpoint: " + path);
}

// Loads values into the given parameter tensors in place. The file must hold
// exactly the same named tensors with matching shapes.
inline void load_checkpoint(const std::string& path,
                            std::vector<std::pair<std::string, Tensor>>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    std::uint8_t version = detail::get_u8(is, "version");
    if (version != detail::kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    std::uint32_t count = detail::get_u32(is, "tensor count");
    if (count != params.size())
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                              std::to_string(params.size()));
    std::vector<bool> seen(params.size(), false);
    for (std::uint32_t e = 0; e < count; ++e) {
        std::uint16_t name_len = detail::get_u16(is, "name length");
        std::string name(name_len, '\0');
        detail::get_bytes(is, name.data(), name_len, "name");
        std::uint8_t rank = detail::get_u8(is, "rank");
        Shape shape(rank);
        for (int a = 0; a < rank; ++a) shape[static_cast<std::size_t>(a)] = int(detail::get_u32(is, "extent"));
        std::size_t idx = params.size();
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].first == name) {
                idx = i;
                break;
            }
        if (idx == params.size()) throw CheckpointError("unexpected tensor in checkpoint: " + name);
        if (seen[idx]) throw CheckpointError("duplicate tensor in checkpoint: " + name);
        seen[idx] = true;
        Tensor& t = params[idx].second;
        if (shape != t.shape())
            throw CheckpointError("shape mismatch for " + name + ": file " + shape_str(shape) +
                                  " vs model " + shape_str(t.shape()));
        auto& d = t.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = detail::get_f64(is, "payload");
    }
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!seen[i]) throw CheckpointError("checkpoint missing tensor: " + params[i].first);
}

}  // namespace gaussflow
