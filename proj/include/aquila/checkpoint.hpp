// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Binary checkpoint ("AQSF"):
//   magic "AQSF" | u32 version | u32 tensor count
//   per tensor: u16 name length, name bytes, u8 ndim, u64 dims[ndim], u8 dtype (0 f32, 1 f64),
//               raw little-endian row-major data
//   u32 CRC-32 of every preceding byte
// All integers little-endian.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "aquila/errors.hpp"
#include "aquila/params.hpp"
#include "aquila/tensor.hpp"

namespace aquila {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'A', 'Q', 'S', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

inline std::string_view dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }
inline std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

struct CheckpointEntry {
    std::string name;
    Dims dims;
    DType dtype = DType::F32;
    std::vector<unsigned char> bytes;

    template <class T>
    static CheckpointEntry from(std::string name, const Tensor<T>& t) {
        CheckpointEntry e{std::move(name), t.dims(), dtype_of<T>(), {}};
        e.bytes.resize(t.size() * sizeof(T));
        std::memcpy(e.bytes.data(), t.data().data(), e.bytes.size());
        return e;
    }

    /// Tensor of element type T; converts between f32 and f64 when the stored type differs.
    template <class T>
    Tensor<T> to_tensor() const {
        Tensor<T> t(dims);
        if (dtype == dtype_of<T>()) {
            std::memcpy(t.data().data(), bytes.data(), bytes.size());
        } else if (dtype == DType::F32) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                float f;
                std::memcpy(&f, bytes.data() + i * 4, 4);
                t[i] = static_cast<T>(f);
            }
        } else {
            for (std::size_t i = 0; i < t.size(); ++i) {
                double d;
                std::memcpy(&d, bytes.data() + i * 8, 8);
                t[i] = static_cast<T>(d);
            }
        }
        return t;
    }
};

struct Checkpoint {
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
    std::vector<unsigned char> out;
    auto put = [&](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        out.insert(out.end(), b, b + n);
    };
    auto put_u = [&](auto v) { put(&v, sizeof(v)); };
    put(kCheckpointMagic, 4);
    put_u(kCheckpointVersion);
    put_u(static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& e : ck.entries) {
        if (e.name.size() > 0xffff) throw FormatError(FormatCode::Malformed, "tensor name too long: " + e.name);
        if (e.dims.size() > 0xff) throw FormatError(FormatCode::Malformed, "too many dims for " + e.name);
        if (e.bytes.size() != dims_product(e.dims) * dtype_size(e.dtype)) {
            throw FormatError(FormatCode::Malformed, "byte size mismatch for " + e.name);
        }
        put_u(static_cast<std::uint16_t>(e.name.size()));
        put(e.name.data(), e.name.size());
        put_u(static_cast<std::uint8_t>(e.dims.size()));
        for (std::size_t d : e.dims) put_u(static_cast<std::uint64_t>(d));
        put_u(static_cast<std::uint8_t>(e.dtype));
        put(e.bytes.data(), e.bytes.size());
    }
    put_u(crc32_of(out.data(), out.size()));
    return out;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& buf) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (buf.size() < 4 || pos + n > buf.size() - 4) {
            throw FormatError(FormatCode::Truncated, std::string("checkpoint truncated while reading ") + what);
        }
    };
    auto get = [&](void* p, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    };
    if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError(buf.size() < 4 ? FormatCode::Truncated : FormatCode::BadMagic, "not an AQSF checkpoint");
    }
    if (buf.size() < 16) throw FormatError(FormatCode::Truncated, "checkpoint truncated in header");
    // Truncation is diagnosed by structure first; the CRC then guards the payload.
    pos = 4;
    std::uint32_t version = 0, count = 0;
    get(&version, 4, "version");
    if (version != kCheckpointVersion) {
        throw FormatError(FormatCode::BadVersion, "unsupported checkpoint version " + std::to_string(version));
    }
    get(&count, 4, "tensor count");
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        std::uint16_t name_len = 0;
        get(&name_len, 2, "name length");
        e.name.resize(name_len);
        get(e.name.data(), name_len, "name");
        std::uint8_t ndim = 0;
        get(&ndim, 1, "ndim");
        std::size_t count_elems = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            std::uint64_t v = 0;
            get(&v, 8, "dims");
            if (v == 0 || v > (std::uint64_t{1} << 40)) throw FormatError(FormatCode::Malformed, "invalid dim in " + e.name);
            e.dims.push_back(static_cast<std::size_t>(v));
            count_elems *= static_cast<std::size_t>(v);
        }
        std::uint8_t dt = 0;
        get(&dt, 1, "dtype");
        if (dt > 1) throw FormatError(FormatCode::BadDtype, "unknown dtype code " + std::to_string(dt) + " for " + e.name);
        e.dtype = static_cast<DType>(dt);
        const std::size_t nbytes = count_elems * dtype_size(e.dtype);
        need(nbytes, "tensor data");
        e.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.begin() + static_cast<std::ptrdiff_t>(pos + nbytes));
        pos += nbytes;
        ck.entries.push_back(std::move(e));
    }
    if (pos + 4 != buf.size()) {
        throw FormatError(pos + 4 > buf.size() ? FormatCode::Truncated : FormatCode::Malformed, "trailing bytes after last tensor");
    }
    std::uint32_t stored = 0;
    std::memcpy(&stored, buf.data() + pos, 4);
    if (stored != crc32_of(buf.data(), pos)) throw FormatError(FormatCode::CrcMismatch, "checkpoint CRC mismatch");
    return ck;
}

/// Writes to a sibling temp file and renames it over the target.
inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const auto bytes = encode_checkpoint(ck);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError(FormatCode::Io, "cannot open " + tmp.string() + " for writing");
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!os.flush()) throw FormatError(FormatCode::Io, "write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw FormatError(FormatCode::Io, "rename to " + path.string() + " failed: " + ec.message());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(FormatCode::Io, "cannot open checkpoint " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_checkpoint(buf);
}

template <class T>
Checkpoint checkpoint_from_store(const ParamStore<T>& store) {
    Checkpoint ck;
    for (const auto& p : store) ck.entries.push_back(CheckpointEntry::from(p.name, p.value));
    return ck;
}

/// Loads every store tensor by name. Missing names or mismatched dims are rejected; extra
/// checkpoint tensors are rejected too, since they indicate a different model configuration.
template <class T>
void load_into_store(const Checkpoint& ck, ParamStore<T>& store) {
    if (ck.entries.size() != store.size()) {
        throw FormatError(FormatCode::Malformed, "checkpoint holds " + std::to_string(ck.entries.size()) + " tensors, model expects " +
                                                     std::to_string(store.size()));
    }
    for (const auto& e : ck.entries) {
        if (!store.contains(e.name)) throw FormatError(FormatCode::Malformed, "checkpoint tensor not in model: " + e.name);
        Tensor<T>& dst = store.value(store.find(e.name));
        if (dst.dims() != e.dims) {
            throw FormatError(FormatCode::Malformed, "dims of " + e.name + " are " + dims_str(e.dims) + ", model expects " + dims_str(dst.dims()));
        }
        dst = e.to_tensor<T>();
    }
}

}  // namespace aquila
