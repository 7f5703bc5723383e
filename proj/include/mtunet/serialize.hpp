#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mtunet/errors.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

enum class Dtype : std::uint8_t { f64 = 0, u8 = 1 };

namespace detail {

inline void put_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

inline void put_u16_le(std::ostream& os, std::uint16_t v) {
    os.put(static_cast<char>(v & 0xff));
    os.put(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline void need(std::istream& is, char* dst, std::size_t n, const std::string& what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw IoError("truncated stream while reading " + what);
}

inline std::uint8_t get_u8(std::istream& is, const std::string& what) {
    char c;
    need(is, &c, 1, what);
    return static_cast<std::uint8_t>(c);
}

inline std::uint16_t get_u16_le(std::istream& is, const std::string& what) {
    char b[2];
    need(is, b, 2, what);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) |
                                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[1]))
                                       << 8));
}

inline std::uint32_t get_u32_le(std::istream& is, const std::string& what) {
    char b[4];
    need(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    return v;
}

inline double get_f64_le(std::istream& is, const std::string& what) {
    char b[8];
    need(is, b, 8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BTSR: magic "BTSR", u8 version=1, u8 dtype (0=f64, 1=u8), u8 rank,
// rank x u32 LE extents, row-major payload LE.
// ---------------------------------------------------------------------------

struct Btsr {
    Dtype dtype = Dtype::f64;
    Shape shape;
    std::vector<double> f64;
    std::vector<std::uint8_t> u8;

    std::size_t numel() const { return shape_numel(shape); }

    /// Widen to a Tensor; u8 payloads become doubles in [0, 255].
    TensorPtr to_tensor() const {
        if (dtype == Dtype::f64) return Tensor::make(shape, f64);
        std::vector<double> wide(u8.begin(), u8.end());
        return Tensor::make(shape, std::move(wide));
    }
};

inline void write_btsr(std::ostream& os, const Tensor& t) {
    os.write("BTSR", 4);
    detail::put_u8(os, 1);
    detail::put_u8(os, static_cast<std::uint8_t>(Dtype::f64));
    detail::put_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t e : t.shape) detail::put_u32_le(os, static_cast<std::uint32_t>(e));
    for (double v : t.data) detail::put_f64_le(os, v);
    if (!os) throw IoError("failed to write BTSR payload");
}

inline void write_btsr_u8(std::ostream& os, const Shape& shape,
                          const std::vector<std::uint8_t>& bytes) {
    if (shape_numel(shape) != bytes.size())
        throw DimensionError("write_btsr_u8: payload size " + std::to_string(bytes.size()) +
                             " does not match shape " + shape_str(shape));
    os.write("BTSR", 4);
    detail::put_u8(os, 1);
    detail::put_u8(os, static_cast<std::uint8_t>(Dtype::u8));
    detail::put_u8(os, static_cast<std::uint8_t>(shape.size()));
    for (std::size_t e : shape) detail::put_u32_le(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed to write BTSR payload");
}

inline Btsr read_btsr(std::istream& is, const std::string& context) {
    char magic[4];
    detail::need(is, magic, 4, context + ": magic");
    if (std::memcmp(magic, "BTSR", 4) != 0)
        throw IoError(context + ": bad magic, not a BTSR tensor");
    const std::uint8_t version = detail::get_u8(is, context + ": version");
    if (version != 1)
        throw IoError(context + ": unsupported BTSR version " + std::to_string(version));
    const std::uint8_t dtype_raw = detail::get_u8(is, context + ": dtype");
    if (dtype_raw > 1)
        throw IoError(context + ": unknown dtype code " + std::to_string(dtype_raw));
    const std::uint8_t rank = detail::get_u8(is, context + ": rank");
    Btsr out;
    out.dtype = static_cast<Dtype>(dtype_raw);
    out.shape.resize(rank);
    for (std::uint8_t i = 0; i < rank; ++i) {
        out.shape[i] = detail::get_u32_le(is, context + ": extent " + std::to_string(i));
        if (out.shape[i] == 0) throw IoError(context + ": zero extent in header");
    }
    const std::size_t n = out.numel();
    if (out.dtype == Dtype::f64) {
        out.f64.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            out.f64[i] = detail::get_f64_le(is, context + ": element " + std::to_string(i));
    } else {
        out.u8.resize(n);
        detail::need(is, reinterpret_cast<char*>(out.u8.data()), n, context + ": u8 payload");
    }
    return out;
}

inline void write_btsr_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_btsr(os, t);
}

inline void write_btsr_u8_file(const std::string& path, const Shape& shape,
                               const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_btsr_u8(os, shape, bytes);
}

inline Btsr read_btsr_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return read_btsr(is, path);
}

// ---------------------------------------------------------------------------
// MTCK checkpoints: magic "MTCK", u8 version=1, u32 LE entry count, then
// (u16 LE name length, UTF-8 name, BTSR tensor) per entry.
// ---------------------------------------------------------------------------

using StateDict = std::vector<std::pair<std::string, TensorPtr>>;

inline void save_checkpoint(const std::string& path, const StateDict& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("MTCK", 4);
    detail::put_u8(os, 1);
    detail::put_u32_le(os, static_cast<std::uint32_t>(state.size()));
    for (const auto& [name, tensor] : state) {
        if (name.size() > 0xffff) throw UsageError("checkpoint entry name too long: " + name);
        detail::put_u16_le(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_btsr(os, *tensor);
    }
    if (!os) throw IoError("failed to write checkpoint: " + path);
}

inline StateDict load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    detail::need(is, magic, 4, path + ": magic");
    if (std::memcmp(magic, "MTCK", 4) != 0)
        throw IoError(path + ": bad magic, not an MTCK checkpoint");
    const std::uint8_t version = detail::get_u8(is, path + ": version");
    if (version != 1)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = detail::get_u32_le(is, path + ": entry count");
    StateDict state;
    state.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string label = path + ": entry " + std::to_string(i);
        const std::uint16_t len = detail::get_u16_le(is, label + " name length");
        std::string name(len, '\0');
        detail::need(is, name.data(), len, label + " name");
        Btsr raw = read_btsr(is, label + " ('" + name + "')");
        if (raw.dtype != Dtype::f64)
            throw IoError(label + " ('" + name + "'): checkpoint tensors must be f64");
        state.emplace_back(std::move(name), raw.to_tensor());
    }
    return state;
}

}  // namespace mtunet
