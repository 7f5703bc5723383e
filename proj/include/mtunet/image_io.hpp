#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mtunet/errors.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

namespace detail {

inline std::uint8_t quantize_unit(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0))
        throw UsageError(std::string(what) + ": value " + std::to_string(v) +
                         " outside [0,1]; caller must clamp");
    return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

}  // namespace detail

/// Binary PGM (P5), maxval 255. Input: 1xHxW or HxW tensor in [0,1].
inline void write_pgm(const std::string& path, const Tensor& img) {
    std::size_t h = 0, w = 0;
    if (img.rank() == 2) {
        h = img.shape[0];
        w = img.shape[1];
    } else if (img.rank() == 3 && img.shape[0] == 1) {
        h = img.shape[1];
        w = img.shape[2];
    } else {
        throw DimensionError("write_pgm: need a single-channel image, got " +
                             shape_str(img.shape));
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h * w; ++i)
        os.put(static_cast<char>(detail::quantize_unit(img.data[i], "write_pgm")));
    if (!os) throw IoError("failed to write: " + path);
}

/// Binary PPM (P6), maxval 255. Input: 3xHxW tensor in [0,1]; planar channels
/// are interleaved to RGB pixel order on disk.
inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.shape[0] != 3)
        throw DimensionError("write_ppm: need a 3xHxW image, got " + shape_str(img.shape));
    const std::size_t h = img.shape[1], w = img.shape[2], hw = h * w;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            os.put(static_cast<char>(detail::quantize_unit(img.data[c * hw + i], "write_ppm")));
    if (!os) throw IoError("failed to write: " + path);
}

namespace detail {

inline void skip_netpbm_space(std::istream& is) {
    int c = is.peek();
    while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else {
            is.get();
        }
        c = is.peek();
    }
}

inline std::size_t read_netpbm_int(std::istream& is, const std::string& path) {
    skip_netpbm_space(is);
    std::size_t v = 0;
    if (!(is >> v)) throw IoError(path + ": malformed netpbm header");
    return v;
}

}  // namespace detail

/// Reads a binary P5/P6 file back into a 1xHxW / 3xHxW tensor of values in
/// [0,1] (byte / 255). Round-trips write_pgm / write_ppm exactly on the
/// quantized values.
inline TensorPtr read_netpbm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char p = 0, kind = 0;
    is.get(p);
    is.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw IoError(path + ": not a binary PGM/PPM file");
    const std::size_t w = detail::read_netpbm_int(is, path);
    const std::size_t h = detail::read_netpbm_int(is, path);
    const std::size_t maxval = detail::read_netpbm_int(is, path);
    if (maxval != 255) throw IoError(path + ": unsupported maxval " + std::to_string(maxval));
    is.get();  // single whitespace byte after maxval
    const std::size_t channels = (kind == '6') ? 3 : 1;
    std::vector<char> raw(w * h * channels);
    is.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size())
        throw IoError(path + ": truncated pixel payload");
    auto img = Tensor::make({channels, h, w});
    for (std::size_t i = 0; i < w * h; ++i)
        for (std::size_t c = 0; c < channels; ++c)
            img->data[c * w * h + i] =
                static_cast<double>(static_cast<std::uint8_t>(raw[i * channels + c])) / 255.0;
    return img;
}

}  // namespace mtunet
