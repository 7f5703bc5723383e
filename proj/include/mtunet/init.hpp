#pragma once

#include <cmath>
#include <cstddef>

#include "mtunet/rng.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

/// Glorot/Xavier uniform draw on the open interval (-a, a) with
/// a = sqrt(6 / (fan_in + fan_out)).
///
/// Fan rules: rank-1 [n] uses fan_in = fan_out = n; rank-2 [r, c] feeds
/// x @ W' so fan_in = c and fan_out = r; rank-4 conv kernels [co, ci, k, k]
/// use fan_in = ci*k*k and fan_out = co*k*k. Elements are drawn in row-major
/// order, one u32 per element, mapped through (u32 + 0.5) * 2^-32 so the
/// endpoints are never produced.
inline TensorPtr glorot_uniform(Pcg32& rng, const Shape& shape) {
    double fan_in = 0.0, fan_out = 0.0;
    switch (shape.size()) {
        case 1:
            fan_in = fan_out = static_cast<double>(shape[0]);
            break;
        case 2:
            fan_out = static_cast<double>(shape[0]);
            fan_in = static_cast<double>(shape[1]);
            break;
        case 4: {
            const double rf = static_cast<double>(shape[2] * shape[3]);
            fan_out = static_cast<double>(shape[0]) * rf;
            fan_in = static_cast<double>(shape[1]) * rf;
            break;
        }
        default:
            throw DimensionError("glorot_uniform: unsupported rank " +
                                 std::to_string(shape.size()));
    }
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    auto t = Tensor::make(shape);
    for (std::size_t i = 0; i < t->size(); ++i) {
        const double u = rng.next_double_open();  // (0, 1)
        t->data[i] = a * (2.0 * u - 1.0);
    }
    return t;
}

/// Zero-filled tensor; the conventional bias initializer.
inline TensorPtr zeros(const Shape& shape) { return Tensor::make(shape); }

}  // namespace mtunet
