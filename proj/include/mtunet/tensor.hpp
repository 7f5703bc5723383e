#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtunet/errors.hpp"

namespace mtunet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense n-dimensional array of 64-bit floats, row-major, with an optional
/// same-shape gradient buffer. Tensors are single-owner, single-threaded.
class Tensor {
public:
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized like data iff requires_grad

    Tensor() = default;

    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(checked_numel(shape), fill) {}

    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != checked_numel(shape))
            throw DimensionError("tensor: data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    static TensorPtr make(Shape s, double fill = 0.0) {
        return std::make_shared<Tensor>(std::move(s), fill);
    }

    static TensorPtr make(Shape s, std::vector<double> values) {
        auto t = std::make_shared<Tensor>(std::move(s), std::move(values));
        t->ensure_finite("make");
        return t;
    }

    static TensorPtr scalar(double v) { return make(Shape{1}, std::vector<double>{v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        require_rank(2, "rows");
        return shape[0];
    }
    std::size_t cols() const {
        require_rank(2, "cols");
        return shape[1];
    }

    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    void set_requires_grad(bool on) {
        requires_grad = on;
        if (on)
            grad.assign(data.size(), 0.0);
        else
            grad.clear();
    }

    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    void require_rank(std::size_t r, const char* what) const {
        if (shape.size() != r)
            throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) +
                                 " tensor, got shape " + shape_str(shape));
    }

    void ensure_finite(const char* op) const {
        for (double v : data)
            if (!std::isfinite(v))
                throw NumericError(std::string(op) + ": produced a non-finite value");
    }

private:
    static std::size_t checked_numel(const Shape& s) {
        if (s.empty()) throw DimensionError("tensor: shape must have at least one extent");
        for (std::size_t e : s)
            if (e == 0) throw DimensionError("tensor: zero extent in shape " + shape_str(s));
        return shape_numel(s);
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace mtunet
