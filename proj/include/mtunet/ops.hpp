#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mtunet/graph.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatView = Eigen::Map<EMat>;
using CMatView = Eigen::Map<const EMat>;

inline CMatView mat_view(const Tensor& t) {
    t.require_rank(2, "mat_view");
    return CMatView(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                    static_cast<Eigen::Index>(t.shape[1]));
}

inline MatView mat_view_mut(std::vector<double>& buf, std::size_t r, std::size_t c) {
    return MatView(buf.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline TensorPtr matmul(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    a->require_rank(2, "matmul lhs");
    b->require_rank(2, "matmul rhs");
    if (a->cols() != b->rows())
        throw DimensionError("matmul: inner extents disagree, " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
    auto out = Tensor::make({a->rows(), b->cols()});
    mat_view_mut(out->data, out->rows(), out->cols()).noalias() = mat_view(*a) * mat_view(*b);
    return g.track("matmul", {a, b}, out, [a, b, out] {
        CMatView go(out->grad.data(), static_cast<Eigen::Index>(out->rows()),
                    static_cast<Eigen::Index>(out->cols()));
        if (a->requires_grad)
            mat_view_mut(a->grad, a->rows(), a->cols()).noalias() +=
                go * mat_view(*b).transpose();
        if (b->requires_grad)
            mat_view_mut(b->grad, b->rows(), b->cols()).noalias() +=
                mat_view(*a).transpose() * go;
    });
}

inline TensorPtr transpose(Graph& g, const TensorPtr& x) {
    x->require_rank(2, "transpose");
    const std::size_t r = x->rows(), c = x->cols();
    auto out = Tensor::make({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->at(j, i) = x->at(i, j);
    return g.track("transpose", {x}, out, [x, out, r, c] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) x->grad[i * c + j] += out->grad[j * r + i];
    });
}

inline TensorPtr reshape(Graph& g, const TensorPtr& x, Shape shape) {
    if (shape_numel(shape) != x->size())
        throw DimensionError("reshape: " + shape_str(x->shape) + " has " +
                             std::to_string(x->size()) + " elements, target " + shape_str(shape));
    auto out = Tensor::make(std::move(shape), x->data);
    return g.track("reshape", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
    });
}

inline TensorPtr concat_vec(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    a->require_rank(1, "concat_vec lhs");
    b->require_rank(1, "concat_vec rhs");
    auto out = Tensor::make({a->size() + b->size()});
    std::copy(a->data.begin(), a->data.end(), out->data.begin());
    std::copy(b->data.begin(), b->data.end(), out->data.begin() + a->size());
    return g.track("concat_vec", {a, b}, out, [a, b, out] {
        const std::size_t na = a->size();
        if (a->requires_grad)
            for (std::size_t i = 0; i < na; ++i) a->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[na + i];
    });
}

/// Packs n scalar tensors (shape {1}) into one length-n vector.
inline TensorPtr stack_scalars(Graph& g, const std::vector<TensorPtr>& xs) {
    if (xs.empty()) throw UsageError("stack_scalars: empty input");
    auto out = Tensor::make({xs.size()});
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i]->size() != 1)
            throw DimensionError("stack_scalars: element " + std::to_string(i) +
                                 " is not scalar, shape " + shape_str(xs[i]->shape));
        out->data[i] = xs[i]->data[0];
    }
    return g.track("stack_scalars", xs, out, [xs, out] {
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (xs[i]->requires_grad) xs[i]->grad[0] += out->grad[i];
    });
}

// ---------------------------------------------------------------------------
// Pointwise ops
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (!same_shape(*a, *b))
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                             " vs " + shape_str(b->shape));
}

}  // namespace detail

inline TensorPtr add(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(a, b, "add");
    auto out = Tensor::make(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
    return g.track("add", {a, b}, out, [a, b, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i];
    });
}

inline TensorPtr hadamard(Graph& g, const TensorPtr& a, const TensorPtr& b) {
    detail::require_same_shape(a, b, "hadamard");
    auto out = Tensor::make(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
    return g.track("hadamard", {a, b}, out, [a, b, out] {
        if (a->requires_grad)
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < out->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
    });
}

/// out = scale * x + shift, elementwise with scalar constants.
inline TensorPtr affine(Graph& g, const TensorPtr& x, double scale, double shift) {
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = scale * x->data[i] + shift;
    return g.track("affine", {x}, out, [x, out, scale] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < out->size(); ++i) x->grad[i] += scale * out->grad[i];
    });
}

inline TensorPtr scale(Graph& g, const TensorPtr& x, double s) { return affine(g, x, s, 0.0); }

inline TensorPtr relu(Graph& g, const TensorPtr& x) {
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = x->data[i] > 0 ? x->data[i] : 0.0;
    return g.track("relu", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < out->size(); ++i)
            if (x->data[i] > 0) x->grad[i] += out->grad[i];
    });
}

inline TensorPtr sigmoid(Graph& g, const TensorPtr& x) {
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = 1.0 / (1.0 + std::exp(-x->data[i]));
    return g.track("sigmoid", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < out->size(); ++i) {
            double y = out->data[i];
            x->grad[i] += out->grad[i] * y * (1.0 - y);
        }
    });
}

inline TensorPtr tanh(Graph& g, const TensorPtr& x) {
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->data[i] = std::tanh(x->data[i]);
    return g.track("tanh", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < out->size(); ++i) {
            double y = out->data[i];
            x->grad[i] += out->grad[i] * (1.0 - y * y);
        }
    });
}

// ---------------------------------------------------------------------------
// Broadcast bias adds
// ---------------------------------------------------------------------------

/// Adds vector v (length c) to every row of X (r x c).
inline TensorPtr add_row_vec(Graph& g, const TensorPtr& x, const TensorPtr& v) {
    x->require_rank(2, "add_row_vec");
    v->require_rank(1, "add_row_vec bias");
    if (v->size() != x->cols())
        throw DimensionError("add_row_vec: vector length " + std::to_string(v->size()) +
                             " vs columns " + std::to_string(x->cols()));
    const std::size_t r = x->rows(), c = x->cols();
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] = x->data[i * c + j] + v->data[j];
    return g.track("add_row_vec", {x, v}, out, [x, v, out, r, c] {
        if (x->requires_grad)
            for (std::size_t i = 0; i < r * c; ++i) x->grad[i] += out->grad[i];
        if (v->requires_grad)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) v->grad[j] += out->grad[i * c + j];
    });
}

/// Adds vector v (length r) to every column of X (r x c).
inline TensorPtr add_col_vec(Graph& g, const TensorPtr& x, const TensorPtr& v) {
    x->require_rank(2, "add_col_vec");
    v->require_rank(1, "add_col_vec bias");
    if (v->size() != x->rows())
        throw DimensionError("add_col_vec: vector length " + std::to_string(v->size()) +
                             " vs rows " + std::to_string(x->rows()));
    const std::size_t r = x->rows(), c = x->cols();
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] = x->data[i * c + j] + v->data[i];
    return g.track("add_col_vec", {x, v}, out, [x, v, out, r, c] {
        if (x->requires_grad)
            for (std::size_t i = 0; i < r * c; ++i) x->grad[i] += out->grad[i];
        if (v->requires_grad)
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) v->grad[i] += out->grad[i * c + j];
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline TensorPtr sum_all(Graph& g, const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->data) s += v;
    auto out = Tensor::scalar(s);
    return g.track("sum_all", {x}, out, [x, out] {
        if (!x->requires_grad) return;
        const double go = out->grad[0];
        for (std::size_t i = 0; i < x->size(); ++i) x->grad[i] += go;
    });
}

inline TensorPtr sum_rows(Graph& g, const TensorPtr& x) {
    x->require_rank(2, "sum_rows");
    const std::size_t r = x->rows(), c = x->cols();
    auto out = Tensor::make({r});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x->data[i * c + j];
        out->data[i] = s;
    }
    return g.track("sum_rows", {x}, out, [x, out, r, c] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) x->grad[i * c + j] += out->grad[i];
    });
}

inline TensorPtr sum_cols(Graph& g, const TensorPtr& x) {
    x->require_rank(2, "sum_cols");
    const std::size_t r = x->rows(), c = x->cols();
    auto out = Tensor::make({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->data[j] += x->data[i * c + j];
    return g.track("sum_cols", {x}, out, [x, out, r, c] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) x->grad[i * c + j] += out->grad[j];
    });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Row-wise softmax with max-subtraction for stability.
inline TensorPtr softmax_rows(Graph& g, const TensorPtr& x) {
    x->require_rank(2, "softmax_rows");
    const std::size_t r = x->rows(), c = x->cols();
    auto out = Tensor::make(x->shape);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = x->data.data() + i * c;
        double m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double e = std::exp(row[j] - m);
            out->data[i * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) out->data[i * c + j] /= z;
    }
    return g.track("softmax_rows", {x}, out, [x, out, r, c] {
        if (!x->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = out->data.data() + i * c;
            const double* go = out->grad.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += go[j] * y[j];
            for (std::size_t j = 0; j < c; ++j) x->grad[i * c + j] += (go[j] - dot) * y[j];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

namespace detail {

// Lowered convolution input: column j = flattened receptive field of output j.
inline std::shared_ptr<EMat> im2col(const Tensor& in, std::size_t k, std::size_t stride,
                                    std::size_t pad, std::size_t oh, std::size_t ow) {
    const std::size_t ci = in.shape[0], h = in.shape[1], w = in.shape[2];
    auto cols = std::make_shared<EMat>(ci * k * k, oh * ow);
    cols->setZero();
    for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t row = (c * k + ky) * k + kx;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        (*cols)(static_cast<Eigen::Index>(row),
                                static_cast<Eigen::Index>(oy * ow + ox)) =
                            in.data[(c * h + static_cast<std::size_t>(iy)) * w +
                                    static_cast<std::size_t>(ix)];
                    }
                }
            }
    return cols;
}

inline void col2im_accumulate(const EMat& dcols, Tensor& in_grad_holder, std::size_t k,
                              std::size_t stride, std::size_t pad, std::size_t oh,
                              std::size_t ow) {
    const std::size_t ci = in_grad_holder.shape[0], h = in_grad_holder.shape[1],
                      w = in_grad_holder.shape[2];
    for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t row = (c * k + ky) * k + kx;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        in_grad_holder.grad[(c * h + static_cast<std::size_t>(iy)) * w +
                                            static_cast<std::size_t>(ix)] +=
                            dcols(static_cast<Eigen::Index>(row),
                                  static_cast<Eigen::Index>(oy * ow + ox));
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip). Square odd kernels only.
inline TensorPtr conv2d(Graph& g, const TensorPtr& input, const TensorPtr& kernels,
                        std::size_t stride, std::size_t padding) {
    input->require_rank(3, "conv2d input");
    kernels->require_rank(4, "conv2d kernels");
    const std::size_t ci = input->shape[0], h = input->shape[1], w = input->shape[2];
    const std::size_t co = kernels->shape[0], k = kernels->shape[2];
    if (kernels->shape[2] != kernels->shape[3])
        throw DimensionError("conv2d: kernels must be square");
    if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
    if (kernels->shape[1] != ci)
        throw DimensionError("conv2d: kernel channels " + std::to_string(kernels->shape[1]) +
                             " vs input channels " + std::to_string(ci));
    if (stride == 0) throw UsageError("conv2d: stride must be positive");
    if (h + 2 * padding < k || w + 2 * padding < k)
        throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t oh = (h + 2 * padding - k) / stride + 1;
    const std::size_t ow = (w + 2 * padding - k) / stride + 1;

    auto cols = detail::im2col(*input, k, stride, padding, oh, ow);
    auto out = Tensor::make({co, oh, ow});
    CMatView kmat(kernels->data.data(), static_cast<Eigen::Index>(co),
                  static_cast<Eigen::Index>(ci * k * k));
    mat_view_mut(out->data, co, oh * ow).noalias() = kmat * (*cols);

    return g.track("conv2d", {input, kernels}, out,
                   [input, kernels, out, cols, k, stride, padding, oh, ow, co, ci] {
                       CMatView go(out->grad.data(), static_cast<Eigen::Index>(co),
                                   static_cast<Eigen::Index>(oh * ow));
                       if (kernels->requires_grad)
                           mat_view_mut(kernels->grad, co, ci * k * k).noalias() +=
                               go * cols->transpose();
                       if (input->requires_grad) {
                           CMatView kmat(kernels->data.data(), static_cast<Eigen::Index>(co),
                                         static_cast<Eigen::Index>(ci * k * k));
                           EMat dcols = kmat.transpose() * go;
                           detail::col2im_accumulate(dcols, *input, k, stride, padding, oh, ow);
                       }
                   });
}

/// Adds b[c] to every spatial position of channel c.
inline TensorPtr bias_channels(Graph& g, const TensorPtr& x, const TensorPtr& b) {
    x->require_rank(3, "bias_channels");
    b->require_rank(1, "bias_channels bias");
    const std::size_t c = x->shape[0], hw = x->shape[1] * x->shape[2];
    if (b->size() != c)
        throw DimensionError("bias_channels: bias length " + std::to_string(b->size()) +
                             " vs channels " + std::to_string(c));
    auto out = Tensor::make(x->shape);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i)
            out->data[ch * hw + i] = x->data[ch * hw + i] + b->data[ch];
    return g.track("bias_channels", {x, b}, out, [x, b, out, c, hw] {
        if (x->requires_grad)
            for (std::size_t i = 0; i < c * hw; ++i) x->grad[i] += out->grad[i];
        if (b->requires_grad)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i) b->grad[ch] += out->grad[ch * hw + i];
    });
}

enum class PoolKind { max, avg };

/// Per-window max or mean. Max gradient routes to the first-occurring argmax
/// in row-major window order; avg distributes 1/window^2.
inline TensorPtr pool2d(Graph& g, PoolKind kind, const TensorPtr& input, std::size_t window,
                        std::size_t stride) {
    input->require_rank(3, "pool2d input");
    const std::size_t c = input->shape[0], h = input->shape[1], w = input->shape[2];
    if (window == 0 || stride == 0) throw UsageError("pool2d: window and stride must be positive");
    if (window > h || window > w) throw DimensionError("pool2d: window exceeds input extent");
    if ((h - window) % stride != 0 || (w - window) % stride != 0)
        throw DimensionError("pool2d: trailing partial windows are not supported");
    const std::size_t oh = (h - window) / stride + 1;
    const std::size_t ow = (w - window) / stride + 1;
    auto out = Tensor::make({c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    if (kind == PoolKind::max) argmax->resize(c * oh * ow);

    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::size_t oidx = (ch * oh + oy) * ow + ox;
                if (kind == PoolKind::max) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t ky = 0; ky < window; ++ky)
                        for (std::size_t kx = 0; kx < window; ++kx) {
                            const std::size_t idx =
                                (ch * h + oy * stride + ky) * w + ox * stride + kx;
                            if (input->data[idx] > best) {
                                best = input->data[idx];
                                best_idx = idx;
                            }
                        }
                    out->data[oidx] = best;
                    (*argmax)[oidx] = best_idx;
                } else {
                    double s = 0.0;
                    for (std::size_t ky = 0; ky < window; ++ky)
                        for (std::size_t kx = 0; kx < window; ++kx)
                            s += input->data[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                    out->data[oidx] = s / static_cast<double>(window * window);
                }
            }

    return g.track("pool2d", {input}, out,
                   [kind, input, out, argmax, window, stride, c, h, w, oh, ow] {
                       if (!input->requires_grad) return;
                       if (kind == PoolKind::max) {
                           for (std::size_t i = 0; i < out->size(); ++i)
                               input->grad[(*argmax)[i]] += out->grad[i];
                       } else {
                           const double inv = 1.0 / static_cast<double>(window * window);
                           for (std::size_t ch = 0; ch < c; ++ch)
                               for (std::size_t oy = 0; oy < oh; ++oy)
                                   for (std::size_t ox = 0; ox < ow; ++ox) {
                                       const double go =
                                           out->grad[(ch * oh + oy) * ow + ox] * inv;
                                       for (std::size_t ky = 0; ky < window; ++ky)
                                           for (std::size_t kx = 0; kx < window; ++kx)
                                               input->grad[(ch * h + oy * stride + ky) * w +
                                                           ox * stride + kx] += go;
                                   }
                       }
                   });
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

/// Gate parameters for a GRU applied row-wise: matrices are d x d, biases d.
struct GruCell {
    TensorPtr w_r, u_r, b_r;
    TensorPtr w_u, u_u, b_u;
    TensorPtr w_h, u_h, b_h;
};

/// r = sig(x Wr' + h Ur' + br), u = sig(x Wu' + h Uu' + bu),
/// htil = tanh(x Wh' + (r . h) Uh' + bh), h' = (1-u) . htil + u . h.
inline TensorPtr gru_cell(Graph& g, const TensorPtr& x, const TensorPtr& h, const GruCell& cell) {
    x->require_rank(2, "gru_cell input");
    h->require_rank(2, "gru_cell hidden");
    detail::require_same_shape(x, h, "gru_cell");
    const std::size_t d = x->cols();
    for (const auto& m : {cell.w_r, cell.u_r, cell.w_u, cell.u_u, cell.w_h, cell.u_h})
        if (m->rank() != 2 || m->rows() != d || m->cols() != d)
            throw DimensionError("gru_cell: gate matrices must be " + std::to_string(d) + "x" +
                                 std::to_string(d));
    for (const auto& b : {cell.b_r, cell.b_u, cell.b_h})
        if (b->rank() != 1 || b->size() != d)
            throw DimensionError("gru_cell: gate biases must have length " + std::to_string(d));

    auto gate = [&](const TensorPtr& wx, const TensorPtr& uh, const TensorPtr& hh,
                    const TensorPtr& b) {
        auto lin = add(g, matmul(g, x, transpose(g, wx)), matmul(g, hh, transpose(g, uh)));
        return add_row_vec(g, lin, b);
    };
    auto r = sigmoid(g, gate(cell.w_r, cell.u_r, h, cell.b_r));
    auto u = sigmoid(g, gate(cell.w_u, cell.u_u, h, cell.b_u));
    auto htil = tanh(g, gate(cell.w_h, cell.u_h, hadamard(g, r, h), cell.b_h));
    auto keep = hadamard(g, u, h);
    auto fresh = hadamard(g, affine(g, u, -1.0, 1.0), htil);
    return add(g, fresh, keep);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Cross-entropy of softmax(logits) against a single target index,
/// computed with log-sum-exp stabilization.
inline TensorPtr cross_entropy_logits(Graph& g, const TensorPtr& logits, std::size_t label) {
    logits->require_rank(1, "cross_entropy_logits");
    const std::size_t n = logits->size();
    if (label >= n) throw UsageError("cross_entropy_logits: label out of range");
    double m = logits->data[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, logits->data[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(logits->data[i] - m);
    auto probs = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) (*probs)[i] = std::exp(logits->data[i] - m) / z;
    auto out = Tensor::scalar(m + std::log(z) - logits->data[label]);
    return g.track("cross_entropy_logits", {logits}, out, [logits, out, probs, label, n] {
        if (!logits->requires_grad) return;
        const double go = out->grad[0];
        for (std::size_t i = 0; i < n; ++i)
            logits->grad[i] += go * ((*probs)[i] - (i == label ? 1.0 : 0.0));
    });
}

/// Mean binary cross-entropy over scores in (0,1); scores are clamped to
/// [eps, 1-eps] with zero gradient in the clamped region.
inline TensorPtr mean_bce(Graph& g, const TensorPtr& scores, const std::vector<double>& targets,
                          double eps = 1e-12) {
    scores->require_rank(1, "mean_bce");
    const std::size_t n = scores->size();
    if (targets.size() != n)
        throw DimensionError("mean_bce: " + std::to_string(n) + " scores vs " +
                             std::to_string(targets.size()) + " targets");
    auto clamped = std::make_shared<std::vector<double>>(n);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double s = std::clamp(scores->data[i], eps, 1.0 - eps);
        (*clamped)[i] = s;
        loss -= targets[i] * std::log(s) + (1.0 - targets[i]) * std::log(1.0 - s);
    }
    auto out = Tensor::scalar(loss / static_cast<double>(n));
    auto tgt = std::make_shared<std::vector<double>>(targets);
    return g.track("mean_bce", {scores}, out, [scores, out, clamped, tgt, eps, n] {
        if (!scores->requires_grad) return;
        const double go = out->grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (scores->data[i] <= eps || scores->data[i] >= 1.0 - eps) continue;
            const double s = (*clamped)[i], y = (*tgt)[i];
            scores->grad[i] += go * (-y / s + (1.0 - y) / (1.0 - s));
        }
    });
}

}  // namespace mtunet
