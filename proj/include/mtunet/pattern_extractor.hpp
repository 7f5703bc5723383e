#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtunet/graph.hpp"
#include "mtunet/init.hpp"
#include "mtunet/ops.hpp"

namespace mtunet {

/// Three d->d linear layers with ReLU between, applied row-wise.
struct PeMlp {
    TensorPtr w1, b1, w2, b2, w3, b3;

    static PeMlp init(std::size_t d, Pcg32& rng) {
        PeMlp m;
        m.w1 = glorot_uniform(rng, {d, d});
        m.b1 = zeros({d});
        m.w2 = glorot_uniform(rng, {d, d});
        m.b2 = zeros({d});
        m.w3 = glorot_uniform(rng, {d, d});
        m.b3 = zeros({d});
        return m;
    }

    /// X: rows x d -> rows x d.
    TensorPtr apply(Graph& g, const TensorPtr& x) const {
        auto h1 = relu(g, add_row_vec(g, matmul(g, x, transpose(g, w1)), b1));
        auto h2 = relu(g, add_row_vec(g, matmul(g, h1, transpose(g, w2)), b2));
        return add_row_vec(g, matmul(g, h2, transpose(g, w3)), b3);
    }
};

/// Slot-attention pattern extractor f_phi: a 1x1 squeeze conv (c -> d), a
/// learned position code, a z x d pattern bank refined for T iterations by
/// modulated dot-product attention with a GRU update.
struct PeParams {
    TensorPtr squeeze_weight;  // d x c x 1 x 1
    TensorPtr squeeze_bias;    // d
    TensorPtr pos_weight;      // d x 4
    TensorPtr pos_bias;        // d
    TensorPtr patterns;        // z x d  (W^(1))
    PeMlp gq, gk;
    GruCell gru;
    std::size_t t_iters = 3;

    std::size_t slots() const { return patterns->shape[0]; }
    std::size_t dim() const { return patterns->shape[1]; }

    /// Draw order: squeeze, position, patterns, g_Q, g_K, GRU gates
    /// (w_r, u_r, w_u, u_u, w_h, u_h); biases are zeros.
    static PeParams init(std::size_t c, std::size_t d, std::size_t z, std::size_t t_iters,
                         Pcg32& rng) {
        if (z < 1 || t_iters < 1) throw UsageError("pe: z and T must be >= 1");
        PeParams p;
        p.squeeze_weight = glorot_uniform(rng, {d, c, 1, 1});
        p.squeeze_bias = zeros({d});
        p.pos_weight = glorot_uniform(rng, {d, 4});
        p.pos_bias = zeros({d});
        p.patterns = glorot_uniform(rng, {z, d});
        p.gq = PeMlp::init(d, rng);
        p.gk = PeMlp::init(d, rng);
        for (auto* m : {&p.gru.w_r, &p.gru.u_r, &p.gru.w_u, &p.gru.u_u, &p.gru.w_h, &p.gru.u_h})
            *m = glorot_uniform(rng, {d, d});
        for (auto* b : {&p.gru.b_r, &p.gru.b_u, &p.gru.b_h}) *b = zeros({d});
        p.t_iters = t_iters;
        return p;
    }
};

/// F (c x h x w) -> F' (d x l): 1x1 conv -> ReLU -> row-major spatial flatten,
/// so F' column j corresponds to spatial index j = row*w + col.
inline TensorPtr squeeze_project(Graph& g, const TensorPtr& fmap, const PeParams& pe) {
    fmap->require_rank(3, "squeeze_project");
    auto y = relu(g, bias_channels(g, conv2d(g, fmap, pe.squeeze_weight, 1, 0), pe.squeeze_bias));
    return reshape(g, y, {y->shape[0], y->shape[1] * y->shape[2]});
}

/// Position code: columns get the projection (4 -> d) of (x, y, 1-x, 1-y)
/// with x = col/(w-1), y = row/(h-1); an extent of 1 degenerates to 0.
inline TensorPtr position_code(Graph& g, std::size_t h, std::size_t w, const PeParams& pe) {
    const std::size_t l = h * w;
    auto coords = Tensor::make({l, 4});
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double x = w > 1 ? static_cast<double>(c) / static_cast<double>(w - 1) : 0.0;
            const double y = h > 1 ? static_cast<double>(r) / static_cast<double>(h - 1) : 0.0;
            double* row = coords->data.data() + (r * w + c) * 4;
            row[0] = x;
            row[1] = y;
            row[2] = 1.0 - x;
            row[3] = 1.0 - y;
        }
    auto proj = add_row_vec(g, matmul(g, coords, transpose(g, pe.pos_weight)), pe.pos_bias);
    return transpose(g, proj);  // d x l
}

/// F~ = F' + P.
inline TensorPtr add_position(Graph& g, const TensorPtr& fprime, std::size_t h, std::size_t w,
                              const PeParams& pe) {
    if (fprime->rank() != 2 || fprime->cols() != h * w)
        throw DimensionError("add_position: F' shape " + shape_str(fprime->shape) +
                             " does not match grid " + std::to_string(h) + "x" +
                             std::to_string(w));
    return add(g, fprime, position_code(g, h, w, pe));
}

/// A = sigmoid(Abar) ⊙ Softmax over each row (the spatial axis): suppresses
/// weak attention; every entry lands in (0,1) and every row sums below 1.
inline TensorPtr modulate(Graph& g, const TensorPtr& abar) {
    abar->require_rank(2, "modulate");
    return hadamard(g, sigmoid(g, abar), softmax_rows(g, abar));
}

/// One refinement: Abar = g_Q(W) g_K(F~), A = modulate(Abar), U = A F'^T,
/// W' = GRU(U, W). Returns (W', A).
struct AttentionStep {
    TensorPtr next_patterns;
    TensorPtr attention;
};

/// A^(t) = modulate(g_Q(W^(t)) g_K(F~)); g_Q acts on pattern rows, g_K on the
/// l spatial columns of F~.
inline TensorPtr attention_scores(Graph& g, const TensorPtr& patterns, const TensorPtr& ftilde,
                                  const PeParams& pe) {
    const std::size_t d = pe.dim();
    if (ftilde->rank() != 2 || ftilde->rows() != d)
        throw DimensionError("attention: F~ must be d x l, got " + shape_str(ftilde->shape));
    auto q = pe.gq.apply(g, patterns);              // z x d
    auto k = pe.gk.apply(g, transpose(g, ftilde));  // l x d (position-wise)
    return modulate(g, matmul(g, q, transpose(g, k)));
}

inline AttentionStep attention_iteration(Graph& g, const TensorPtr& patterns,
                                         const TensorPtr& ftilde, const TensorPtr& fprime,
                                         const PeParams& pe) {
    auto a = attention_scores(g, patterns, ftilde, pe);
    auto u = matmul(g, a, transpose(g, fprime));  // z x d
    return {gru_cell(g, u, patterns, pe.gru), a};
}

/// V from Eq.-style overall attention: spatial weight a_j = mean over the z
/// rows of A_T, then V_c = (1/l) * sum_j a_j * F[c, j].
inline TensorPtr extract_overall(Graph& g, const TensorPtr& fmap, const TensorPtr& attention) {
    attention->require_rank(2, "extract_overall attention");
    const std::size_t z = attention->rows(), l = attention->cols();
    TensorPtr flat;
    if (fmap->rank() == 3) {
        if (fmap->shape[1] * fmap->shape[2] != l)
            throw DimensionError("extract_overall: attention covers " + std::to_string(l) +
                                 " positions, features have " +
                                 std::to_string(fmap->shape[1] * fmap->shape[2]));
        flat = reshape(g, fmap, {fmap->shape[0], l});
    } else {
        flat = fmap;
        if (flat->rank() != 2 || flat->cols() != l)
            throw DimensionError("extract_overall: feature shape " + shape_str(fmap->shape) +
                                 " does not match attention " + shape_str(attention->shape));
    }
    auto a = scale(g, sum_cols(g, attention), 1.0 / static_cast<double>(z));  // length l
    auto weighted = matmul(g, flat, reshape(g, a, {l, 1}));                   // c x 1
    return scale(g, reshape(g, weighted, {flat->rows()}), 1.0 / static_cast<double>(l));
}

struct PeForward {
    TensorPtr v;          // length-c representation
    TensorPtr attention;  // A_T, z x l
};

/// Full PE pass: T-1 GRU refinements of the pattern bank, A_T from the final
/// patterns (W^(T+1) is never consumed, so its GRU step is not built), and
/// the pooled representation V over the original (un-squeezed) features.
inline PeForward pe_forward(Graph& g, const TensorPtr& fmap, const PeParams& pe) {
    fmap->require_rank(3, "pe_forward");
    const std::size_t h = fmap->shape[1], w = fmap->shape[2];
    auto fprime = squeeze_project(g, fmap, pe);
    auto ftilde = add_position(g, fprime, h, w, pe);
    TensorPtr patterns = pe.patterns;
    for (std::size_t t = 1; t + 1 <= pe.t_iters; ++t)
        patterns = attention_iteration(g, patterns, ftilde, fprime, pe).next_patterns;
    auto attention = attention_scores(g, patterns, ftilde, pe);
    return {extract_overall(g, fmap, attention), attention};
}

}  // namespace mtunet
