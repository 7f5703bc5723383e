#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtunet/dataset.hpp"
#include "mtunet/graph.hpp"
#include "mtunet/init.hpp"
#include "mtunet/ops.hpp"

namespace mtunet {

/// Conv-4 feature extractor: 3x3 conv -> ReLU (-> 2x2 max-pool on blocks 1-2),
/// widths [32, 64, 64, 64]; a GAP -> linear head is attached only for
/// base-category pretraining. For 32x32 inputs the feature map F is 64x8x8.
struct Backbone {
    struct Block {
        TensorPtr weight;  // co x ci x 3 x 3
        TensorPtr bias;    // co
        bool pool = false;
    };

    std::array<Block, 4> blocks;
    TensorPtr head_weight;  // n_classes x c
    TensorPtr head_bias;    // n_classes

    static constexpr std::size_t kWidths[4] = {32, 64, 64, 64};

    std::size_t channels() const { return kWidths[3]; }

    /// Spatial extent of F for an H x W input: convs are padded to preserve
    /// size, blocks 1-2 each halve it (their 2x2 pools reject partial
    /// windows, so H and W must be multiples of 4).
    static std::pair<std::size_t, std::size_t> grid_shape(std::size_t h, std::size_t w) {
        if (h % 4 != 0 || w % 4 != 0)
            throw DimensionError("backbone: input extent " + std::to_string(h) + "x" +
                                 std::to_string(w) + " must be a multiple of 4");
        return {h / 4, w / 4};
    }

    /// Parameters are drawn in a fixed documented order so initialization is
    /// bit-reproducible: block1..block4 (weight, bias), then head.
    static Backbone init(std::size_t in_channels, std::size_t n_classes, Pcg32& rng) {
        Backbone b;
        std::size_t ci = in_channels;
        for (std::size_t i = 0; i < 4; ++i) {
            b.blocks[i].weight = glorot_uniform(rng, {kWidths[i], ci, 3, 3});
            b.blocks[i].bias = zeros({kWidths[i]});
            b.blocks[i].pool = i < 2;
            ci = kWidths[i];
        }
        b.head_weight = glorot_uniform(rng, {n_classes, ci});
        b.head_bias = zeros({n_classes});
        return b;
    }

    /// F = f_theta(x): the conv stack without the classifier head.
    TensorPtr features(Graph& g, const TensorPtr& image) const {
        image->require_rank(3, "backbone features");
        if (image->shape[0] != blocks[0].weight->shape[1])
            throw DimensionError("backbone: image has " + std::to_string(image->shape[0]) +
                                 " channels, expected " +
                                 std::to_string(blocks[0].weight->shape[1]));
        TensorPtr x = image;
        for (const auto& blk : blocks) {
            x = relu(g, bias_channels(g, conv2d(g, x, blk.weight, 1, 1), blk.bias));
            if (blk.pool) x = pool2d(g, PoolKind::max, x, 2, 2);
        }
        return x;
    }

    /// Global average pool of a feature map -> length-c vector.
    TensorPtr gap(Graph& g, const TensorPtr& fmap) const {
        fmap->require_rank(3, "backbone gap");
        const std::size_t c = fmap->shape[0], l = fmap->shape[1] * fmap->shape[2];
        auto flat = reshape(g, fmap, {c, l});
        return scale(g, sum_rows(g, flat), 1.0 / static_cast<double>(l));
    }

    /// Pretraining classifier: GAP -> linear logits over base categories.
    TensorPtr logits(Graph& g, const TensorPtr& image) const {
        auto v = gap(g, features(g, image));
        auto row = reshape(g, v, {1, v->size()});
        auto out = matmul(g, row, transpose(g, head_weight));
        return add(g, reshape(g, out, {out->cols()}), head_bias);
    }
};

/// Nearest-centroid episodic validation on GAP features: per episode, class
/// centroids of the support features classify queries by smallest Euclidean
/// distance (ties -> lowest class index). Returns mean accuracy over episodes.
inline double nn_validate(const Backbone& backbone, const Dataset& ds, const std::string& split,
                          std::size_t episodes, std::size_t K, std::size_t N, std::size_t M,
                          Pcg32& rng) {
    auto cats = ds.categories(split);
    if (cats.size() < K)
        throw UsageError("nn_validate: split '" + split + "' has " + std::to_string(cats.size()) +
                         " categories, need " + std::to_string(K));
    std::unordered_map<std::size_t, std::vector<double>> feat_cache;
    auto feat = [&](std::size_t id) -> const std::vector<double>& {
        auto it = feat_cache.find(id);
        if (it != feat_cache.end()) return it->second;
        Graph g;
        auto v = backbone.gap(g, backbone.features(g, ds.image(id)));
        return feat_cache.emplace(id, v->data).first->second;
    };

    double acc_sum = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        Episode ep = sample_episode(ds, split, K, N, M, rng);
        const std::size_t c = backbone.channels();
        std::vector<std::vector<double>> centroid(K, std::vector<double>(c, 0.0));
        for (const auto& [id, label] : ep.support) {
            const auto& f = feat(id);
            for (std::size_t i = 0; i < c; ++i) centroid[label][i] += f[i];
        }
        for (auto& ctr : centroid)
            for (auto& v : ctr) v /= static_cast<double>(N);
        std::size_t correct = 0;
        for (const auto& [id, label] : ep.query) {
            const auto& f = feat(id);
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                double d = 0.0;
                for (std::size_t i = 0; i < c; ++i) {
                    const double diff = f[i] - centroid[k][i];
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            correct += (best == label);
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(K * M);
    }
    return acc_sum / static_cast<double>(episodes);
}

}  // namespace mtunet
