#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mtunet/dataset.hpp"
#include "mtunet/image_io.hpp"
#include "mtunet/model.hpp"

namespace mtunet {

/// One attention map, ready for export: the source row, the upsampled
/// [0,1]-normalized map, and a label ("pattern_3" / "overall").
struct Heatmap {
    TensorPtr row;   // length-l attention row
    TensorPtr map;   // H x W, values in [0,1]
    std::string label;
};

/// Pattern-averaged spatial attention: the arithmetic mean across the z
/// pattern rows of A_T, one weight per feature-map cell.
inline TensorPtr overall_attention(const TensorPtr& attention) {
    attention->require_rank(2, "overall_attention");
    const std::size_t z = attention->rows(), l = attention->cols();
    auto out = Tensor::make({l});
    for (std::size_t j = 0; j < l; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < z; ++k) s += attention->at(k, j);
        out->data[j] = s / static_cast<double>(z);
    }
    return out;
}

/// Reshape a length-(h*w) attention row to its h x w grid, min-max normalize
/// (a constant row maps to 0.5 everywhere), and bilinearly upsample to H x W
/// with corner-aligned sampling. `range` overrides the min/max pair, letting
/// a caller normalize several maps of one image against a shared scale.
inline Heatmap render_heatmap(const TensorPtr& row, std::size_t h, std::size_t w, std::size_t H,
                              std::size_t W, std::string label = "overall",
                              std::optional<std::pair<double, double>> range = std::nullopt) {
    row->require_rank(1, "render_heatmap");
    if (row->size() != h * w)
        throw DimensionError("render_heatmap: row length " + std::to_string(row->size()) +
                             " does not match grid " + std::to_string(h) + "x" +
                             std::to_string(w));
    if (H < h || W < w)
        throw DimensionError("render_heatmap: target must be at least the grid size");

    double lo, hi;
    if (range) {
        lo = range->first;
        hi = range->second;
    } else {
        lo = hi = row->data[0];
        for (double v : row->data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    std::vector<double> grid(h * w, 0.5);
    if (hi > lo)
        for (std::size_t i = 0; i < h * w; ++i)
            grid[i] = std::clamp((row->data[i] - lo) / (hi - lo), 0.0, 1.0);

    auto map = Tensor::make({H, W});
    for (std::size_t r = 0; r < H; ++r) {
        const double sy = (H > 1 && h > 1)
                              ? static_cast<double>(r) * static_cast<double>(h - 1) /
                                    static_cast<double>(H - 1)
                              : 0.0;
        const std::size_t y0 = static_cast<std::size_t>(sy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t c = 0; c < W; ++c) {
            const double sx = (W > 1 && w > 1)
                                  ? static_cast<double>(c) * static_cast<double>(w - 1) /
                                        static_cast<double>(W - 1)
                                  : 0.0;
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - static_cast<double>(x0);
            const double top = grid[y0 * w + x0] * (1 - fx) + grid[y0 * w + x1] * fx;
            const double bot = grid[y1 * w + x0] * (1 - fx) + grid[y1 * w + x1] * fx;
            map->data[r * W + c] = top * (1 - fy) + bot * fy;
        }
    }
    return Heatmap{row, map, std::move(label)};
}

/// Blend a heatmap over the image: out = (1-alpha)*grayscale + alpha*colored,
/// where the colormap runs linearly from blue (0) to red (1); clamped to
/// [0,1]. Grayscale is the per-pixel channel mean.
inline TensorPtr overlay(const TensorPtr& image, const Heatmap& heat, double alpha = 0.5) {
    image->require_rank(3, "overlay");
    heat.map->require_rank(2, "overlay");
    const std::size_t H = image->shape[1], W = image->shape[2];
    if (image->shape[0] != 3 || heat.map->shape[0] != H || heat.map->shape[1] != W)
        throw DimensionError("overlay: image " + shape_str(image->shape) +
                             " and heatmap " + shape_str(heat.map->shape) + " do not agree");
    auto out = Tensor::make(image->shape);
    const std::size_t hw = H * W;
    for (std::size_t i = 0; i < hw; ++i) {
        const double gray =
            (image->data[i] + image->data[hw + i] + image->data[2 * hw + i]) / 3.0;
        const double v = heat.map->data[i];
        const double base = (1.0 - alpha) * gray;
        out->data[i] = std::clamp(base + alpha * v, 0.0, 1.0);              // red
        out->data[hw + i] = std::clamp(base, 0.0, 1.0);                     // green
        out->data[2 * hw + i] = std::clamp(base + alpha * (1.0 - v), 0.0, 1.0);  // blue
    }
    return out;
}

/// K x K pairwise matching scores in percent. Row = support category,
/// column = query category; scores are match_score * 100, nothing else.
struct MatchMatrix {
    std::vector<std::string> categories;       // index = label
    std::vector<std::vector<double>> scores;   // [support][query], percent
    std::vector<std::size_t> support_ids;      // first support image per category
    std::vector<std::size_t> query_ids;        // first query image per category
};

inline MatchMatrix matching_matrix(const Model& model, const Dataset& ds, const Episode& ep) {
    const std::size_t K = ep.categories.size();
    MatchMatrix m;
    m.categories = ep.categories;
    m.support_ids.assign(K, 0);
    m.query_ids.assign(K, 0);

    auto image_v = [&](std::size_t id) {
        Graph g;
        return model.repr(g, ds.image(id)).v;
    };

    std::vector<std::vector<TensorPtr>> sup(K);
    std::vector<bool> seen_s(K, false), seen_q(K, false);
    for (const auto& [id, label] : ep.support) {
        if (!seen_s[label]) {
            seen_s[label] = true;
            m.support_ids[label] = id;
        }
        sup[label].push_back(image_v(id));
    }
    std::vector<TensorPtr> vq(K);
    for (const auto& [id, label] : ep.query) {
        if (seen_q[label]) continue;
        seen_q[label] = true;
        m.query_ids[label] = id;
        vq[label] = image_v(id);
    }
    for (std::size_t k = 0; k < K; ++k)
        if (!seen_q[k]) throw UsageError("matching_matrix: category without a query image");

    Graph g;
    std::vector<TensorPtr> vbar(K);
    for (std::size_t k = 0; k < K; ++k) vbar[k] = average_supports(g, sup[k]);

    m.scores.assign(K, std::vector<double>(K, 0.0));
    for (std::size_t k = 0; k < K; ++k)          // support category
        for (std::size_t q = 0; q < K; ++q)      // query category
            m.scores[k][q] = 100.0 * match_score(g, vq[q], vbar[k], model.pm)->data[0];
    return m;
}

namespace detail {

inline std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

/// All per-image explanation files: one overlay per pattern row plus the
/// overall-attention overlay, upsampled to the image's own size.
inline void export_image_maps(const Model& model, const TensorPtr& image,
                              const std::string& dir, const std::string& stem,
                              bool global_norm, double alpha) {
    Graph g;
    auto att = model.repr(g, image).attention;
    const std::size_t z = att->rows(), l = att->cols();
    const auto grid = model.backbone.grid_shape(image->shape[1], image->shape[2]);
    if (grid.first * grid.second != l)
        throw DimensionError("export: feature grid does not match attention length");
    const std::size_t H = image->shape[1], W = image->shape[2];

    std::optional<std::pair<double, double>> range;
    if (global_norm) {
        double lo = att->data[0], hi = att->data[0];
        for (double v : att->data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        range = std::make_pair(lo, hi);
    }
    for (std::size_t i = 0; i < z; ++i) {
        auto row = Tensor::make({l});
        for (std::size_t j = 0; j < l; ++j) row->data[j] = att->at(i, j);
        auto heat = render_heatmap(row, grid.first, grid.second, H, W,
                                   "pattern_" + std::to_string(i + 1), range);
        write_ppm(dir + "/" + stem + "_pattern_" + std::to_string(i + 1) + ".ppm",
                  *overlay(image, heat, alpha));
    }
    auto heat = render_heatmap(overall_attention(att), grid.first, grid.second, H, W, "overall",
                               range);
    write_ppm(dir + "/" + stem + "_overall.ppm", *overlay(image, heat, alpha));
}

}  // namespace detail

/// Write the full explanation bundle for one episode into `out_dir`:
/// `support_<k>_pattern_<i>.ppm`, `support_<k>_overall.ppm`, the same for
/// queries, and `matrix.csv` (header row of category names; one row per
/// support category). Indices are 1-based; k orders as episode categories.
inline MatchMatrix export_explanation(const Model& model, const Dataset& ds, const Episode& ep,
                                      const std::string& out_dir, bool global_norm = false,
                                      double alpha = 0.5) {
    std::filesystem::create_directories(out_dir);
    MatchMatrix m = matching_matrix(model, ds, ep);
    const std::size_t K = m.categories.size();
    for (std::size_t k = 0; k < K; ++k) {
        detail::export_image_maps(model, ds.image(m.support_ids[k]), out_dir,
                                  "support_" + std::to_string(k + 1), global_norm, alpha);
        detail::export_image_maps(model, ds.image(m.query_ids[k]), out_dir,
                                  "query_" + std::to_string(k + 1), global_norm, alpha);
    }
    std::ofstream os(out_dir + "/matrix.csv", std::ios::binary);
    if (!os) throw IoError("cannot write " + out_dir + "/matrix.csv");
    os << "support";
    for (const auto& c : m.categories) os << "," << c;
    os << "\n";
    for (std::size_t k = 0; k < K; ++k) {
        os << m.categories[k];
        for (std::size_t q = 0; q < K; ++q) os << "," << detail::format_percent(m.scores[k][q]);
        os << "\n";
    }
    return m;
}

}  // namespace mtunet
