#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtunet/errors.hpp"
#include "mtunet/rng.hpp"
#include "mtunet/serialize.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

struct ImageRecord {
    std::string path;      // relative to the dataset root
    std::string category;  // category name
    std::string split;     // base | val | test
};

/// On-disk dataset: index.csv (`path,category,split`) plus BTSR image files.
/// Categories are partitioned across splits; images load lazily, u8 payloads
/// scale to [0,1]. Every read is recorded in a per-split access log so tests
/// can audit which splits a training stage touched.
class Dataset {
  public:
    Dataset(std::string root, std::vector<ImageRecord> records)
        : root_(std::move(root)), records_(std::move(records)) {
        std::map<std::string, std::string> category_split;
        for (std::size_t id = 0; id < records_.size(); ++id) {
            const auto& r = records_[id];
            auto [it, fresh] = category_split.emplace(r.category, r.split);
            if (!fresh && it->second != r.split)
                throw IoError("dataset: category '" + r.category + "' appears in splits '" +
                              it->second + "' and '" + r.split + "'");
            by_category_[r.category].push_back(id);
        }
        for (const auto& [cat, split] : category_split) split_categories_[split].push_back(cat);
        for (auto& [split, cats] : split_categories_) std::sort(cats.begin(), cats.end());
    }

    const std::string& root() const { return root_; }
    std::size_t size() const { return records_.size(); }
    const ImageRecord& record(std::size_t id) const { return records_.at(id); }

    /// Category names of a split, sorted; empty when the split has none.
    std::vector<std::string> categories(const std::string& split) const {
        auto it = split_categories_.find(split);
        return it == split_categories_.end() ? std::vector<std::string>{} : it->second;
    }

    /// Image ids of a category in index order.
    const std::vector<std::size_t>& ids_of(const std::string& category) const {
        auto it = by_category_.find(category);
        if (it == by_category_.end())
            throw UsageError("dataset: unknown category '" + category + "'");
        return it->second;
    }

    /// Loads an image as 3xHxW floats in [0,1], recording the access.
    TensorPtr image(std::size_t id) const {
        const ImageRecord& r = record(id);
        {
            std::lock_guard<std::mutex> lock(mu_);
            access_log_[r.split].insert(id);
            auto it = cache_.find(id);
            if (it != cache_.end()) return it->second;
        }
        const std::string full = (std::filesystem::path(root_) / r.path).string();
        Btsr raw = read_btsr_file(full);
        if (raw.shape.size() != 3 || raw.shape[0] != 3)
            throw IoError(full + ": expected a 3xHxW image, got " + shape_str(raw.shape));
        TensorPtr img;
        if (raw.dtype == Dtype::u8) {
            std::vector<double> px(raw.u8.size());
            for (std::size_t i = 0; i < px.size(); ++i) px[i] = raw.u8[i] / 255.0;
            img = Tensor::make(raw.shape, std::move(px));
        } else {
            for (double v : raw.f64)
                if (v < 0.0 || v > 1.0)
                    throw IoError(full + ": f64 image values must lie in [0,1]");
            img = raw.to_tensor();
        }
        std::lock_guard<std::mutex> lock(mu_);
        cache_.emplace(id, img);
        return img;
    }

    const std::map<std::string, std::set<std::size_t>>& access_log() const { return access_log_; }
    void clear_access_log() {
        std::lock_guard<std::mutex> lock(mu_);
        access_log_.clear();
    }

  private:
    std::string root_;
    std::vector<ImageRecord> records_;
    std::map<std::string, std::vector<std::size_t>> by_category_;
    std::map<std::string, std::vector<std::string>> split_categories_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::set<std::size_t>> access_log_;
    mutable std::unordered_map<std::size_t, TensorPtr> cache_;
};

/// Parses `<root>/index.csv` and validates the referenced files exist.
inline Dataset load_dataset(const std::string& root) {
    const std::string index = (std::filesystem::path(root) / "index.csv").string();
    std::ifstream is(index);
    if (!is) throw IoError("cannot open: " + index);
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(is, line)) throw IoError(index + ": empty file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "path,category,split")
        throw IoError(index + ":1: expected header 'path,category,split', got '" + line + "'");
    std::vector<ImageRecord> records;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos ||
            line.find(',', c2 + 1) != std::string::npos)
            throw IoError(index + ":" + std::to_string(lineno) + ": expected 3 fields");
        ImageRecord r{line.substr(0, c1), line.substr(c1 + 1, c2 - c1 - 1), line.substr(c2 + 1)};
        if (r.path.empty() || r.category.empty())
            throw IoError(index + ":" + std::to_string(lineno) + ": empty field");
        if (r.split != "base" && r.split != "val" && r.split != "test")
            throw IoError(index + ":" + std::to_string(lineno) + ": unknown split '" + r.split +
                          "'");
        if (!std::filesystem::exists(std::filesystem::path(root) / r.path))
            throw IoError(index + ":" + std::to_string(lineno) + ": missing file '" + r.path +
                          "'");
        records.push_back(std::move(r));
    }
    if (records.empty()) throw IoError(index + ": no image rows");
    return Dataset(root, std::move(records));
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct Episode {
    std::vector<std::string> categories;                     // K names; index = label
    std::vector<std::pair<std::size_t, std::size_t>> support;  // (image id, label)
    std::vector<std::pair<std::size_t, std::size_t>> query;    // (image id, label)
    std::uint64_t seed = 0;
};

/// K-way N-shot sampling: K categories without replacement, then N+M distinct
/// images per category (first N to support). All randomness comes from `rng`.
inline Episode sample_episode(const Dataset& ds, const std::string& split, std::size_t K,
                              std::size_t N, std::size_t M, Pcg32& rng,
                              std::uint64_t seed_tag = 0) {
    if (K < 1 || N < 1 || M < 1) throw UsageError("sample_episode: K, N, M must be positive");
    auto cats = ds.categories(split);
    if (cats.size() < K)
        throw UsageError("sample_episode: split '" + split + "' has " +
                         std::to_string(cats.size()) + " categories, need " + std::to_string(K));
    // partial Fisher-Yates: draw K categories without replacement
    for (std::size_t i = 0; i < K; ++i) {
        std::size_t j = i + rng.next_below(static_cast<std::uint32_t>(cats.size() - i));
        std::swap(cats[i], cats[j]);
    }
    Episode ep;
    ep.seed = seed_tag;
    ep.categories.assign(cats.begin(), cats.begin() + static_cast<std::ptrdiff_t>(K));
    for (std::size_t k = 0; k < K; ++k) {
        auto ids = ds.ids_of(ep.categories[k]);
        if (ids.size() < N + M)
            throw UsageError("sample_episode: category '" + ep.categories[k] + "' has " +
                             std::to_string(ids.size()) + " images, need " +
                             std::to_string(N + M));
        for (std::size_t i = 0; i < N + M; ++i) {
            std::size_t j = i + rng.next_below(static_cast<std::uint32_t>(ids.size() - i));
            std::swap(ids[i], ids[j]);
        }
        for (std::size_t i = 0; i < N; ++i) ep.support.emplace_back(ids[i], k);
        for (std::size_t i = 0; i < M; ++i) ep.query.emplace_back(ids[N + i], k);
    }
    return ep;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double flip_prob = 0.5;
    double max_rotate_deg = 10.0;
    double max_translate = 0.1;    // fraction of each extent
    double max_scale_delta = 0.1;  // scale drawn from [1-d, 1+d]
};

/// Random horizontal flip plus a small affine warp (rotation, translation,
/// scale) with bilinear resampling and edge-clamp padding. Exactly five rng
/// draws are consumed regardless of configuration, so seed bookkeeping does
/// not depend on the config. Training-time only; never applied at eval.
inline TensorPtr augment(const Tensor& img, Pcg32& rng, const AugmentConfig& cfg = {}) {
    img.require_rank(3, "augment");
    const std::size_t c = img.shape[0], h = img.shape[1], w = img.shape[2];
    const double uf = rng.next_double();
    auto symmetric = [&](double range) { return range * (2.0 * rng.next_double() - 1.0); };
    const double theta = symmetric(cfg.max_rotate_deg) * (std::acos(-1.0) / 180.0);
    const double tx = symmetric(cfg.max_translate) * static_cast<double>(w);
    const double ty = symmetric(cfg.max_translate) * static_cast<double>(h);
    const double sc = 1.0 + symmetric(cfg.max_scale_delta);
    const bool flip = uf < cfg.flip_prob;

    if (!flip && theta == 0.0 && tx == 0.0 && ty == 0.0 && sc == 1.0)
        return Tensor::make(img.shape, img.data);

    auto sample = [&](std::size_t ch, double sy, double sx) {
        // bilinear with edge clamp
        double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
        double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
        std::size_t y0 = static_cast<std::size_t>(fy);
        std::size_t x0 = static_cast<std::size_t>(fx);
        std::size_t y1 = std::min(y0 + 1, h - 1);
        std::size_t x1 = std::min(x0 + 1, w - 1);
        double dy = fy - static_cast<double>(y0), dx = fx - static_cast<double>(x0);
        auto px = [&](std::size_t y, std::size_t x) {
            double v = img.data[(ch * h + y) * w + x];
            return v;
        };
        return (1 - dy) * ((1 - dx) * px(y0, x0) + dx * px(y0, x1)) +
               dy * ((1 - dx) * px(y1, x0) + dx * px(y1, x1));
    };

    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    auto out = Tensor::make(img.shape);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                // invert output = R(theta)*S(sc)*(p - c) + c + t
                const double qy = static_cast<double>(y) - cy - ty;
                const double qx = static_cast<double>(x) - cx - tx;
                double sy = (cos_t * qy - sin_t * qx) / sc + cy;
                double sx = (sin_t * qy + cos_t * qx) / sc + cx;
                if (flip) sx = static_cast<double>(w - 1) - sx;
                out->data[(ch * h + y) * w + x] =
                    std::clamp(sample(ch, sy, sx), 0.0, 1.0);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generator
// ---------------------------------------------------------------------------

namespace detail {

inline void hue_to_rgb(std::size_t hue_idx, double rgb[3]) {
    // 8 evenly spaced hues at full saturation/value
    const double hdeg = 45.0 * static_cast<double>(hue_idx);
    const double hp = hdeg / 60.0;
    const double f = hp - std::floor(hp / 2.0) * 2.0;  // hp mod 2
    const double xcomp = 1.0 - std::abs(f - 1.0);
    double r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = 1; g = xcomp;
    } else if (hp < 2) {
        r = xcomp; g = 1;
    } else if (hp < 3) {
        g = 1; b = xcomp;
    } else if (hp < 4) {
        g = xcomp; b = 1;
    } else if (hp < 5) {
        r = xcomp; b = 1;
    } else {
        r = 1; b = xcomp;
    }
    rgb[0] = r;
    rgb[1] = g;
    rgb[2] = b;
}

inline bool inside_motif(std::size_t shape_idx, double dx, double dy, double r) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    switch (shape_idx) {
        case 0:  // disk
            return dx * dx + dy * dy <= r * r;
        case 1:  // square
            return std::max(ax, ay) <= 0.9 * r;
        case 2:  // triangle, apex up
            return dy >= -0.9 * r && dy <= 0.9 * r && ax <= 0.5 * (dy + 0.9 * r);
        case 3:  // cross
            return (ax <= 0.3 * r && ay <= 0.9 * r) || (ay <= 0.3 * r && ax <= 0.9 * r);
        default: {  // ring
            const double d2 = dx * dx + dy * dy;
            return d2 >= 0.55 * r * 0.55 * r && d2 <= 0.9 * r * 0.9 * r;
        }
    }
}

}  // namespace detail

inline const char* kMotifNames[5] = {"disk", "square", "triangle", "cross", "ring"};

/// Writes a synthetic dataset under `root`: categories are unique
/// (shape, hue, stripe-frequency) triples; each image drops the category
/// motif at a random position/scale onto low-contrast structured noise.
/// Deterministic in `seed`, byte-for-byte.
inline void generate_synthetic(const std::string& root, std::size_t n_base, std::size_t n_val,
                               std::size_t n_test, std::size_t per_class, std::size_t size,
                               std::uint64_t seed) {
    if (n_base < 1 || n_val < 1 || n_test < 1 || per_class < 1)
        throw UsageError("generate_synthetic: counts must be >= 1");
    if (size < 16) throw UsageError("generate_synthetic: size must be >= 16");
    const std::size_t total = n_base + n_val + n_test;
    const std::size_t kCombos = 5 * 8 * 5;  // shapes x hues x frequencies
    if (total > kCombos)
        throw UsageError("generate_synthetic: " + std::to_string(total) +
                         " categories requested, only " + std::to_string(kCombos) +
                         " distinct (shape, hue, frequency) triples exist");

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "images");
    std::ostringstream index;
    index << "path,category,split\n";

    for (std::size_t cat = 0; cat < total; ++cat) {
        const std::size_t combo = (cat * 37) % kCombos;  // 37 coprime to 200: unique triples
        const std::size_t shape_idx = combo % 5;
        const std::size_t hue_idx = (combo / 5) % 8;
        const std::size_t freq_idx = (combo / 40) % 5;
        double rgb[3];
        detail::hue_to_rgb(hue_idx, rgb);
        const std::string name = std::string(kMotifNames[shape_idx]) + "_h" +
                                 std::to_string(hue_idx) + "_f" + std::to_string(freq_idx);
        const std::string split = cat < n_base ? "base" : (cat < n_base + n_val ? "val" : "test");

        for (std::size_t i = 0; i < per_class; ++i) {
            Pcg32 rng(mix_seed(seed, cat * per_class + i), 7777);
            const double s = static_cast<double>(size);
            // background: a sinusoidal grating plus pixel noise
            const double fx = 1.0 + static_cast<double>(rng.next_below(3));
            const double fy = 1.0 + static_cast<double>(rng.next_below(3));
            const double phase = 2.0 * std::acos(-1.0) * rng.next_double();
            const double tint[3] = {0.06 * (rng.next_double() - 0.5),
                                    0.06 * (rng.next_double() - 0.5),
                                    0.06 * (rng.next_double() - 0.5)};
            // motif placement
            const double cxp = (0.3 + 0.4 * rng.next_double()) * (s - 1.0);
            const double cyp = (0.3 + 0.4 * rng.next_double()) * (s - 1.0);
            const double radius = (0.2 + 0.15 * rng.next_double()) * s;

            std::vector<std::uint8_t> px(3 * size * size);
            const double two_pi = 2.0 * std::acos(-1.0);
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double noise = 0.04 * (2.0 * rng.next_double() - 1.0);
                    const double grating =
                        0.35 + 0.1 * std::sin(two_pi * (fx * static_cast<double>(x) +
                                                        fy * static_cast<double>(y)) /
                                                  s +
                                              phase);
                    const double dx = static_cast<double>(x) - cxp;
                    const double dy = static_cast<double>(y) - cyp;
                    double val[3];
                    if (detail::inside_motif(shape_idx, dx, dy, radius)) {
                        const double stripe =
                            0.75 + 0.25 * std::sin(two_pi * (static_cast<double>(freq_idx) + 1.0) *
                                                   dx / (2.0 * radius));
                        for (int ch = 0; ch < 3; ++ch) val[ch] = rgb[ch] * stripe;
                    } else {
                        for (int ch = 0; ch < 3; ++ch) val[ch] = grating + tint[ch] + noise;
                    }
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        px[(ch * size + y) * size + x] = static_cast<std::uint8_t>(
                            std::lround(255.0 * std::clamp(val[ch], 0.0, 1.0)));
                }
            const std::string rel = "images/" + name + "_" + std::to_string(i) + ".btsr";
            write_btsr_u8_file((fs::path(root) / rel).string(), {3, size, size}, px);
            index << rel << ',' << name << ',' << split << '\n';
        }
    }
    std::ofstream os((fs::path(root) / "index.csv").string(), std::ios::binary);
    if (!os) throw IoError("cannot write index.csv under " + root);
    os << index.str();
}

}  // namespace mtunet
