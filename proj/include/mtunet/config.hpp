#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mtunet/dataset.hpp"
#include "mtunet/errors.hpp"

namespace mtunet {

/// Overridable run options. Every field is optional; resolve() applies the
/// precedence CLI flag > config file > MTUNET_SEED env (seed only) > built-in
/// stage default.
struct TrainConfig {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> way, shot, query;
    std::optional<std::size_t> epochs, lr_step, episodes, val_episodes, batch;
    std::optional<std::size_t> slots, pe_stride, jobs;
    std::optional<double> lr, lr_factor, lambda, expl_sign;
    std::optional<double> flip_prob, max_rotate, max_translate, max_scale_delta;
    std::optional<std::string> loss, area_norm, pe_cats;
};

/// Fully resolved options for one stage.
struct StageConfig {
    std::uint64_t seed = 42;
    std::size_t way = 5, shot = 1, query = 15;
    std::size_t epochs = 0;
    double lr = 0.0;
    std::size_t lr_step = 1;
    double lr_factor = 10.0;
    std::size_t episodes = 0;  // per-epoch (matcher) or total (eval)
    std::size_t val_episodes = 2000;
    std::size_t batch = 32;
    std::size_t slots = 0;      // 0 = one tenth of the base-category count
    std::size_t pe_stride = 10; // every I-th base category
    std::vector<std::string> pe_cats;  // explicit selection wins over stride
    std::size_t jobs = 1;
    double lambda = 1.0;
    double expl_sign = 1.0;  // e; positive explanations
    std::string loss = "bce";
    std::string area_norm = "zl";
    AugmentConfig aug;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& where) {
    std::size_t used = 0;
    std::uint64_t out = 0;
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected an unsigned integer, got '" + v + "'");
    }
    if (used != v.size() || v[0] == '-')
        throw ConfigError(where + ": expected an unsigned integer, got '" + v + "'");
    return out;
}

inline double parse_double(const std::string& v, const std::string& where) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a number, got '" + v + "'");
    }
    if (used != v.size())
        throw ConfigError(where + ": expected a number, got '" + v + "'");
    return out;
}

inline std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

/// INI-style `key = value` parser with a strict key schema: unknown keys,
/// duplicates, and type mismatches all fail with the line number.
inline TrainConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> seen;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string where = path + ":" + std::to_string(lineno);
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = detail::trim(s.substr(0, eq));
        const std::string value = detail::trim(s.substr(eq + 1));
        if (key.empty() || value.empty()) throw ConfigError(where + ": empty key or value");
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            throw ConfigError(where + ": duplicate key '" + key + "'");
        seen.push_back(key);

        auto u = [&](std::optional<std::size_t>& slot) {
            slot = static_cast<std::size_t>(detail::parse_u64(value, where));
        };
        auto d = [&](std::optional<double>& slot) { slot = detail::parse_double(value, where); };

        if (key == "seed") cfg.seed = detail::parse_u64(value, where);
        else if (key == "way") u(cfg.way);
        else if (key == "shot") u(cfg.shot);
        else if (key == "query") u(cfg.query);
        else if (key == "epochs") u(cfg.epochs);
        else if (key == "lr-step") u(cfg.lr_step);
        else if (key == "episodes") u(cfg.episodes);
        else if (key == "val-episodes") u(cfg.val_episodes);
        else if (key == "batch") u(cfg.batch);
        else if (key == "slots") u(cfg.slots);
        else if (key == "pe-stride") u(cfg.pe_stride);
        else if (key == "jobs") u(cfg.jobs);
        else if (key == "lr") d(cfg.lr);
        else if (key == "lr-factor") d(cfg.lr_factor);
        else if (key == "lambda") d(cfg.lambda);
        else if (key == "e") d(cfg.expl_sign);
        else if (key == "flip-prob") d(cfg.flip_prob);
        else if (key == "max-rotate") d(cfg.max_rotate);
        else if (key == "max-translate") d(cfg.max_translate);
        else if (key == "max-scale-delta") d(cfg.max_scale_delta);
        else if (key == "loss") {
            if (value != "bce" && value != "softmax_ce")
                throw ConfigError(where + ": loss must be bce or softmax_ce");
            cfg.loss = value;
        } else if (key == "area-norm") {
            if (value != "zl" && value != "l")
                throw ConfigError(where + ": area-norm must be zl or l");
            cfg.area_norm = value;
        } else if (key == "pe-cats") {
            cfg.pe_cats = value;
        } else {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
    return cfg;
}

/// Merges two option sets; `high` wins wherever it is set.
inline TrainConfig merge_config(const TrainConfig& high, const TrainConfig& low) {
    TrainConfig out = low;
    auto pick = [](auto& dst, const auto& src) {
        if (src.has_value()) dst = src;
    };
    pick(out.seed, high.seed);
    pick(out.way, high.way);
    pick(out.shot, high.shot);
    pick(out.query, high.query);
    pick(out.epochs, high.epochs);
    pick(out.lr_step, high.lr_step);
    pick(out.episodes, high.episodes);
    pick(out.val_episodes, high.val_episodes);
    pick(out.batch, high.batch);
    pick(out.slots, high.slots);
    pick(out.pe_stride, high.pe_stride);
    pick(out.jobs, high.jobs);
    pick(out.lr, high.lr);
    pick(out.lr_factor, high.lr_factor);
    pick(out.lambda, high.lambda);
    pick(out.expl_sign, high.expl_sign);
    pick(out.flip_prob, high.flip_prob);
    pick(out.max_rotate, high.max_rotate);
    pick(out.max_translate, high.max_translate);
    pick(out.max_scale_delta, high.max_scale_delta);
    pick(out.loss, high.loss);
    pick(out.area_norm, high.area_norm);
    pick(out.pe_cats, high.pe_cats);
    return out;
}

/// Fills stage defaults: backbone 50 epochs / lr 1e-3 / step 20; PE 60 /
/// 1e-4 / 40; matcher 20 epochs of 1000 episodes / lr 1e-3 / step 10; eval
/// 10000 episodes. Factor 10 everywhere.
inline StageConfig resolve_config(const TrainConfig& merged, const std::string& stage,
                                  std::optional<std::uint64_t> env_seed) {
    StageConfig r;
    if (merged.seed)
        r.seed = *merged.seed;
    else if (env_seed)
        r.seed = *env_seed;

    if (stage == "backbone") {
        r.epochs = 50;
        r.lr = 1e-3;
        r.lr_step = 20;
    } else if (stage == "pe") {
        r.epochs = 60;
        r.lr = 1e-4;
        r.lr_step = 40;
    } else if (stage == "matcher") {
        r.epochs = 20;
        r.lr = 1e-3;
        r.lr_step = 10;
        r.episodes = 1000;
    } else if (stage == "eval") {
        r.episodes = 10000;
    }

    auto take = [](auto& dst, const auto& src) {
        if (src.has_value()) dst = static_cast<std::remove_reference_t<decltype(dst)>>(*src);
    };
    take(r.way, merged.way);
    take(r.shot, merged.shot);
    take(r.query, merged.query);
    take(r.epochs, merged.epochs);
    take(r.lr, merged.lr);
    take(r.lr_step, merged.lr_step);
    take(r.lr_factor, merged.lr_factor);
    take(r.episodes, merged.episodes);
    take(r.val_episodes, merged.val_episodes);
    take(r.batch, merged.batch);
    take(r.slots, merged.slots);
    take(r.pe_stride, merged.pe_stride);
    take(r.jobs, merged.jobs);
    take(r.lambda, merged.lambda);
    take(r.expl_sign, merged.expl_sign);
    if (merged.loss) r.loss = *merged.loss;
    if (merged.area_norm) r.area_norm = *merged.area_norm;
    if (merged.pe_cats) r.pe_cats = detail::split_commas(*merged.pe_cats);
    take(r.aug.flip_prob, merged.flip_prob);
    take(r.aug.max_rotate_deg, merged.max_rotate);
    take(r.aug.max_translate, merged.max_translate);
    take(r.aug.max_scale_delta, merged.max_scale_delta);

    if (r.way < 2) throw UsageError("way must be >= 2");
    if (r.shot < 1 || r.query < 1) throw UsageError("shot and query must be >= 1");
    if (r.lr_step < 1) throw UsageError("lr-step must be >= 1");
    if (r.lr_factor <= 1.0) throw UsageError("lr-factor must be > 1");
    return r;
}

}  // namespace mtunet
