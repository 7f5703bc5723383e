#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtunet/backbone.hpp"
#include "mtunet/matcher.hpp"
#include "mtunet/pattern_extractor.hpp"
#include "mtunet/serialize.hpp"

namespace mtunet {

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t n_base = 2;   // classifier-head width (base category count)
    std::size_t slots = 1;    // z
    std::size_t dim = 64;     // d
    std::size_t t_iters = 3;  // T
};

/// Backbone + PE + PM with canonical dotted parameter names. Component
/// initializations draw from separate rng streams of the same seed, so a
/// stage can re-create exactly the tensors an earlier stage would have.
struct Model {
    ModelConfig cfg;
    Backbone backbone;
    PeParams pe;
    MatcherParams pm;

    static Model init(const ModelConfig& cfg, std::uint64_t seed) {
        Model m;
        m.cfg = cfg;
        Pcg32 rb(seed, 11), rp(seed, 22), rm(seed, 33);
        m.backbone = Backbone::init(cfg.in_channels, cfg.n_base, rb);
        m.pe = PeParams::init(m.backbone.channels(), cfg.dim, cfg.slots, cfg.t_iters, rp);
        m.pm = MatcherParams::init(m.backbone.channels(), rm);
        return m;
    }

    /// Full state in canonical order. pe.t_iters rides along as a 1-element
    /// tensor so checkpoints are self-describing.
    StateDict state() const {
        StateDict s;
        for (std::size_t i = 0; i < 4; ++i) {
            const std::string b = "backbone.block" + std::to_string(i + 1) + ".conv.";
            s.emplace_back(b + "weight", backbone.blocks[i].weight);
            s.emplace_back(b + "bias", backbone.blocks[i].bias);
        }
        s.emplace_back("backbone.head.weight", backbone.head_weight);
        s.emplace_back("backbone.head.bias", backbone.head_bias);

        s.emplace_back("pe.squeeze.weight", pe.squeeze_weight);
        s.emplace_back("pe.squeeze.bias", pe.squeeze_bias);
        s.emplace_back("pe.pos.weight", pe.pos_weight);
        s.emplace_back("pe.pos.bias", pe.pos_bias);
        s.emplace_back("pe.patterns", pe.patterns);
        auto mlp = [&s](const std::string& prefix, const PeMlp& m) {
            s.emplace_back(prefix + ".fc1.weight", m.w1);
            s.emplace_back(prefix + ".fc1.bias", m.b1);
            s.emplace_back(prefix + ".fc2.weight", m.w2);
            s.emplace_back(prefix + ".fc2.bias", m.b2);
            s.emplace_back(prefix + ".fc3.weight", m.w3);
            s.emplace_back(prefix + ".fc3.bias", m.b3);
        };
        mlp("pe.gq", pe.gq);
        mlp("pe.gk", pe.gk);
        s.emplace_back("pe.gru.w_r", pe.gru.w_r);
        s.emplace_back("pe.gru.u_r", pe.gru.u_r);
        s.emplace_back("pe.gru.b_r", pe.gru.b_r);
        s.emplace_back("pe.gru.w_u", pe.gru.w_u);
        s.emplace_back("pe.gru.u_u", pe.gru.u_u);
        s.emplace_back("pe.gru.b_u", pe.gru.b_u);
        s.emplace_back("pe.gru.w_h", pe.gru.w_h);
        s.emplace_back("pe.gru.u_h", pe.gru.u_h);
        s.emplace_back("pe.gru.b_h", pe.gru.b_h);
        s.emplace_back("pe.t_iters",
                       Tensor::make({1}, std::vector<double>{double(pe.t_iters)}));

        s.emplace_back("pm.fc1.weight", pm.fc1_weight);
        s.emplace_back("pm.fc1.bias", pm.fc1_bias);
        s.emplace_back("pm.fc2.weight", pm.fc2_weight);
        s.emplace_back("pm.fc2.bias", pm.fc2_bias);
        s.emplace_back("pm.fc3.weight", pm.fc3_weight);
        s.emplace_back("pm.fc3.bias", pm.fc3_bias);
        return s;
    }

    /// Copies checkpoint entries into the matching model tensors. Every entry
    /// must name a known tensor with the right shape (strict mode rejects
    /// unknowns; non-strict skips them). The checkpoint may cover a subset of
    /// the model (stage checkpoints grow as stages complete).
    void load(const StateDict& incoming, bool strict = true) {
        std::map<std::string, TensorPtr> mine;
        for (auto& [name, t] : state()) mine.emplace(name, t);
        for (const auto& [name, t] : incoming) {
            if (name == "pe.t_iters") {
                const double v = t->data.at(0);
                if (v < 1.0 || v != std::floor(v))
                    throw IoError("checkpoint: pe.t_iters must be a positive integer, got " +
                                  std::to_string(v));
                pe.t_iters = static_cast<std::size_t>(v);
                continue;
            }
            auto it = mine.find(name);
            if (it == mine.end()) {
                if (strict) throw IoError("checkpoint: unknown entry name '" + name + "'");
                continue;
            }
            if (it->second->shape != t->shape)
                throw IoError("checkpoint: shape conflict for '" + name + "': model " +
                              shape_str(it->second->shape) + " vs file " + shape_str(t->shape));
            it->second->data = t->data;
        }
    }

    /// Named parameters under a prefix, for optimizer registration; the
    /// pe.t_iters marker is metadata, not a parameter.
    std::vector<std::pair<std::string, TensorPtr>> named_params(const std::string& prefix) const {
        std::vector<std::pair<std::string, TensorPtr>> out;
        for (auto& [name, t] : state())
            if (name.rfind(prefix, 0) == 0 && name != "pe.t_iters") out.emplace_back(name, t);
        return out;
    }

    /// Drops requires_grad everywhere; stages then register only their own
    /// parameters, which freezes everything else.
    void clear_grad_flags() {
        for (auto& [name, t] : state()) t->set_requires_grad(false);
    }

    /// Joint representation: F = backbone(x), (V, A_T) = PE(F).
    PeForward repr(Graph& g, const TensorPtr& image) const {
        return pe_forward(g, backbone.features(g, image), pe);
    }
};

/// Keeps entries whose name starts with any of the given prefixes.
inline StateDict filter_state(const StateDict& s, const std::vector<std::string>& prefixes) {
    StateDict out;
    for (const auto& e : s)
        for (const auto& p : prefixes)
            if (e.first.rfind(p, 0) == 0) {
                out.push_back(e);
                break;
            }
    return out;
}

inline bool state_has_prefix(const StateDict& s, const std::string& prefix) {
    for (const auto& e : s)
        if (e.first.rfind(prefix, 0) == 0) return true;
    return false;
}

/// Reconstructs the architecture hyperparameters a checkpoint was written
/// with, so a fresh Model can be shaped before load().
inline ModelConfig infer_config(const StateDict& s, const ModelConfig& defaults = {}) {
    ModelConfig cfg = defaults;
    for (const auto& [name, t] : s) {
        if (name == "backbone.block1.conv.weight") cfg.in_channels = t->shape[1];
        if (name == "backbone.head.weight") cfg.n_base = t->shape[0];
        if (name == "pe.patterns") {
            cfg.slots = t->shape[0];
            cfg.dim = t->shape[1];
        }
        if (name == "pe.t_iters") cfg.t_iters = static_cast<std::size_t>(t->data.at(0));
    }
    return cfg;
}

}  // namespace mtunet
