#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "mtunet/config.hpp"
#include "mtunet/dataset.hpp"
#include "mtunet/evaluate.hpp"
#include "mtunet/model.hpp"
#include "mtunet/optimizer.hpp"

namespace mtunet {

/// Step decay: lr = base / factor^floor(epoch / step).
inline double lr_schedule(std::size_t epoch, double base_lr, std::size_t step, double factor) {
    if (step < 1) throw UsageError("lr_schedule: step must be >= 1");
    if (factor <= 1.0) throw UsageError("lr_schedule: factor must be > 1");
    return base_lr / std::pow(factor, static_cast<double>(epoch / step));
}

/// Slot-classification loss for PE training: per-slot logit o_k is the
/// explanation-signed attention mass of slot k; cross-entropy over softmax(o)
/// plus a lambda-weighted area penalty (mean attention, normalized by z*l or
/// by l per `area_norm`) that pushes the maps to stay compact.
inline TensorPtr scouter_loss(Graph& g, const TensorPtr& attention, std::size_t label,
                              double lambda, double expl_sign = 1.0,
                              const std::string& area_norm = "zl") {
    attention->require_rank(2, "scouter_loss");
    const std::size_t z = attention->rows(), l = attention->cols();
    if (label >= z) throw UsageError("scouter_loss: label out of range");
    auto logits = scale(g, sum_rows(g, attention), expl_sign);
    auto ce = cross_entropy_logits(g, logits, label);
    const double denom =
        area_norm == "l" ? static_cast<double>(l) : static_cast<double>(z * l);
    if (area_norm != "l" && area_norm != "zl")
        throw UsageError("scouter_loss: area_norm must be zl or l");
    auto area = scale(g, sum_all(g, attention), 1.0 / denom);
    return add(g, ce, scale(g, area, lambda));
}

struct StageResult {
    double best_val = 0.0;
    std::size_t best_epoch = 0;
};

namespace detail {

/// Deep copy of the tensors under a prefix, for best-epoch snapshots.
inline StateDict snapshot(const Model& m, const std::string& prefix) {
    StateDict out;
    for (const auto& [name, t] : m.named_params(prefix))
        out.emplace_back(name, Tensor::make(t->shape, t->data));
    return out;
}

}  // namespace detail

/// Stage 1: supervised cross-entropy pretraining of the backbone over all
/// base images; after each epoch a nearest-centroid pass over val-split
/// episodes scores the checkpoint and the best epoch's weights are kept.
inline StageResult train_backbone(const Dataset& ds, Model& model, const StageConfig& cfg,
                                  std::ostream& log) {
    const auto cats = ds.categories("base");
    if (cats.size() < 2) throw UsageError("train_backbone: base split needs >= 2 categories");

    std::vector<std::pair<std::size_t, std::size_t>> samples;  // (image id, label)
    for (std::size_t k = 0; k < cats.size(); ++k)
        for (std::size_t id : ds.ids_of(cats[k])) samples.emplace_back(id, k);

    model.clear_grad_flags();
    AdaBelief opt;
    for (const auto& [name, t] : model.named_params("backbone.")) opt.add_param(name, t);

    Pcg32 rng(mix_seed(cfg.seed, 0xB0), 101);
    StageResult best;
    best.best_val = -1.0;
    StateDict best_state = detail::snapshot(model, "backbone.");

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.lr, cfg.lr_step, cfg.lr_factor);
        shuffle(samples, rng);
        double loss_sum = 0.0;
        std::size_t train_hits = 0;
        for (std::size_t start = 0; start < samples.size(); start += cfg.batch) {
            const std::size_t stop = std::min(start + cfg.batch, samples.size());
            const double inv = 1.0 / static_cast<double>(stop - start);
            opt.zero_grad();
            for (std::size_t i = start; i < stop; ++i) {
                auto img = augment(*ds.image(samples[i].first), rng, cfg.aug);
                Graph g;
                auto logits = model.backbone.logits(g, img);
                auto loss = cross_entropy_logits(g, logits, samples[i].second);
                loss_sum += loss->data[0];
                std::size_t arg = 0;
                for (std::size_t k = 1; k < logits->size(); ++k)
                    if (logits->data[k] > logits->data[arg]) arg = k;
                train_hits += arg == samples[i].second;
                g.backward(scale(g, loss, inv));
            }
            opt.step(lr);
        }
        Pcg32 val_rng(mix_seed(cfg.seed, 0xB1000 + epoch), 5);
        const double val_acc = nn_validate(model.backbone, ds, "val", cfg.val_episodes, cfg.way,
                                           cfg.shot, cfg.query, val_rng);
        log << "backbone epoch " << epoch << " lr " << lr << " loss "
            << loss_sum / static_cast<double>(samples.size()) << " train_acc "
            << static_cast<double>(train_hits) / static_cast<double>(samples.size())
            << " val_acc " << val_acc << "\n";
        if (val_acc >= best.best_val) {  // ties keep the later (more-trained) epoch
            best.best_val = val_acc;
            best.best_epoch = epoch;
            best_state = detail::snapshot(model, "backbone.");
        }
    }
    model.load(best_state);
    return best;
}

/// PE-stage category selection: the explicit list when given (every name must
/// exist in the base split), otherwise every `pe_stride`-th base category.
inline std::vector<std::string> select_pe_categories(const Dataset& ds, const StageConfig& cfg) {
    const auto base = ds.categories("base");
    if (!cfg.pe_cats.empty()) {
        for (const auto& c : cfg.pe_cats)
            if (std::find(base.begin(), base.end(), c) == base.end())
                throw UsageError("pe category '" + c + "' is not in the base split");
        return cfg.pe_cats;
    }
    if (cfg.pe_stride < 1) throw UsageError("pe-stride must be >= 1");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < base.size(); i += cfg.pe_stride) out.push_back(base[i]);
    return out;
}

/// Stage 2: freeze the backbone and fit the PE as a z-way classifier (one
/// slot per selected category) with the scouter loss on a per-category 90/10
/// train/val split; keeps the epoch with the best slot-classification
/// accuracy on the held-out 10%.
inline StageResult train_pe(const Dataset& ds, Model& model,
                            const std::vector<std::string>& categories, const StageConfig& cfg,
                            std::ostream& log) {
    if (categories.empty()) throw UsageError("train_pe: no categories selected");
    if (model.pe.slots() != categories.size())
        throw UsageError("train_pe: model has " + std::to_string(model.pe.slots()) +
                         " slots but " + std::to_string(categories.size()) +
                         " categories were selected");

    Pcg32 split_rng(mix_seed(cfg.seed, 0xE5), 7);
    std::vector<std::pair<std::size_t, std::size_t>> train_set, val_set;
    for (std::size_t k = 0; k < categories.size(); ++k) {
        auto ids = ds.ids_of(categories[k]);
        shuffle(ids, split_rng);
        const std::size_t train_n = ids.size() * 9 / 10;
        if (train_n == 0 || train_n == ids.size())
            throw UsageError("train_pe: category '" + categories[k] +
                             "' is too small for a 90/10 split");
        for (std::size_t i = 0; i < ids.size(); ++i)
            (i < train_n ? train_set : val_set).emplace_back(ids[i], k);
    }

    model.clear_grad_flags();
    AdaBelief opt;
    for (const auto& [name, t] : model.named_params("pe.")) opt.add_param(name, t);

    auto slot_prediction = [&](std::size_t id) {
        Graph g;
        auto att = model.repr(g, ds.image(id)).attention;
        const std::size_t z = att->rows(), l = att->cols();
        std::size_t arg = 0;
        double best_mass = -1.0;
        for (std::size_t k = 0; k < z; ++k) {
            double mass = 0.0;
            for (std::size_t j = 0; j < l; ++j) mass += att->at(k, j);
            mass *= cfg.expl_sign;
            if (mass > best_mass) {
                best_mass = mass;
                arg = k;
            }
        }
        return arg;
    };

    Pcg32 rng(mix_seed(cfg.seed, 0xE0), 102);
    StageResult best;
    best.best_val = -1.0;
    StateDict best_state = detail::snapshot(model, "pe.");

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.lr, cfg.lr_step, cfg.lr_factor);
        shuffle(train_set, rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < train_set.size(); start += cfg.batch) {
            const std::size_t stop = std::min(start + cfg.batch, train_set.size());
            const double inv = 1.0 / static_cast<double>(stop - start);
            opt.zero_grad();
            for (std::size_t i = start; i < stop; ++i) {
                auto img = augment(*ds.image(train_set[i].first), rng, cfg.aug);
                Graph g;
                auto att = model.repr(g, img).attention;
                auto loss = scouter_loss(g, att, train_set[i].second, cfg.lambda, cfg.expl_sign,
                                         cfg.area_norm);
                loss_sum += loss->data[0];
                g.backward(scale(g, loss, inv));
            }
            opt.step(lr);
        }
        std::size_t correct = 0;
        for (const auto& [id, label] : val_set) correct += (slot_prediction(id) == label);
        const double val_acc = static_cast<double>(correct) / static_cast<double>(val_set.size());
        log << "pe epoch " << epoch << " lr " << lr << " loss "
            << loss_sum / static_cast<double>(train_set.size()) << " val_acc " << val_acc
            << "\n";
        if (val_acc >= best.best_val) {  // ties keep the later (more-trained) epoch
            best.best_val = val_acc;
            best.best_epoch = epoch;
            best_state = detail::snapshot(model, "pe.");
        }
    }
    model.load(best_state);
    return best;
}

/// Stage 3: freeze backbone and PE, fit the matcher on sampled base-split
/// episodes (augmented), selecting the epoch with the best full-pipeline
/// accuracy over a fixed set of val-split episodes.
inline StageResult train_matcher(const Dataset& ds, Model& model, const StageConfig& cfg,
                                 std::ostream& log) {
    if (cfg.episodes < 1) throw UsageError("train_matcher: need episodes >= 1 per epoch");
    model.clear_grad_flags();
    AdaBelief opt;
    for (const auto& [name, t] : model.named_params("pm.")) opt.add_param(name, t);

    ReprCache val_cache;  // backbone+PE frozen: valid across epochs
    StageResult best;
    best.best_val = -1.0;
    StateDict best_state = detail::snapshot(model, "pm.");

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.lr, cfg.lr_step, cfg.lr_factor);
        Pcg32 rng(mix_seed(cfg.seed, 0x3A000 + epoch), 103);
        double loss_sum = 0.0;
        for (std::size_t e = 0; e < cfg.episodes; ++e) {
            Episode ep = sample_episode(ds, "base", cfg.way, cfg.shot, cfg.query, rng);
            const std::size_t K = cfg.way;

            auto image_v = [&](std::size_t id) {
                auto img = augment(*ds.image(id), rng, cfg.aug);
                Graph g;
                return model.repr(g, img).v;  // frozen upstream: plain values
            };
            std::vector<std::vector<TensorPtr>> sup(K);
            for (const auto& [id, label] : ep.support) sup[label].push_back(image_v(id));
            Graph g;
            std::vector<TensorPtr> vbar(K);
            for (std::size_t k = 0; k < K; ++k) vbar[k] = average_supports(g, sup[k]);

            TensorPtr loss;
            if (cfg.loss == "softmax_ce") {
                TensorPtr total;
                for (const auto& [id, label] : ep.query) {
                    auto vq = image_v(id);
                    std::vector<TensorPtr> logits;
                    for (std::size_t k = 0; k < K; ++k)
                        logits.push_back(match_logit(g, vq, vbar[k], model.pm));
                    auto ce = cross_entropy_logits(g, stack_scalars(g, logits), label);
                    total = total ? add(g, total, ce) : ce;
                }
                loss = scale(g, total, 1.0 / static_cast<double>(ep.query.size()));
            } else {
                std::vector<TensorPtr> scores;
                std::vector<double> targets;
                for (const auto& [id, label] : ep.query) {
                    auto vq = image_v(id);
                    for (std::size_t k = 0; k < K; ++k) {
                        scores.push_back(match_score(g, vq, vbar[k], model.pm));
                        targets.push_back(k == label ? 1.0 : 0.0);
                    }
                }
                loss = episode_loss(g, scores, targets);
            }
            loss_sum += loss->data[0];
            opt.zero_grad();
            g.backward(loss);
            opt.step(lr);
        }
        EvalReport val = evaluate(model, ds, "val", cfg.val_episodes, cfg.way, cfg.shot,
                                  cfg.query, mix_seed(cfg.seed, 0x7A1), cfg.jobs, &val_cache);
        log << "matcher epoch " << epoch << " lr " << lr << " loss "
            << loss_sum / static_cast<double>(cfg.episodes) << " val_acc " << val.mean_accuracy
            << "\n";
        if (val.mean_accuracy >= best.best_val) {  // ties keep the later epoch
            best.best_val = val.mean_accuracy;
            best.best_epoch = epoch;
            best_state = detail::snapshot(model, "pm.");
        }
    }
    model.load(best_state);
    return best;
}

}  // namespace mtunet
