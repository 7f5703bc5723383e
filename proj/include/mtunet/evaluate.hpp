#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "mtunet/dataset.hpp"
#include "mtunet/model.hpp"

namespace mtunet {

struct EvalReport {
    double mean_accuracy = 0.0;
    double ci95 = 0.0;  // 1.96 * sample std / sqrt(episodes)
    std::size_t episodes = 0;
    std::vector<double> per_episode;
};

/// 95% half-width with the n-1 (sample) standard deviation.
inline double ci95_halfwidth(const std::vector<double>& accs) {
    const std::size_t n = accs.size();
    if (n < 2) return 0.0;
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double a : accs) ss += (a - mean) * (a - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    return 1.96 * sd / std::sqrt(static_cast<double>(n));
}

inline EvalReport make_report(std::vector<double> per_episode) {
    EvalReport r;
    r.per_episode = std::move(per_episode);
    r.episodes = r.per_episode.size();
    double s = 0.0;
    for (double a : r.per_episode) s += a;
    r.mean_accuracy = r.episodes ? s / static_cast<double>(r.episodes) : 0.0;
    r.ci95 = ci95_halfwidth(r.per_episode);
    return r;
}

/// Shared V cache for frozen models: image id -> pooled representation.
/// Valid as long as backbone and PE parameters do not change.
class ReprCache {
  public:
    const std::vector<double>& get(const Model& model, const Dataset& ds, std::size_t id) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = map_.find(id);
            if (it != map_.end()) return it->second;
        }
        Graph g;
        auto v = model.repr(g, ds.image(id)).v;
        std::lock_guard<std::mutex> lock(mu_);
        return map_.emplace(id, v->data).first->second;
    }

    void clear() {
        std::lock_guard<std::mutex> lock(mu_);
        map_.clear();
    }

  private:
    std::mutex mu_;
    std::unordered_map<std::size_t, std::vector<double>> map_;
};

/// Scores one episode with a frozen model: V per image (through `cache` when
/// given), support averaging per category, then the PM score of every
/// (query, category) pair. Returns the episode accuracy.
inline double evaluate_episode(const Model& model, const Dataset& ds, const Episode& ep,
                               ReprCache* cache) {
    ReprCache local;
    ReprCache& c = cache ? *cache : local;
    const std::size_t K = ep.categories.size();
    const std::size_t cdim = model.backbone.channels();

    std::vector<std::vector<double>> centroid(K, std::vector<double>(cdim, 0.0));
    std::vector<std::size_t> counts(K, 0);
    for (const auto& [id, label] : ep.support) {
        const auto& v = c.get(model, ds, id);
        for (std::size_t i = 0; i < cdim; ++i) centroid[label][i] += v[i];
        ++counts[label];
    }
    std::vector<TensorPtr> vbar(K);
    for (std::size_t k = 0; k < K; ++k) {
        for (auto& x : centroid[k]) x /= static_cast<double>(counts[k]);
        vbar[k] = Tensor::make({cdim}, centroid[k]);
    }

    std::size_t correct = 0;
    for (const auto& [id, label] : ep.query) {
        auto vq = Tensor::make({cdim}, c.get(model, ds, id));
        std::vector<double> scores(K);
        for (std::size_t k = 0; k < K; ++k) {
            Graph g;
            scores[k] = match_score(g, vq, vbar[k], model.pm)->data[0];
        }
        correct += (classify_query(scores) == label);
    }
    return static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

/// Episodic evaluation: episode i draws its own rng from mix(base_seed, i),
/// so results are independent of worker count and aggregation runs in
/// episode-index order. No augmentation is ever applied here.
inline EvalReport evaluate(const Model& model, const Dataset& ds, const std::string& split,
                           std::size_t episodes, std::size_t K, std::size_t N, std::size_t M,
                           std::uint64_t base_seed, std::size_t jobs = 1,
                           ReprCache* cache = nullptr) {
    if (episodes == 0) throw UsageError("evaluate: need at least one episode");
    // fail fast on infeasible parameters before spawning workers
    {
        Pcg32 probe(mix_seed(base_seed, 0), 0);
        sample_episode(ds, split, K, N, M, probe, mix_seed(base_seed, 0));
    }
    std::vector<double> accs(episodes, 0.0);
    ReprCache local;
    ReprCache& shared = cache ? *cache : local;

    auto run_range = [&](std::size_t worker, std::size_t stride) {
        for (std::size_t i = worker; i < episodes; i += stride) {
            Pcg32 rng(mix_seed(base_seed, i), i);
            Episode ep = sample_episode(ds, split, K, N, M, rng, mix_seed(base_seed, i));
            accs[i] = evaluate_episode(model, ds, ep, &shared);
        }
    };
    if (jobs <= 1) {
        run_range(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < jobs; ++w) pool.emplace_back(run_range, w, jobs);
        for (auto& t : pool) t.join();
    }
    return make_report(std::move(accs));
}

}  // namespace mtunet
