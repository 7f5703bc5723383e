#pragma once

#include <string>
#include <vector>

#include "mtunet/graph.hpp"
#include "mtunet/init.hpp"
#include "mtunet/ops.hpp"

namespace mtunet {

/// Pairwise matcher f_gamma: MLP 2c -> c (ReLU) -> c/2 (ReLU) -> 1 logit;
/// the membership score is the sigmoid of that logit.
struct MatcherParams {
    TensorPtr fc1_weight, fc1_bias;  // c   x 2c, c
    TensorPtr fc2_weight, fc2_bias;  // c/2 x c,  c/2
    TensorPtr fc3_weight, fc3_bias;  // 1   x c/2, 1

    std::size_t feature_dim() const { return fc1_weight->shape[1] / 2; }

    static MatcherParams init(std::size_t c, Pcg32& rng) {
        if (c < 2) throw UsageError("matcher: feature width must be >= 2");
        MatcherParams m;
        m.fc1_weight = glorot_uniform(rng, {c, 2 * c});
        m.fc1_bias = zeros({c});
        m.fc2_weight = glorot_uniform(rng, {c / 2, c});
        m.fc2_bias = zeros({c / 2});
        m.fc3_weight = glorot_uniform(rng, {1, c / 2});
        m.fc3_bias = zeros({1});
        return m;
    }
};

/// V_bar_k: arithmetic mean of the support representations of one category.
inline TensorPtr average_supports(Graph& g, const std::vector<TensorPtr>& vs) {
    if (vs.empty()) throw UsageError("average_supports: empty support set");
    TensorPtr acc = vs[0];
    for (std::size_t i = 1; i < vs.size(); ++i) acc = add(g, acc, vs[i]);
    return vs.size() == 1 ? acc : scale(g, acc, 1.0 / static_cast<double>(vs.size()));
}

/// Raw MLP logit for the pair [V_q, V_bar_k] (query first). Every call runs
/// the same single-pair shapes so results are bit-identical no matter how
/// pairs are batched by callers.
inline TensorPtr match_logit(Graph& g, const TensorPtr& vq, const TensorPtr& vk,
                             const MatcherParams& pm) {
    vq->require_rank(1, "match_logit query");
    vk->require_rank(1, "match_logit support");
    const std::size_t c = pm.feature_dim();
    if (vq->size() != c || vk->size() != c)
        throw DimensionError("match_logit: expected feature length " + std::to_string(c) +
                             ", got " + std::to_string(vq->size()) + " and " +
                             std::to_string(vk->size()));
    auto x = reshape(g, concat_vec(g, vq, vk), {1, 2 * c});
    auto h1 = relu(g, add_row_vec(g, matmul(g, x, transpose(g, pm.fc1_weight)), pm.fc1_bias));
    auto h2 = relu(g, add_row_vec(g, matmul(g, h1, transpose(g, pm.fc2_weight)), pm.fc2_bias));
    auto out = add_row_vec(g, matmul(g, h2, transpose(g, pm.fc3_weight)), pm.fc3_bias);
    return reshape(g, out, {1});
}

/// s = sigmoid(f_gamma([V_q, V_bar_k])) in (0,1).
inline TensorPtr match_score(Graph& g, const TensorPtr& vq, const TensorPtr& vk,
                             const MatcherParams& pm) {
    return sigmoid(g, match_logit(g, vq, vk, pm));
}

/// Argmax over per-category scores; ties break to the lowest index.
inline std::size_t classify_query(const std::vector<double>& scores) {
    if (scores.size() < 2) throw UsageError("classify_query: need K >= 2 scores");
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k)
        if (scores[k] > scores[best]) best = k;
    return best;
}

/// Mean binary cross-entropy over all query-category pairs: one positive and
/// K-1 negatives per query. `scores` holds the K*M*K per-pair sigmoid scores
/// (each a scalar tensor), `targets` the matching 0/1 labels.
inline TensorPtr episode_loss(Graph& g, const std::vector<TensorPtr>& scores,
                              const std::vector<double>& targets) {
    if (scores.size() != targets.size())
        throw DimensionError("episode_loss: " + std::to_string(scores.size()) + " scores vs " +
                             std::to_string(targets.size()) + " targets");
    return mean_bce(g, stack_scalars(g, scores), targets);
}

}  // namespace mtunet
