#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "mtunet/errors.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

/// Reverse-mode autodiff tape. Ops append nodes in execution order; backward
/// replays them once, in reverse. Insertion order is the topological order.
///
/// Leaf tensors (parameters, inputs) accumulate gradients across backward
/// calls; intermediate (node output) gradients are reset at the start of each
/// backward pass. Callers zero leaf gradients between optimizer steps.
class Graph {
public:
    struct Node {
        const char* op;
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backward;
    };

    /// Finalize an op: verify finiteness, propagate requires_grad, and record
    /// the node when any input needs gradients.
    TensorPtr track(const char* op, std::vector<TensorPtr> inputs, TensorPtr out,
                    std::function<void()> backward_fn) {
        out->ensure_finite(op);
        bool needs_grad = false;
        for (const auto& in : inputs) needs_grad = needs_grad || in->requires_grad;
        if (needs_grad) {
            out->set_requires_grad(true);
            nodes_.push_back(Node{op, std::move(inputs), out, std::move(backward_fn)});
        }
        return out;
    }

    void backward(const TensorPtr& loss) {
        if (loss->size() != 1) throw UsageError("backward: loss must be a scalar tensor");
        if (!loss->requires_grad)
            throw UsageError("backward: loss does not require gradients");
        for (auto& n : nodes_) n.output->zero_grad();
        loss->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

}  // namespace mtunet
