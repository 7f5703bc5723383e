#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtunet/errors.hpp"
#include "mtunet/tensor.hpp"

namespace mtunet {

struct AdaBeliefConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// AdaBelief: Adam-shaped updates whose second moment tracks the squared
/// deviation of the gradient from its EMA rather than the raw square.
///
///   m <- b1*m + (1-b1)*g
///   s <- b2*s + (1-b2)*(g - m)^2 + eps
///   param -= lr * mhat / (sqrt(shat) + eps)   (both moments bias-corrected)
class AdaBelief {
  public:
    explicit AdaBelief(AdaBeliefConfig cfg = {}) : cfg_(cfg) {}

    void add_param(const std::string& name, const TensorPtr& p) {
        p->set_requires_grad(true);
        slots_.push_back({name, p, std::vector<double>(p->size(), 0.0),
                          std::vector<double>(p->size(), 0.0)});
    }

    /// One update over all registered parameters; lr overrides the configured
    /// rate so schedules can drive it per step.
    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& slot : slots_) {
            Tensor& p = *slot.param;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                if (!std::isfinite(g))
                    throw NumericError("non-finite gradient in parameter '" + slot.name + "'");
                double& m = slot.m[i];
                double& s = slot.s[i];
                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                const double diff = g - m;
                s = cfg_.beta2 * s + (1.0 - cfg_.beta2) * diff * diff + cfg_.eps;
                const double mhat = m / bc1;
                const double shat = s / bc2;
                p.data[i] -= lr * mhat / (std::sqrt(shat) + cfg_.eps);
            }
        }
    }

    void step() { step(cfg_.lr); }

    void zero_grad() {
        for (auto& slot : slots_) slot.param->zero_grad();
    }

    std::size_t param_count() const { return slots_.size(); }
    std::int64_t steps_taken() const { return t_; }

  private:
    struct Slot {
        std::string name;
        TensorPtr param;
        std::vector<double> m, s;
    };

    AdaBeliefConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace mtunet
