#pragma once

#include "mtkd/nn.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace mtkd {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Global L2 norm over every block of `grads`.
template <class Model>
double grad_norm(const Model& grads) {
    double sq = 0.0;
    for (const auto& v : param_views(const_cast<Model&>(grads))) {
        for (double g : v.values) sq += g * g;
    }
    return std::sqrt(sq);
}

/// Rescales `grads` so its global norm is at most `max_norm` (0 disables).
template <class Model>
void clip_grad_norm(Model& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = grad_norm(grads);
    if (norm <= max_norm) return;
    const double scale = max_norm / norm;
    for (auto& v : param_views(grads)) {
        for (double& g : v.values) g *= scale;
    }
}

/// SGD or Adam over the flattened parameters of one model type. Moment
/// buffers are sized on the first step.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind = OptimizerKind::sgd, double beta1 = 0.9,
                       double beta2 = 0.999, double eps = 1e-8)
        : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    OptimizerKind kind() const { return kind_; }
    std::size_t steps() const { return steps_; }

    template <class Model>
    void step(Model& params, const Model& grads, double lr) {
        auto p = param_views(params);
        auto g = param_views(const_cast<Model&>(grads));
        ++steps_;
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t b = 0; b < p.size(); ++b) {
                for (std::size_t i = 0; i < p[b].values.size(); ++i) p[b].values[i] -= lr * g[b].values[i];
            }
            return;
        }
        std::size_t total = 0;
        for (const auto& v : p) total += v.values.size();
        if (m_.size() != total) {
            m_.assign(total, 0.0);
            v_.assign(total, 0.0);
        }
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
        std::size_t k = 0;
        for (std::size_t b = 0; b < p.size(); ++b) {
            for (std::size_t i = 0; i < p[b].values.size(); ++i, ++k) {
                const double gi = g[b].values[i];
                m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * gi;
                v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * gi * gi;
                p[b].values[i] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
            }
        }
    }

private:
    OptimizerKind kind_;
    double beta1_, beta2_, eps_;
    std::size_t steps_ = 0;
    std::vector<double> m_, v_;
};

}  // namespace mtkd
