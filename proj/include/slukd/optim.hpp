#pragma once

#include <stdexcept>
#include <vector>

#include "slukd/autodiff.hpp"
#include "slukd/models.hpp"

namespace slukd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adaptive-moment gradient descent over a model's parameter bindings. Binding
// order must stay stable across steps (visit_params guarantees it).
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(const std::vector<ParamBinding>& bindings, const ad::Graph& g) {
        if (m_.empty()) {
            for (const auto& b : bindings) {
                m_.emplace_back(b.param->rows(), b.param->cols());
                v_.emplace_back(b.param->rows(), b.param->cols());
            }
        }
        if (m_.size() != bindings.size())
            throw std::logic_error("adam: binding count changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t p = 0; p < bindings.size(); ++p) {
            const Tensor& grad = g.grad(bindings[p].node);
            Tensor& param = *bindings[p].param;
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (size_t i = 0; i < param.size(); ++i) {
                const double gi = grad.data[i];
                m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
                v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m.data[i] / bc1;
                const double vhat = v.data[i] / bc2;
                param.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    int steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace slukd
