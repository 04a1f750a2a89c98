#include "tsg/nn/optim.hpp"

#include <cmath>

namespace tsg::nn {

Adam::Adam(ParameterStore& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
    for (const auto& e : store_.entries()) {
        m_.emplace_back(e.trainable ? Tensor(e.var.shape()) : Tensor());
        v_.emplace_back(e.trainable ? Tensor(e.var.shape()) : Tensor());
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    const float step_size = static_cast<float>(cfg_.learning_rate / bc1);
    const float inv_bc2_sqrt = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto& entries = store_.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) continue;
        Var var = entries[i].var;
        const Tensor& g = var.grad();
        if (g.size() != var.value().size()) continue;
        Tensor& w = var.mutable_value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
            w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_bc2_sqrt + cfg_.eps);
        }
    }
}

}  // namespace tsg::nn
