#pragma once

#include <vector>

#include "tsg/nn/module.hpp"

namespace tsg::nn {

struct AdamConfig {
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Fixed-learning-rate Adam over the trainable entries of a store.
class Adam {
public:
    Adam(ParameterStore& store, AdamConfig cfg);
    void step();
    long steps_taken() const noexcept { return t_; }

private:
    ParameterStore& store_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace tsg::nn
