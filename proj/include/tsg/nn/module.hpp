#pragma once

#include <string>
#include <vector>

#include "tsg/common/rng.hpp"
#include "tsg/nn/autograd.hpp"

namespace tsg::nn {

// Ordered, named registry of a model's tensors. Trainable entries are leaf
// Vars with requires_grad; buffers (e.g. batch-norm statistics) are not.
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Var var;
        bool trainable;
    };

    Var create(const std::string& name, Shape shape, bool trainable = true);

    const std::vector<Entry>& entries() const noexcept { return entries_; }
    // Returns an empty Var when absent.
    Var find(const std::string& name) const;
    std::size_t trainable_count() const;
    void zero_grad();

private:
    std::vector<Entry> entries_;
};

enum class Init { torch_default, kaiming_normal_fan_out, zeros, ones };

// Weight initialisation following torch conventions. `fan_in` / `fan_out`
// derive from dims 1.. / dim 0 and the receptive field.
void initialize(Var& weight, Init init, Rng& rng);
void initialize_bias(Var& bias, int fan_in, Rng& rng);

struct Conv2d {
    Conv2d() = default;
    Conv2d(ParameterStore& ps, const std::string& name, int in, int out, int kernel, int stride, int padding,
           bool bias, Rng& rng, Init init = Init::torch_default);
    Var operator()(const Var& x) const;

    Var weight, bias;
    int stride = 1, padding = 0;
};

struct Linear {
    Linear() = default;
    Linear(ParameterStore& ps, const std::string& name, int in, int out, Rng& rng);
    Var operator()(const Var& x) const;

    Var weight, bias;
};

struct GroupNorm {
    GroupNorm() = default;
    GroupNorm(ParameterStore& ps, const std::string& name, int groups, int channels);
    Var operator()(const Var& x) const;

    Var weight, bias;
    int groups = 32;
};

struct BatchNorm2d {
    BatchNorm2d() = default;
    BatchNorm2d(ParameterStore& ps, const std::string& name, int channels);
    // Training mode updates the running statistics stored in the parameter store.
    Var operator()(const Var& x, bool training) const;

    Var weight, bias, running_mean, running_var;
};

}  // namespace tsg::nn
