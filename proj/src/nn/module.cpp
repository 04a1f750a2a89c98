#include "tsg/nn/module.hpp"

#include <cmath>

#include "tsg/common/error.hpp"
#include "tsg/nn/ops.hpp"

namespace tsg::nn {

Var ParameterStore::create(const std::string& name, Shape shape, bool trainable) {
    if (find(name)) throw ModelError("duplicate parameter name: " + name);
    Var v(Tensor(std::move(shape)), trainable);
    entries_.push_back({name, v, trainable});
    return v;
}

Var ParameterStore::find(const std::string& name) const {
    for (const Entry& e : entries_)
        if (e.name == name) return e.var;
    return {};
}

std::size_t ParameterStore::trainable_count() const {
    std::size_t n = 0;
    for (const Entry& e : entries_)
        if (e.trainable) n += e.var.value().size();
    return n;
}

void ParameterStore::zero_grad() {
    for (Entry& e : entries_) e.var.mutable_grad() = Tensor();
}

namespace {
int receptive_field(const Shape& s) {
    int r = 1;
    for (std::size_t i = 2; i < s.size(); ++i) r *= s[i];
    return r;
}
}  // namespace

void initialize(Var& weight, Init init, Rng& rng) {
    Tensor& w = weight.mutable_value();
    const Shape& s = w.shape();
    switch (init) {
        case Init::zeros: w.fill(0.0f); return;
        case Init::ones: w.fill(1.0f); return;
        case Init::torch_default: {
            // kaiming_uniform(a = sqrt(5)) reduces to U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
            const int fan_in = s.size() >= 2 ? s[1] * receptive_field(s) : s[0];
            const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
            std::uniform_real_distribution<float> u(-bound, bound);
            for (float& v : w.values()) v = u(rng);
            return;
        }
        case Init::kaiming_normal_fan_out: {
            const int fan_out = s[0] * receptive_field(s);
            std::normal_distribution<float> nd(0.0f, std::sqrt(2.0f / static_cast<float>(fan_out)));
            for (float& v : w.values()) v = nd(rng);
            return;
        }
    }
}

void initialize_bias(Var& bias, int fan_in, Rng& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> u(-bound, bound);
    for (float& v : bias.mutable_value().values()) v = u(rng);
}

Conv2d::Conv2d(ParameterStore& ps, const std::string& name, int in, int out, int kernel, int stride_, int padding_,
               bool with_bias, Rng& rng, Init init)
    : stride(stride_), padding(padding_) {
    weight = ps.create(name + ".weight", {out, in, kernel, kernel});
    initialize(weight, init, rng);
    if (with_bias) {
        bias = ps.create(name + ".bias", {out});
        if (init == Init::zeros) bias.mutable_value().fill(0.0f);
        else initialize_bias(bias, in * kernel * kernel, rng);
    }
}

Var Conv2d::operator()(const Var& x) const {
    const Shape& w = weight.shape();
    if (w[2] == 1 && w[3] == 1 && stride == 1 && padding == 0) return pointwise_conv(x, weight, bias);
    return conv2d(x, weight, bias, stride, padding);
}

Linear::Linear(ParameterStore& ps, const std::string& name, int in, int out, Rng& rng) {
    weight = ps.create(name + ".weight", {out, in});
    initialize(weight, Init::torch_default, rng);
    bias = ps.create(name + ".bias", {out});
    initialize_bias(bias, in, rng);
}

Var Linear::operator()(const Var& x) const { return linear(x, weight, bias); }

GroupNorm::GroupNorm(ParameterStore& ps, const std::string& name, int groups_, int channels) : groups(groups_) {
    if (channels % groups != 0)
        throw ModelError(name + ": " + std::to_string(channels) + " channels not divisible by " +
                         std::to_string(groups) + " groups");
    weight = ps.create(name + ".weight", {channels});
    weight.mutable_value().fill(1.0f);
    bias = ps.create(name + ".bias", {channels});
}

Var GroupNorm::operator()(const Var& x) const { return group_norm(x, groups, weight, bias); }

BatchNorm2d::BatchNorm2d(ParameterStore& ps, const std::string& name, int channels) {
    weight = ps.create(name + ".weight", {channels});
    weight.mutable_value().fill(1.0f);
    bias = ps.create(name + ".bias", {channels});
    running_mean = ps.create(name + ".running_mean", {channels}, false);
    running_var = ps.create(name + ".running_var", {channels}, false);
    running_var.mutable_value().fill(1.0f);
}

Var BatchNorm2d::operator()(const Var& x, bool training) const {
    // Running statistics are buffers shared with the store; training mode mutates them.
    Var rm = running_mean, rv = running_var;
    return batch_norm(x, weight, bias, rm.mutable_value(), rv.mutable_value(), training);
}

}  // namespace tsg::nn
