#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tsg/nn/autograd.hpp"

namespace tsg::testing {

inline nn::Tensor random_tensor(nn::Shape shape, std::mt19937_64& rng, float scale = 1.0f) {
    nn::Tensor t(std::move(shape));
    std::normal_distribution<float> d(0.0f, scale);
    for (float& v : t.storage()) v = d(rng);
    return t;
}

struct GradCheckResult {
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
};

// Compares analytic gradients of L = sum(f(inputs) * R) against central
// differences at `probes` random coordinates per input.
inline GradCheckResult gradcheck(const std::function<nn::Var(const std::vector<nn::Var>&)>& f,
                                 std::vector<nn::Tensor> inputs, std::mt19937_64& rng, int probes = 12,
                                 float h = 1e-2f) {
    std::vector<nn::Var> vars;
    nn::Tensor seed;
    {
        nn::GradGuard on(true);
        for (const nn::Tensor& t : inputs) vars.emplace_back(t, true);
        nn::Var out = f(vars);
        seed = random_tensor(out.shape(), rng);
        nn::backward(out, seed);
    }
    auto objective = [&](const std::vector<nn::Tensor>& xs) {
        std::vector<nn::Var> vs;
        for (const nn::Tensor& t : xs) vs.emplace_back(t, false);
        nn::Var out = f(vs);
        double s = 0.0;
        for (std::size_t i = 0; i < out.value().size(); ++i) s += double(out.value()[i]) * seed[i];
        return s;
    };
    GradCheckResult r;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        std::uniform_int_distribution<std::size_t> pick(0, inputs[a].size() - 1);
        for (int p = 0; p < probes; ++p) {
            const std::size_t i = pick(rng);
            std::vector<nn::Tensor> plus = inputs, minus = inputs;
            plus[a][i] += h;
            minus[a][i] -= h;
            const double numeric = (objective(plus) - objective(minus)) / (2.0 * h);
            const double analytic = vars[a].grad().empty() ? 0.0 : vars[a].grad()[i];
            const double err = std::abs(numeric - analytic);
            r.max_abs_error = std::max(r.max_abs_error, err);
            r.max_rel_error = std::max(r.max_rel_error, err / std::max(1.0, std::abs(numeric)));
        }
    }
    return r;
}

}  // namespace tsg::testing
