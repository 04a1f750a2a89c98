#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "tsg/common/io.hpp"
#include "tsg/common/rng.hpp"
#include "tsg/nn/module.hpp"

// Name-keyed deterministic weights shared with tests/oracles/make_fixtures.py.
namespace tsg::testing {

inline double splitmix_uniform(std::uint64_t seed, std::size_t i) {
    return static_cast<double>(splitmix64(seed + i) >> 11) * 0x1.0p-53;
}

inline void fill_by_name(nn::ParameterStore& ps) {
    for (const auto& e : ps.entries()) {
        nn::Var v = e.var;
        nn::Tensor& t = v.mutable_value();
        const std::uint64_t seed = fnv1a64(e.name);
        const auto ends_with = [&](const std::string& s) {
            return e.name.size() >= s.size() && e.name.compare(e.name.size() - s.size(), s.size(), s) == 0;
        };
        const double fan_in = t.rank() >= 2 ? static_cast<double>(t.size()) / t.dim(0) : 1.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double u = splitmix_uniform(seed, i);
            double x;
            if (t.rank() >= 2) x = (2.0 * u - 1.0) * std::sqrt(3.0 / fan_in);
            else if (ends_with("running_var")) x = 0.5 + u;
            else if (ends_with(".weight")) x = 1.0 + 0.2 * (2.0 * u - 1.0);
            else x = 0.1 * (2.0 * u - 1.0);
            t[i] = static_cast<float>(x);
        }
    }
}

inline nn::Tensor fixture_input(std::uint64_t seed, const nn::Shape& shape) {
    nn::Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(2.0 * splitmix_uniform(seed, i) - 1.0);
    return t;
}

inline json load_fixture(const std::string& name) {
    return read_json_file(std::string(TSG_ORACLE_DIR) + "/" + name);
}

}  // namespace tsg::testing
