#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tsg/common/io.hpp"
#include "tsg/nn/module.hpp"

namespace tsg::nn {

// Weights container: one UTF-8 JSON header line
//   {"schema":"tsgckpt/1","meta":{...},"tensors":[{"name","shape","offset"}],"payload_floats":N}
// followed by N little-endian float32 values. Offsets count floats.
inline constexpr const char* kContainerSchema = "tsgckpt/1";

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct Container {
    json meta;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const json& meta, const ParameterStore& store);
std::string encode_container(const json& meta, const ParameterStore& store);
Container load_container(const std::filesystem::path& path);

// Copies container tensors into the store by name. Every store entry must be
// present with a matching shape; container entries whose names start with one
// of `ignored_prefixes` may be absent from the store.
void load_parameters(ParameterStore& store, const Container& c, const std::vector<std::string>& ignored_prefixes = {});

}  // namespace tsg::nn
