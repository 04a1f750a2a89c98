#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tsg/common/io.hpp"
#include "tsg/nn/module.hpp"

namespace tsg::classifier {

// resnet18/resnet50 follow torchvision's layout and parameter names (so
// ImageNet weights load by name); resnet_cifar is a 3-stage basic-block
// network with a 3x3 stem for low-resolution inputs.
enum class Arch { resnet18, resnet50, resnet_cifar };
const char* to_string(Arch a) noexcept;
Arch parse_arch(const std::string& s);

struct ResNetConfig {
    Arch arch = Arch::resnet50;
    int num_classes = 2;
    int in_channels = 3;
    // resnet_cifar only.
    int cifar_width = 16;
    int cifar_blocks = 2;

    void validate() const;
};

json to_json(const ResNetConfig& c);
ResNetConfig resnet_config_from_json(const json& j);

class ResNet {
public:
    ResNet(const ResNetConfig& cfg, std::uint64_t seed);
    ~ResNet();
    ResNet(ResNet&&) noexcept;
    ResNet& operator=(ResNet&&) noexcept;

    const ResNetConfig& config() const noexcept;
    nn::ParameterStore& parameters() noexcept;
    const nn::ParameterStore& parameters() const noexcept;

    // Residual stage names in forward order ("layer1", ...).
    std::vector<std::string> stage_names() const;

    // x [N, C, H, W] -> logits [N, num_classes]. Training mode uses batch
    // statistics and updates the running ones.
    nn::Var forward(const nn::Var& x, bool training) const;
    // Output of the named stage.
    nn::Var forward_to(const nn::Var& x, const std::string& stage, bool training) const;
    // Remaining stages and the classification head applied to that output.
    nn::Var forward_from(const nn::Var& activation, const std::string& stage, bool training) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tsg::classifier
