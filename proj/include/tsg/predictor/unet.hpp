#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tsg/common/io.hpp"
#include "tsg/nn/module.hpp"

namespace tsg::predictor {

// Architecture of the ADM-style noise prediction U-Net. Parameter names follow
// the reference implementation so released checkpoints load by name.
struct UNetConfig {
    int image_size = 32;
    int in_channels = 3;
    int model_channels = 16;
    int out_channels = 3;
    int num_res_blocks = 1;
    // Downsampling factors (1, 2, 4, ...) at which attention blocks are inserted.
    std::vector<int> attention_resolutions;
    std::vector<int> channel_mult{1, 2, 2};
    bool conv_resample = true;
    int num_heads = 1;
    // When positive, overrides num_heads with channels / num_head_channels.
    int num_head_channels = -1;
    bool use_scale_shift_norm = false;
    bool resblock_updown = false;
    int norm_groups = 32;
    bool middle_attention = true;
    // Width of the timestep MLP; 0 selects 4 * model_channels.
    int time_embed_channels = 0;

    int time_embed_dim() const { return time_embed_channels > 0 ? time_embed_channels : 4 * model_channels; }
    int depth() const { return static_cast<int>(channel_mult.size()) - 1; }
    // Throws ModelError on inconsistent settings.
    void validate() const;
};

json to_json(const UNetConfig& c);
UNetConfig unet_config_from_json(const json& j);

// Released 256x256 unconditional ImageNet model (learned sigma: 6 output channels).
UNetConfig adm_256_uncond();

class UNet {
public:
    UNet(const UNetConfig& cfg, std::uint64_t seed);
    ~UNet();
    UNet(UNet&&) noexcept;
    UNet& operator=(UNet&&) noexcept;

    const UNetConfig& config() const noexcept;
    nn::ParameterStore& parameters() noexcept;
    const nn::ParameterStore& parameters() const noexcept;

    // x [N, in_channels, H, W], one (possibly fractional) timestep per image.
    // Returns [N, out_channels, H, W].
    nn::Var forward(const nn::Var& x, std::span<const float> timesteps) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tsg::predictor
