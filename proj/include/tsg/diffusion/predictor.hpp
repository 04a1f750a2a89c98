#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsg/diffusion/image.hpp"

namespace tsg::diffusion {

// Noise prediction network eps(x, t) behind a uniform interface. Every call is
// counted per image so callers can verify how many network evaluations an
// algorithm performed.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;

    virtual int height() const = 0;
    virtual int width() const = 0;
    virtual int channels() const = 0;
    // Length of the schedule the network was trained with.
    virtual int timesteps() const = 0;
    // Identifies the weights in feature metadata.
    virtual std::string tag() const { return "unnamed"; }

    // batch [N, C, H, W] in model space; returns [N, C, H, W].
    // Throws ModelError on shape mismatch or t outside [0, timesteps()).
    nn::Tensor predict_noise(const nn::Tensor& batch, int t) const;
    std::vector<ImageTensor> predict_noise(std::span<const ImageTensor> batch, int t) const;

    // Images evaluated so far.
    std::uint64_t calls() const noexcept { return calls_.load(); }
    void reset_calls() noexcept { calls_.store(0); }

protected:
    virtual nn::Tensor evaluate(const nn::Tensor& batch, int t) const = 0;

private:
    mutable std::atomic<std::uint64_t> calls_{0};
};

}  // namespace tsg::diffusion
