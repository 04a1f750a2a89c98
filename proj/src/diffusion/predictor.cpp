#include "tsg/diffusion/predictor.hpp"

#include "tsg/common/error.hpp"

namespace tsg::diffusion {

nn::Tensor NoisePredictor::predict_noise(const nn::Tensor& batch, int t) const {
    if (batch.rank() != 4 || batch.dim(1) != channels() || batch.dim(2) != height() || batch.dim(3) != width())
        throw ModelError("predictor expects [N, " + std::to_string(channels()) + ", " + std::to_string(height()) + ", " +
                         std::to_string(width()) + "] input, got " + nn::to_string(batch.shape()));
    if (t < 0 || t >= timesteps())
        throw ModelError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(timesteps()) + ")");
    calls_.fetch_add(static_cast<std::uint64_t>(batch.dim(0)));
    nn::Tensor out = evaluate(batch, t);
    if (out.shape() != batch.shape()) throw ModelError("predictor output shape differs from input");
    return out;
}

std::vector<ImageTensor> NoisePredictor::predict_noise(std::span<const ImageTensor> batch, int t) const {
    return from_nchw(predict_noise(to_nchw(batch), t));
}

}  // namespace tsg::diffusion
