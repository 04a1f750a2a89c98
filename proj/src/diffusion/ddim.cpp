#include "tsg/diffusion/ddim.hpp"

#include <algorithm>
#include <cmath>

#include "tsg/common/error.hpp"

namespace tsg::diffusion {

std::vector<int> ddim_timesteps(int T, int k) {
    if (k < 1) throw UsageError("DDIM step count must be >= 1");
    if (k > T) throw UsageError("DDIM step count " + std::to_string(k) + " exceeds schedule length " + std::to_string(T));
    std::vector<int> tau(k);
    for (int i = 0; i < k; ++i)
        tau[i] = static_cast<int>(std::llround(static_cast<double>(i) * T / static_cast<double>(k)));
    return tau;
}

namespace {

void check_predictor(const NoisePredictor& p, const NoiseSchedule& s) {
    if (p.timesteps() != s.T)
        throw ModelError("predictor was trained with T = " + std::to_string(p.timesteps()) + ", schedule has T = " +
                         std::to_string(s.T));
}

// Moves x from signal level `from` to `to` along the predicted noise direction.
void ddim_move(nn::Tensor& x, const nn::Tensor& eps, double from, double to) {
    const double a = std::sqrt(to / from);
    const double b = std::sqrt(1.0 - to) - std::sqrt(to) * std::sqrt(1.0 - from) / std::sqrt(from);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(a * x[i] + b * eps[i]);
}

// Same move, but through the clamped x0 estimate with eps re-derived from it.
void ddim_move_clipped(nn::Tensor& x, const nn::Tensor& eps, double from, double to) {
    const double sf = std::sqrt(from), nf = std::sqrt(1.0 - from);
    const double st = std::sqrt(to), nt = std::sqrt(1.0 - to);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = std::clamp((x[i] - nf * eps[i]) / sf, -1.0, 1.0);
        const double e = nf > 0.0 ? (x[i] - sf * x0) / nf : eps[i];
        x[i] = static_cast<float>(st * x0 + nt * e);
    }
}

}  // namespace

nn::Tensor ddim_invert(const nn::Tensor& x0, int k, const NoisePredictor& p, const NoiseSchedule& s) {
    check_predictor(p, s);
    const std::vector<int> tau = ddim_timesteps(s.T, k);
    nn::Tensor x = x0;
    double level = 1.0;
    for (int i = 0; i < k; ++i) {
        const nn::Tensor eps = p.predict_noise(x, tau[i]);
        const double next = s.alpha_bars[tau[i]];
        ddim_move(x, eps, level, next);
        level = next;
    }
    return x;
}

nn::Tensor ddim_denoise(const nn::Tensor& xk, int k, const NoisePredictor& p, const NoiseSchedule& s,
                        bool clip_x0) {
    check_predictor(p, s);
    const std::vector<int> tau = ddim_timesteps(s.T, k);
    nn::Tensor x = xk;
    for (int i = k - 1; i >= 0; --i) {
        const nn::Tensor eps = p.predict_noise(x, tau[i]);
        const double level = s.alpha_bars[tau[i]];
        const double prev = i > 0 ? s.alpha_bars[tau[i - 1]] : 1.0;
        if (clip_x0)
            ddim_move_clipped(x, eps, level, prev);
        else
            ddim_move(x, eps, level, prev);
    }
    return x;
}

ImageTensor ddim_invert(const ImageTensor& x0, int k, const NoisePredictor& p, const NoiseSchedule& s) {
    return from_nchw(ddim_invert(to_nchw({&x0, 1}), k, p, s)).front();
}

ImageTensor ddim_denoise(const ImageTensor& xk, int k, const NoisePredictor& p, const NoiseSchedule& s,
                         bool clip_x0) {
    return from_nchw(ddim_denoise(to_nchw({&xk, 1}), k, p, s, clip_x0)).front();
}

}  // namespace tsg::diffusion
