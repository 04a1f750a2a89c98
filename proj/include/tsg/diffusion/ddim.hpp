#pragma once

#include <vector>

#include "tsg/diffusion/predictor.hpp"
#include "tsg/diffusion/schedule.hpp"

namespace tsg::diffusion {

// Evenly spaced sub-schedule round(i * T / k), i = 0 .. k-1.
std::vector<int> ddim_timesteps(int T, int k);

// Deterministic DDIM (eta = 0) over the k-step sub-schedule. Inversion walks
// from the clean image (signal level 1) up to level abar[tau_{k-1}], evaluating
// eps at tau_i on step i; denoising retraces the same levels downwards. Each
// call performs exactly k predictor evaluations per image.
// clip_x0 clamps the predicted clean image to [-1, 1] at every denoising step;
// use it for sampling from pure noise, not for reconstruction.
nn::Tensor ddim_invert(const nn::Tensor& x0, int k, const NoisePredictor& p, const NoiseSchedule& s);
nn::Tensor ddim_denoise(const nn::Tensor& xk, int k, const NoisePredictor& p, const NoiseSchedule& s,
                        bool clip_x0 = false);

ImageTensor ddim_invert(const ImageTensor& x0, int k, const NoisePredictor& p, const NoiseSchedule& s);
ImageTensor ddim_denoise(const ImageTensor& xk, int k, const NoisePredictor& p, const NoiseSchedule& s,
                         bool clip_x0 = false);

}  // namespace tsg::diffusion
