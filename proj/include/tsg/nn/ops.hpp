#pragma once

#include <span>

#include "tsg/nn/autograd.hpp"

namespace tsg::nn {

// 2-D convolution, NCHW input, OIHW weight. `bias` may be empty.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

// 1x1 convolution over [N, C, *spatial] with weight [O, C, 1...] (conv1d/conv2d
// checkpoint layouts both accepted). `bias` may be empty.
Var pointwise_conv(const Var& x, const Var& weight, const Var& bias);

// x [N, in] times weight^T [in, out] plus bias [out].
Var linear(const Var& x, const Var& weight, const Var& bias);

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, float eps = 1e-5f);

// Batch normalisation over (N, H, W). In training mode the running statistics
// are updated in place (unbiased variance, torch semantics).
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, float momentum = 0.1f, float eps = 1e-5f);

Var relu(const Var& x);
Var silu(const Var& x);

Var add(const Var& a, const Var& b);
// x [N, C, ...] + b [N, C] broadcast over trailing dims.
Var add_channelwise(const Var& x, const Var& b);
// x * (1 + scale) + shift, with scale/shift [N, C].
Var scale_shift(const Var& x, const Var& scale, const Var& shift);

// Channel (dim 1) slice of [N, C, ...].
Var slice_channels(const Var& x, int start, int count);
Var concat_channels(const Var& a, const Var& b);

Var avg_pool2x2(const Var& x);
Var upsample_nearest2x(const Var& x);
Var max_pool2d(const Var& x, int kernel, int stride, int padding);
// [N, C, H, W] -> [N, C]
Var global_avg_pool(const Var& x);

Var reshape(const Var& x, Shape shape);

// Multi-head self-attention over [N, heads * 3 * ch, L] with per-head q/k/v
// interleaving (split heads, then q/k/v). Returns [N, heads * ch, L].
Var qkv_attention(const Var& qkv, int heads);

// Mean squared error over all elements.
Var mse_loss(const Var& prediction, const Tensor& target);

// Mean softmax cross-entropy; logits [N, K], labels in [0, K).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

// Sinusoidal timestep features [N, dim]: cos block then sin block.
Tensor timestep_embedding(std::span<const float> timesteps, int dim, float max_period = 10000.0f);

}  // namespace tsg::nn
