#pragma once

#include <limits>
#include <span>
#include <vector>

#include "tsg/nn/tensor.hpp"

namespace tsg::diffusion {

struct ValueRange {
    float lo = -1.0f;
    float hi = 1.0f;

    static constexpr ValueRange model() { return {-1.0f, 1.0f}; }
    static constexpr ValueRange unbounded() {
        return {-std::numeric_limits<float>::infinity(), std::numeric_limits<float>::infinity()};
    }
    bool contains(float v) const { return v >= lo && v <= hi; }
    friend bool operator==(const ValueRange&, const ValueRange&) = default;
};

// Single image, H x W x C interleaved. Noise and intermediate diffusion states
// use an unbounded range; data images live in the model range [-1, 1].
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, ValueRange range = ValueRange::model());
    // Throws DataError if any value lies outside `range`.
    ImageTensor(int height, int width, int channels, std::vector<float> data, ValueRange range = ValueRange::model());

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    int channels() const noexcept { return c_; }
    ValueRange range() const noexcept { return range_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool same_shape(const ImageTensor& o) const noexcept { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    float& at(int y, int x, int ch) { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + ch]; }
    float at(int y, int x, int ch) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + ch]; }

    bool within_range() const;
    // Clamps every value into `r` and adopts it as the declared range.
    void clamp_to(ValueRange r);

    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    int h_ = 0, w_ = 0, c_ = 0;
    ValueRange range_ = ValueRange::model();
    std::vector<float> data_;
};

// Batch conversion between images and the network's [N, C, H, W] layout.
nn::Tensor to_nchw(std::span<const ImageTensor> images);
std::vector<ImageTensor> from_nchw(const nn::Tensor& batch, ValueRange range = ValueRange::unbounded());

}  // namespace tsg::diffusion
