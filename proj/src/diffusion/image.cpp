#include "tsg/diffusion/image.hpp"

#include <algorithm>

#include "tsg/common/error.hpp"

namespace tsg::diffusion {

ImageTensor::ImageTensor(int height, int width, int channels, ValueRange range)
    : h_(height), w_(width), c_(channels), range_(range) {
    if (h_ <= 0 || w_ <= 0 || c_ <= 0) throw DataError("image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(h_) * w_ * c_, std::clamp(0.0f, range.lo, range.hi));
}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<float> data, ValueRange range)
    : h_(height), w_(width), c_(channels), range_(range), data_(std::move(data)) {
    if (h_ <= 0 || w_ <= 0 || c_ <= 0) throw DataError("image dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(h_) * w_ * c_)
        throw DataError("image data has " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(static_cast<std::size_t>(h_) * w_ * c_));
    if (!within_range()) throw DataError("image values outside declared range");
}

bool ImageTensor::within_range() const {
    return std::all_of(data_.begin(), data_.end(), [this](float v) { return range_.contains(v); });
}

void ImageTensor::clamp_to(ValueRange r) {
    for (float& v : data_) v = std::clamp(v, r.lo, r.hi);
    range_ = r;
}

nn::Tensor to_nchw(std::span<const ImageTensor> images) {
    if (images.empty()) throw DataError("empty image batch");
    const ImageTensor& f = images.front();
    const int h = f.height(), w = f.width(), c = f.channels();
    nn::Tensor out({static_cast<int>(images.size()), c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (!images[n].same_shape(f)) throw DataError("images in a batch must share one shape");
        const float* src = images[n].values().data();
        float* dst = out.data() + n * plane * c;
        for (std::size_t p = 0; p < plane; ++p)
            for (int ch = 0; ch < c; ++ch) dst[ch * plane + p] = src[p * c + ch];
    }
    return out;
}

std::vector<ImageTensor> from_nchw(const nn::Tensor& batch, ValueRange range) {
    if (batch.rank() != 4) throw DataError("expected an [N, C, H, W] batch, got " + nn::to_string(batch.shape()));
    const int n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<ImageTensor> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::vector<float> d(plane * c);
        const float* src = batch.data() + i * plane * c;
        for (std::size_t p = 0; p < plane; ++p)
            for (int ch = 0; ch < c; ++ch) d[p * c + ch] = src[ch * plane + p];
        out.emplace_back(h, w, c, std::move(d), range);
    }
    return out;
}

}  // namespace tsg::diffusion
