#include "tsg/nn/tensor.hpp"

#include <algorithm>

#include "tsg/common/error.hpp"

namespace tsg::nn {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ModelError("negative dimension in shape " + to_string(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
        throw ModelError("tensor payload of " + std::to_string(data_.size()) + " values does not match shape " +
                         to_string(shape_));
    }
}

int Tensor::dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ModelError("dimension index out of range for shape " + to_string(shape_));
    return shape_[static_cast<std::size_t>(i)];
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape shape) {
    if (element_count(shape) != data_.size()) {
        throw ModelError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
}

}  // namespace tsg::nn
