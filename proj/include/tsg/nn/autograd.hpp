#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "tsg/nn/tensor.hpp"

namespace tsg::nn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    // Keep the gradient of a non-leaf node after backward (used for Grad-CAM taps).
    bool retain_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    // Zero-initialised gradient buffer matching value's shape.
    Tensor& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

// Shared handle to a graph node. Copies alias the same node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_retain_grad(bool on) { node_->retain_grad = on; }
    const NodePtr& node() const noexcept { return node_; }
    explicit operator bool() const noexcept { return static_cast<bool>(node_); }

private:
    NodePtr node_;
};

// Graph recording is off by default and enabled per thread with GradGuard.
bool grad_enabled() noexcept;

class GradGuard {
public:
    explicit GradGuard(bool enabled);
    ~GradGuard();
    GradGuard(const GradGuard&) = delete;
    GradGuard& operator=(const GradGuard&) = delete;

private:
    bool previous_;
};

// Wraps an op result. Parents and the backward closure are only recorded when
// grad mode is on and at least one parent requires grad.
Var make_result(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> backward);

// Seeds d(root)/d(root) = 1 for scalar roots.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

}  // namespace tsg::nn
