#include "tsg/nn/autograd.hpp"

#include <unordered_set>

#include "tsg/common/error.hpp"

namespace tsg::nn {
namespace {
thread_local bool tls_grad_enabled = false;
}

Tensor& Node::grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0f);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

bool grad_enabled() noexcept { return tls_grad_enabled; }

GradGuard::GradGuard(bool enabled) : previous_(tls_grad_enabled) { tls_grad_enabled = enabled; }
GradGuard::~GradGuard() { tls_grad_enabled = previous_; }

Var make_result(Tensor value, std::initializer_list<Var> parents, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (tls_grad_enabled) {
        bool any = false;
        for (const Var& p : parents) any = any || p.requires_grad();
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (const Var& p : parents) node->parents.push_back(p.node());
            node->backward = std::move(backward);
        }
    }
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (root.value().size() != 1) throw ModelError("backward() without seed needs a scalar root");
    backward(root, Tensor(root.shape(), 1.0f));
}

void backward(const Var& root, const Tensor& seed) {
    if (!root.requires_grad()) throw ModelError("backward() on a value that does not require grad");
    if (seed.shape() != root.shape()) throw ModelError("backward seed shape mismatch");

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Node& r = *root.node();
    Tensor& g = r.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        if (n->grad.size() == n->value.size()) n->backward(*n);
        if (!n->retain_grad && n != &r) n->grad = Tensor();
    }
}

}  // namespace tsg::nn
