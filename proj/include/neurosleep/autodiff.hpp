#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "neurosleep/tensor.hpp"

namespace nsn {

// Reverse-mode tape node. Ops build a DAG of these; backward() walks it in
// reverse topological order, accumulating into each node's grad.
struct Node {
    Tensor value;
    Tensor grad;  // same shape as value, zero until backward reaches it
    bool requires_grad = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into the parents' grads.
    std::function<void(Node&)> backprop;

    explicit Node(Tensor v, bool req = true)
        : value(std::move(v)), grad(value.shape()), requires_grad(req) {}
};

using Var = std::shared_ptr<Node>;

inline Var make_leaf(Tensor v, bool requires_grad = true) {
    return std::make_shared<Node>(std::move(v), requires_grad);
}

// Seeds the (scalar) root with gradient 1 and propagates. Grad accumulation
// is additive, so a second call without re-zeroing doubles leaf grads.
void backward(const Var& root);

}  // namespace nsn
