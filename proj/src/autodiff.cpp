#include "neurosleep/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

namespace nsn {

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.size() != 1)
        throw std::invalid_argument("backward: root must be scalar, got " +
                                    Tensor::shape_str(root->value.shape()));

    // Iterative post-order DFS; recursion would overflow on long chains.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->requires_grad) n->backprop(*n);
    }
}

}  // namespace nsn
