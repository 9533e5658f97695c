// SPDX-License-Identifier: Apache-2.0
#include "di2/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

namespace di2 {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <class T>
BasicTape<T> BasicTape<T>::record(const BasicTensor<T>& root) {
    BasicTape tape;
    if (!root.requires_grad()) return tape;
    // Iterative post-order DFS; a node is emitted after all of its parents.
    std::unordered_set<const Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
            continue;
        }
        tape.order_.push_back(node);
        stack.pop_back();
    }
    return tape;
}

template <class T>
void BasicTape<T>::backward() {
    if (order_.empty()) return;
    Node* root = order_.back();
    auto g = root->ensure_grad();
    for (auto& v : g) v += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace di2
