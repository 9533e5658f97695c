// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with an attached reverse-mode tape.
//
// A tensor is a shared handle: copies alias the same buffer, which is what
// lets parameters participate in many graphs. Use clone() for a detached deep
// copy. The scalar type is a template parameter so gradient checks can run
// the exact same operation code in double precision; the runtime uses
// Tensor = BasicTensor<float>.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "di2/error.hpp"

namespace di2 {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thread-local switch for graph recording. Inference code runs under
// NoGradGuard so that concurrent rollouts never touch shared tape state.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
class BasicTensor {
public:
    using value_type = T;

    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until something is accumulated
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        std::span<T> ensure_grad() {
            if (grad.empty()) grad.assign(data.size(), T(0));
            return grad;
        }
    };

    BasicTensor() = default;

    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
        for (auto e : shape) {
            if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static BasicTensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static BasicTensor full(Shape shape, T value) {
        const auto n = shape_numel(shape);
        return BasicTensor(std::move(shape), std::vector<T>(n, value));
    }

    static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }

    // Builds an op result. Records the graph only when grad mode is on and
    // at least one parent takes part in differentiation.
    static BasicTensor from_op(Shape shape, std::vector<T> data,
                               std::initializer_list<const BasicTensor*> parents,
                               std::function<void(Node&)> backward) {
        return from_op(std::move(shape), std::move(data),
                       std::span<const BasicTensor* const>(parents.begin(), parents.size()),
                       std::move(backward));
    }

    static BasicTensor from_op(Shape shape, std::vector<T> data,
                               std::span<const BasicTensor* const> parents,
                               std::function<void(Node&)> backward) {
        BasicTensor out(std::move(shape), std::move(data));
        if (!GradMode::enabled()) return out;
        bool any = false;
        for (const auto* p : parents) any = any || p->requires_grad();
        if (!any) return out;
        out.node_->requires_grad = true;
        for (const auto* p : parents) out.node_->parents.push_back(p->node_);
        out.node_->backward = std::move(backward);
        return out;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad_mut() { return node_->ensure_grad(); }
    void zero_grad() { node_->grad.clear(); }

    // Detached deep copy that keeps the requires_grad flag.
    BasicTensor clone() const {
        return BasicTensor(node_->shape, node_->data, node_->requires_grad);
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Ordered record of the differentiable part of a graph. Nodes are stored in
// topological order (inputs before outputs); backward() walks it in reverse,
// calling each node's local-gradient closure exactly once.
template <class T>
class BasicTape {
public:
    using Node = typename BasicTensor<T>::Node;

    static BasicTape record(const BasicTensor<T>& root);

    const std::vector<Node*>& order() const { return order_; }
    std::size_t size() const { return order_.size(); }

    // Seeds d(root)/d(root) = 1 and propagates. Root must be scalar.
    void backward();

private:
    std::vector<Node*> order_;
};

template <class T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    BasicTape<T>::record(loss).backward();
}

// Detached copy converted to another scalar type.
template <class U, class T>
BasicTensor<U> tensor_cast(const BasicTensor<T>& t) {
    std::vector<U> v(t.values().begin(), t.values().end());
    return BasicTensor<U>(t.shape(), std::move(v), t.requires_grad());
}

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace di2
