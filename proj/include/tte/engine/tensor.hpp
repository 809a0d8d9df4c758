#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "tte/error.hpp"

namespace tte::engine {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto s : shape) {
        n *= s;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out += (i ? ", " : "") + std::to_string(shape[i]);
    }
    return out + "]";
}

// Graph node. `backward` reads this node's grad and accumulates into the
// grads of its parents.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

// Shared handle to a node. Copies alias the same storage.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto node = std::make_shared<Node<T>>();
        node->value.assign(numel(shape), T(0));
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        if (requires_grad) {
            node->grad.assign(node->value.size(), T(0));
        }
        return Tensor(std::move(node));
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (values.size() != numel(shape)) {
            throw ConfigError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                              shape_str(shape));
        }
        auto t = zeros(std::move(shape), requires_grad);
        t.node_->value = std::move(values);
        return t;
    }

    explicit operator bool() const { return static_cast<bool>(node_); }

    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    std::span<T> grad() { return node_->grad; }
    std::span<const T> grad() const { return node_->grad; }
    T item() const { return node_->value.at(0); }

    bool requires_grad() const { return node_->requires_grad; }

    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

    // Reverse pass from a scalar. Leaf gradients accumulate.
    void backward() {
        if (size() != 1) {
            throw ConfigError("backward() needs a scalar, got shape " + shape_str(shape()));
        }
        if (!requires_grad()) {
            return;
        }
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node<T>* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) {
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->grad.assign(1, T(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) {
                (*it)->backward(**it);
            }
        }
    }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

// Disables graph recording on this thread for its lifetime. Results built
// inside never require gradients.
class NoGradGuard {
public:
    NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// New interior node whose parents are `inputs`. Gradient tracking is on when
// any input tracks gradients and recording is enabled.
template <class T>
Tensor<T> make_result(Shape shape, std::span<const Tensor<T>> inputs) {
    auto node = std::make_shared<Node<T>>();
    node->value.assign(numel(shape), T(0));
    node->shape = std::move(shape);
    if (grad_enabled()) {
        for (const auto& in : inputs) {
            if (in && in.requires_grad()) {
                node->requires_grad = true;
            }
        }
    }
    if (node->requires_grad) {
        node->grad.assign(node->value.size(), T(0));
        for (const auto& in : inputs) {
            if (in) {
                node->parents.push_back(in.ptr());
            }
        }
    }
    return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_result(Shape shape, std::initializer_list<Tensor<T>> inputs) {
    return make_result<T>(std::move(shape), std::span<const Tensor<T>>(inputs.begin(), inputs.size()));
}

}  // namespace tte::engine
