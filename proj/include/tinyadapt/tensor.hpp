#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tinyadapt/errors.hpp"

namespace tinyadapt {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <class T>
void check_finite(std::span<const T> values, const char* where) {
    for (const T v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + where);
    }
}

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

}  // namespace detail

/// Dense row-major array with reverse-mode gradient tracking. Copies share the
/// underlying node; use clone() or detach() for an independent buffer.
///
/// The scalar type is a template parameter so the gradient checker can replay
/// the exact same graph in double precision; training and inference use
/// `Tensor` (float).
template <class T>
class TensorT {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    TensorT() = default;

    TensorT(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        for (const auto d : shape) {
            if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
        check_finite<T>(data, "tensor construction");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return TensorT(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static TensorT full(Shape shape, T value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return TensorT(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static TensorT scalar(T value, bool requires_grad = false) {
        return TensorT({1}, {value}, requires_grad);
    }

    /// Internal: wraps an op result. Parents and the backward closure are only
    /// retained when some parent needs a gradient.
    static TensorT from_op(Shape shape, std::vector<T> data, std::vector<NodePtr> parents,
                           std::function<void(detail::Node<T>&)> backward) {
        TensorT out;
        out.node_ = std::make_shared<detail::Node<T>>();
        out.node_->shape = std::move(shape);
        out.node_->data = std::move(data);
        const bool needs = detail::grad_mode() &&
                           std::any_of(parents.begin(), parents.end(),
                                       [](const NodePtr& p) { return p->requires_grad; });
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->parents = std::move(parents);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Direct write access; only meaningful for leaves (parameters, inputs).
    std::span<T> mutable_data() { return node_->data; }
    T item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    T at(std::size_t i) const { return node_->data.at(i); }
    T at(std::size_t r, std::size_t c) const { return node_->data.at(r * dim(1) + c); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) {
        if (!node_->parents.empty()) throw Error("requires_grad can only be toggled on leaves");
        node_->requires_grad = on;
        if (!on) node_->grad.clear();
    }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Fresh leaf holding a copy of the values, cut from any graph.
    TensorT detach() const { return TensorT(shape(), node_->data, false); }
    TensorT clone() const { return TensorT(shape(), node_->data, requires_grad()); }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return TensorT<U>(shape(), std::move(out), requires_grad());
    }

    TensorT reshape(Shape new_shape) const {
        if (shape_numel(new_shape) != numel()) {
            throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
        }
        return from_op(std::move(new_shape), node_->data, {node_},
                       [p = node_](detail::Node<T>& self) {
                           auto& g = p->grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       });
    }

    /// Reverse-mode accumulation from a single-element tensor.
    void backward() {
        if (numel() != 1) throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));
        if (!node_->requires_grad) return;
        std::vector<detail::Node<T>*> order;
        std::unordered_set<detail::Node<T>*> seen;
        // Iterative post-order DFS.
        std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, idx] = stack.back();
            if (idx < n->parents.size()) {
                auto* p = n->parents[idx++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->grad_buffer()[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node<T>* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

using Tensor = TensorT<float>;

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

}  // namespace tinyadapt
