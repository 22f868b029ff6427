#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ci2p/errors.hpp"

namespace ci2p {

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <class S>
struct Node {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void()> backward_fn;  // reads this->grad, accumulates into parents
};

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

// Dense row-major tensor with a dynamically built reverse-mode tape.
// Copying a Tensor copies the handle, not the buffer.
template <class S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr<S> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), S(0), requires_grad);
    }

    static Tensor full(Shape shape, S value, bool requires_grad = false) {
        auto n = std::make_shared<Node<S>>();
        n->shape = std::move(shape);
        validate_shape(n->shape);
        n->data.assign(static_cast<std::size_t>(numel_of(n->shape)), value);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->data.size(), S(0));
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        validate_shape(shape);
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<Node<S>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        if (requires_grad) n->grad.assign(n->data.size(), S(0));
        return Tensor(std::move(n));
    }

    static Tensor scalar(S value) { return from_data({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

    std::vector<S>& data() { return node_->data; }
    const std::vector<S>& data() const { return node_->data; }
    std::vector<S>& grad() { return node_->grad; }
    const std::vector<S>& grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }

    void set_requires_grad(bool rg) {
        node_->requires_grad = rg;
        if (rg && node_->grad.size() != node_->data.size()) {
            node_->grad.assign(node_->data.size(), S(0));
        }
        if (!rg) node_->grad.clear();
    }

    S item() const {
        if (numel() != 1) {
            throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        }
        return node_->data[0];
    }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    // Leaf copy of the values; detached results never propagate gradients.
    Tensor detach() const { return from_data(node_->shape, node_->data, false); }

    bool all_finite() const {
        for (S v : node_->data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    // Reverse-mode sweep. Gradients accumulate into every requires_grad node
    // reachable from this scalar, in reverse topological order.
    void backward() {
        if (numel() != 1) {
            throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
        }
        if (!node_->requires_grad) return;

        std::vector<Node<S>*> order;
        std::unordered_set<Node<S>*> seen;
        topo(node_.get(), seen, order);

        node_->grad[0] += S(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn();
        }
    }

    NodePtr<S> node() const { return node_; }

    const char* op_name() const { return node_->op; }

private:
    static void validate_shape(const Shape& shape) {
        for (int d : shape) {
            if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
        }
    }

    static void topo(Node<S>* n, std::unordered_set<Node<S>*>& seen, std::vector<Node<S>*>& order) {
        if (!n->requires_grad || seen.count(n)) return;
        seen.insert(n);
        for (auto& p : n->parents) topo(p.get(), seen, order);
        order.push_back(n);
    }

    NodePtr<S> node_;
};

namespace detail {

// Result node for an op: requires_grad iff any parent does. Parents are only
// retained (and the grad buffer allocated) on the differentiable path.
template <class S>
Tensor<S> make_result(Shape shape, std::vector<S> data, std::vector<NodePtr<S>> parents,
                      const char* op) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->op = op;
    for (auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->grad.assign(n->data.size(), S(0));
        n->parents = std::move(parents);
    }
    return Tensor<S>(std::move(n));
}

template <class S>
void accum(const NodePtr<S>& p, const std::vector<S>& g) {
    if (!p->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
}

}  // namespace detail

// Walks the graph below `t` and returns the op name of the first non-finite
// node found (topological order), or empty string when everything is finite.
template <class S>
std::string first_nonfinite_node(const Tensor<S>& t) {
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::function<void(Node<S>*)> visit = [&](Node<S>* n) {
        if (seen.count(n)) return;
        seen.insert(n);
        for (auto& p : n->parents) visit(p.get());
        order.push_back(n);
    };
    visit(t.node().get());
    for (Node<S>* n : order) {
        for (S v : n->data) {
            if (!std::isfinite(static_cast<double>(v))) return n->op;
        }
    }
    return "";
}

template <class S>
void assert_all_finite(const Tensor<S>& t, const std::string& context) {
    if (!t.all_finite()) {
        std::string node = first_nonfinite_node(t);
        throw NumericError(context + ": non-finite value" +
                           (node.empty() ? "" : " (first non-finite node: " + node + ")"));
    }
}

}  // namespace ci2p
