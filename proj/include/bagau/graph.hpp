#pragma once

#include <functional>
#include <vector>

#include "bagau/tensor.hpp"

namespace bagau::nn {

/// Handle to a node of a Graph.
struct Var {
    int id = -1;
    [[nodiscard]] bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Every op appends one node holding its output and a
/// closure that pushes the node's gradient into its parents.
///
/// Parameters are borrowed, not copied: the caller keeps the tensor alive for
/// the lifetime of the graph. Their gradients are accumulated into the sink
/// supplied at registration time when backward() reaches them.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, int self)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(Tensor<T> value, bool requires_grad = false);
    Var parameter(const Tensor<T>& value, Tensor<T>* grad_sink);

    /// Appends an op result. `fn` is dropped when no parent requires a gradient.
    Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn);
    Var record(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn);

    [[nodiscard]] const Tensor<T>& value(Var v) const { return value(v.id); }
    [[nodiscard]] const Tensor<T>& value(int id) const;
    [[nodiscard]] const Shape4& shape(Var v) const { return value(v).shape(); }
    [[nodiscard]] bool requires_grad(Var v) const { return requires_grad(v.id); }
    [[nodiscard]] bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }

    /// Gradient buffer of a node, zero-allocated on first access.
    Tensor<T>& grad(int id);
    Tensor<T>& grad(Var v) { return grad(v.id); }

    /// Runs reverse accumulation from `out` seeded with `seed` (same shape).
    /// Intermediate values are released once no remaining closure needs them.
    void backward(Var out, const Tensor<T>& seed);

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* borrowed = nullptr;
        Tensor<T> grad;
        Tensor<T>* sink = nullptr;
        bool requires_grad = false;
        BackwardFn backward;
    };

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

}  // namespace bagau::nn
