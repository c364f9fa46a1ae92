#include "bagau/graph.hpp"

#include <sstream>
#include <stdexcept>

namespace bagau::nn {

std::string Shape4::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int first, int count) {
    const Shape4& s = t.shape();
    if (first < 0 || count < 0 || first + count > s.n) {
        throw std::out_of_range("batch slice out of range");
    }
    const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
    Tensor<T> out(Shape4{count, s.c, s.h, s.w});
    std::copy(t.data() + first * per, t.data() + (first + count) * per, out.data());
    return out;
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("stack_batch of nothing");
    }
    Shape4 s = parts.front().shape();
    int n = 0;
    for (const auto& p : parts) {
        const Shape4& ps = p.shape();
        if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
            throw std::invalid_argument("stack_batch shape mismatch");
        }
        n += ps.n;
    }
    s.n = n;
    Tensor<T> out(s);
    T* dst = out.data();
    for (const auto& p : parts) {
        dst = std::copy(p.data(), p.data() + p.numel(), dst);
    }
    return out;
}

template <typename T>
Var Graph<T>::input(Tensor<T> value, bool requires_grad) {
    Node node;
    node.owned = std::move(value);
    node.requires_grad = grad_enabled_ && requires_grad;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::parameter(const Tensor<T>& value, Tensor<T>* grad_sink) {
    Node node;
    node.borrowed = &value;
    node.sink = grad_sink;
    node.requires_grad = grad_enabled_ && grad_sink != nullptr;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    Node node;
    node.owned = std::move(value);
    bool any = false;
    for (const Var& p : parents) {
        if (p.valid() && nodes_.at(p.id).requires_grad) {
            any = true;
        }
    }
    node.requires_grad = grad_enabled_ && any;
    if (node.requires_grad) {
        node.backward = std::move(fn);
    }
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(int id) const {
    const Node& n = nodes_.at(id);
    return n.borrowed != nullptr ? *n.borrowed : n.owned;
}

template <typename T>
Tensor<T>& Graph<T>::grad(int id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) {
        n.grad = Tensor<T>(value(id).shape());
    }
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var out, const Tensor<T>& seed) {
    if (!grad_enabled_) {
        throw std::logic_error("backward on a graph built without gradients");
    }
    if (seed.shape() != value(out).shape()) {
        throw std::invalid_argument("backward seed shape " + seed.shape().str() +
                                    " does not match output " + value(out).shape().str());
    }
    if (!nodes_[out.id].requires_grad) {
        return;
    }
    Tensor<T>& g0 = grad(out);
    for (std::size_t i = 0; i < seed.numel(); ++i) {
        g0[i] += seed[i];
    }
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty()) {
            continue;
        }
        if (n.backward) {
            n.backward(*this, id);
        }
        if (n.sink != nullptr) {
            Tensor<T>& sink = *n.sink;
            for (std::size_t i = 0; i < n.grad.numel(); ++i) {
                sink[i] += n.grad[i];
            }
        }
        n.grad = Tensor<T>();
        if (id != out.id) {
            n.owned = Tensor<T>();
            n.backward = nullptr;
        }
    }
}

template class Graph<float>;
template class Graph<double>;
template Tensor<float> slice_batch(const Tensor<float>&, int, int);
template Tensor<double> slice_batch(const Tensor<double>&, int, int);
template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);

}  // namespace bagau::nn
