#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "midre/errors.hpp"

namespace midre {

namespace detail {

template <typename S>
struct TensorImpl {
    std::vector<size_t> shape;
    std::vector<S> data;
    std::vector<S> grad;  // sized like data iff a backward pass has touched it
    bool requires_grad = false;
    uint64_t seq = 0;  // creation order; the backward sweep runs in reverse
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_step;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
};

inline uint64_t next_seq() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
}

inline std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline size_t numel(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

}  // namespace detail

// Dense row-major tensor with optional gradient. Copies are shallow: they
// share storage, which is what parameter registries and the autograd graph
// rely on. Instantiated for float (training) and double (gradient checks).
template <typename S>
class Tensor {
public:
    using Impl = detail::TensorImpl<S>;

    Tensor() = default;

    static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(std::vector<size_t> shape, S value, bool requires_grad = false) {
        for (size_t d : shape)
            if (d == 0) throw ShapeError("tensor dimension must be positive, got " + detail::shape_str(shape));
        auto impl = std::make_shared<Impl>();
        impl->shape = std::move(shape);
        impl->data.assign(detail::numel(impl->shape), value);
        impl->requires_grad = requires_grad;
        impl->seq = detail::next_seq();
        return Tensor(std::move(impl));
    }

    static Tensor from_values(std::vector<size_t> shape, std::vector<S> values, bool requires_grad = false) {
        if (detail::numel(shape) != values.size())
            throw ShapeError("value count " + std::to_string(values.size()) + " does not fill shape " +
                             detail::shape_str(shape));
        Tensor t = zeros(std::move(shape), requires_grad);
        t.impl_->data = std::move(values);
        t.check_finite("from_values");
        return t;
    }

    static Tensor scalar(S value) { return from_values({1}, {value}); }

    bool empty() const { return impl_ == nullptr; }

    const std::vector<size_t>& shape() const { return impl_->shape; }
    size_t rank() const { return impl_->shape.size(); }
    size_t size() const { return impl_->data.size(); }
    size_t rows() const { return impl_->shape.at(0); }
    size_t cols() const { return impl_->shape.size() > 1 ? impl_->shape[1] : 1; }

    const std::vector<S>& values() const { return impl_->data; }
    std::vector<S>& values_mut() { return impl_->data; }

    S at(size_t r, size_t c) const { return impl_->data[r * cols() + c]; }
    S item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor " + detail::shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    bool has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }
    const std::vector<S>& grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.assign(impl_->data.size(), S(0)); }

    std::string shape_string() const { return detail::shape_str(impl_->shape); }

    void check_finite(const char* op) const {
        for (S v : impl_->data)
            if (!std::isfinite(v))
                throw NumericError(std::string("non-finite value produced by ") + op + " on tensor " +
                                   detail::shape_str(impl_->shape));
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// The recorded autograd graph for one scalar root: every reachable node that
// carries grad, ordered by creation sequence. Creation order is a valid
// topological order because an op's inputs always exist before its output.
template <typename S>
class Graph {
public:
    static Graph trace(const Tensor<S>& root) {
        Graph g;
        g.root_ = root.impl();
        std::vector<std::shared_ptr<detail::TensorImpl<S>>> stack{g.root_};
        std::unordered_set<const void*> seen;
        while (!stack.empty()) {
            auto node = stack.back();
            stack.pop_back();
            if (!node || !node->requires_grad) continue;
            if (!seen.insert(node.get()).second) continue;
            g.nodes_.push_back(node);
            for (auto& p : node->parents) stack.push_back(p);
        }
        std::sort(g.nodes_.begin(), g.nodes_.end(),
                  [](const auto& a, const auto& b) { return a->seq < b->seq; });
        return g;
    }

    // Seeds d(root)/d(root) = 1 and sweeps once, newest node first.
    void backward() {
        if (!root_ || root_->data.size() != 1)
            throw ShapeError("backward requires a scalar root");
        for (auto& n : nodes_) n->ensure_grad();
        root_->grad[0] += S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if ((*it)->backward_step) (*it)->backward_step(**it);
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<std::shared_ptr<detail::TensorImpl<S>>> nodes_;
    std::shared_ptr<detail::TensorImpl<S>> root_;
};

template <typename S>
void backward(const Tensor<S>& loss) {
    Graph<S>::trace(loss).backward();
}

}  // namespace midre
