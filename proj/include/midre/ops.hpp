#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "midre/rng.hpp"
#include "midre/tensor.hpp"

// Differentiable kernels. All loops accumulate in a fixed left-to-right
// order so repeated runs are bit-identical; every op validates shapes up
// front and checks its output for NaN/Inf.

namespace midre {

namespace detail {

// c (p×r) += a (p×q) · b (q×r)
template <typename S>
void gemm_acc(const S* a, const S* b, S* c, size_t p, size_t q, size_t r) {
    for (size_t i = 0; i < p; ++i)
        for (size_t k = 0; k < q; ++k) {
            const S aik = a[i * q + k];
            const S* brow = b + k * r;
            S* crow = c + i * r;
            for (size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
}

// c (p×q) += g (p×r) · bᵀ   with b stored (q×r)
template <typename S>
void gemm_nt_acc(const S* g, const S* b, S* c, size_t p, size_t r, size_t q) {
    for (size_t i = 0; i < p; ++i)
        for (size_t k = 0; k < q; ++k) {
            S acc = 0;
            const S* grow = g + i * r;
            const S* brow = b + k * r;
            for (size_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
            c[i * q + k] += acc;
        }
}

// c (q×r) += aᵀ · g   with a stored (p×q), g (p×r)
template <typename S>
void gemm_tn_acc(const S* a, const S* g, S* c, size_t p, size_t q, size_t r) {
    for (size_t i = 0; i < p; ++i)
        for (size_t k = 0; k < q; ++k) {
            const S aik = a[i * q + k];
            const S* grow = g + i * r;
            S* crow = c + k * r;
            for (size_t j = 0; j < r; ++j) crow[j] += aik * grow[j];
        }
}

template <typename S>
Tensor<S> make_result(std::vector<size_t> shape, std::vector<S> data, const char* op,
                      std::vector<std::shared_ptr<TensorImpl<S>>> parents,
                      std::function<void(TensorImpl<S>&)> backward_step) {
    auto impl = std::make_shared<TensorImpl<S>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->seq = next_seq();
    bool any_grad = false;
    for (auto& p : parents)
        if (p && p->requires_grad) any_grad = true;
    if (any_grad) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_step = std::move(backward_step);
    }
    Tensor<S> t(std::move(impl));
    t.check_finite(op);
    return t;
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + a.shape_string() + " and " + b.shape_string() +
                         " differ");
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return detail::make_result<S>(
        a.shape(), std::move(out), "add", {a.impl(), b.impl()}, [](auto& self) {
            for (int side = 0; side < 2; ++side) {
                auto& p = self.parents[side];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return detail::make_result<S>(
        a.shape(), std::move(out), "sub", {a.impl(), b.impl()}, [](auto& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return detail::make_result<S>(
        a.shape(), std::move(out), "mul", {a.impl(), b.impl()}, [](auto& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
            }
        });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
    std::vector<S> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    return detail::make_result<S>(
        a.shape(), std::move(out), "scale", {a.impl()}, [factor](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * factor;
        });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
    const size_t p = a.rows(), q = a.cols(), r = b.cols();
    std::vector<S> out(p * r, S(0));
    detail::gemm_acc(a.values().data(), b.values().data(), out.data(), p, q, r);
    return detail::make_result<S>(
        {p, r}, std::move(out), "matmul", {a.impl(), b.impl()}, [p, q, r](auto& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                detail::gemm_nt_acc(self.grad.data(), pb->data.data(), pa->grad.data(), p, r, q);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                detail::gemm_tn_acc(pa->data.data(), self.grad.data(), pb->grad.data(), p, q, r);
            }
        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor, got " + a.shape_string());
    const size_t p = a.rows(), q = a.cols();
    std::vector<S> out(p * q);
    for (size_t i = 0; i < p; ++i)
        for (size_t j = 0; j < q; ++j) out[j * p + i] = a.values()[i * q + j];
    return detail::make_result<S>(
        {q, p}, std::move(out), "transpose", {a.impl()}, [p, q](auto& self) {
            auto& pa = self.parents[0];
            pa->ensure_grad();
            for (size_t i = 0; i < p; ++i)
                for (size_t j = 0; j < q; ++j) pa->grad[i * q + j] += self.grad[j * p + i];
        });
}

// Row-wise softmax with max subtraction; rows sum to 1 for any finite input.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    if (x.rank() != 2 || x.cols() == 0)
        throw ShapeError("softmax_rows: expected n×k with k ≥ 1, got " + x.shape_string());
    const size_t n = x.rows(), k = x.cols();
    std::vector<S> out(n * k);
    for (size_t t = 0; t < n; ++t) {
        const S* row = x.values().data() + t * k;
        S m = row[0];
        for (size_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        S sum = 0;
        for (size_t j = 0; j < k; ++j) {
            out[t * k + j] = std::exp(row[j] - m);
            sum += out[t * k + j];
        }
        for (size_t j = 0; j < k; ++j) out[t * k + j] /= sum;
    }
    return detail::make_result<S>(
        x.shape(), std::move(out), "softmax_rows", {x.impl()}, [n, k](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t t = 0; t < n; ++t) {
                const S* y = self.data.data() + t * k;
                const S* g = self.grad.data() + t * k;
                S dot = 0;
                for (size_t j = 0; j < k; ++j) dot += g[j] * y[j];
                for (size_t j = 0; j < k; ++j) p->grad[t * k + j] += y[j] * (g[j] - dot);
            }
        });
}

// Exact-erf GELU: x·Φ(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr S kInvSqrt2 = S(0.70710678118654752440L);
    std::vector<S> out(x.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const S v = x.values()[i];
        out[i] = v * S(0.5) * (S(1) + std::erf(v * kInvSqrt2));
    }
    return detail::make_result<S>(
        x.shape(), std::move(out), "gelu", {x.impl()}, [](auto& self) {
            constexpr S inv_sqrt2 = S(0.70710678118654752440L);
            constexpr S inv_sqrt2pi = S(0.39894228040143267794L);
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                const S v = p->data[i];
                const S phi = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
                const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
                p->grad[i] += self.grad[i] * (phi + v * pdf);
            }
        });
}

// Mean negative log-softmax of the true class over the batch.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.rows() != labels.size())
        throw ShapeError("cross_entropy: logits " + logits.shape_string() + " vs " +
                         std::to_string(labels.size()) + " labels");
    const size_t b = logits.rows(), c = logits.cols();
    for (size_t i = 0; i < b; ++i)
        if (labels[i] < 0 || static_cast<size_t>(labels[i]) >= c)
            throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                             std::to_string(i) + " outside " + std::to_string(c) + " classes");
    std::vector<S> probs(b * c);
    S loss = 0;
    for (size_t i = 0; i < b; ++i) {
        const S* row = logits.values().data() + i * c;
        S m = row[0];
        for (size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        S sum = 0;
        for (size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(row[j] - m);
            sum += probs[i * c + j];
        }
        for (size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
        loss -= std::log(probs[i * c + labels[i]]);
    }
    loss /= S(b);
    return detail::make_result<S>(
        {1}, {loss}, "cross_entropy", {logits.impl()},
        [b, c, labels, probs = std::move(probs)](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            const S g = self.grad[0] / S(b);
            for (size_t i = 0; i < b; ++i)
                for (size_t j = 0; j < c; ++j) {
                    S delta = (static_cast<size_t>(labels[i]) == j) ? S(1) : S(0);
                    p->grad[i * c + j] += g * (probs[i * c + j] - delta);
                }
        });
}

template <typename S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
        throw ShapeError("concat_cols: " + a.shape_string() + " and " + b.shape_string());
    const size_t n = a.rows(), p = a.cols(), q = b.cols();
    std::vector<S> out(n * (p + q));
    for (size_t t = 0; t < n; ++t) {
        for (size_t j = 0; j < p; ++j) out[t * (p + q) + j] = a.values()[t * p + j];
        for (size_t j = 0; j < q; ++j) out[t * (p + q) + p + j] = b.values()[t * q + j];
    }
    return detail::make_result<S>(
        {n, p + q}, std::move(out), "concat_cols", {a.impl(), b.impl()}, [n, p, q](auto& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t t = 0; t < n; ++t)
                    for (size_t j = 0; j < p; ++j) pa->grad[t * p + j] += self.grad[t * (p + q) + j];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t t = 0; t < n; ++t)
                    for (size_t j = 0; j < q; ++j) pb->grad[t * q + j] += self.grad[t * (p + q) + p + j];
            }
        });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    const size_t c = parts[0].cols();
    size_t total = 0;
    std::vector<std::shared_ptr<detail::TensorImpl<S>>> parents;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != c)
            throw ShapeError("concat_rows: column mismatch, " + parts[0].shape_string() + " vs " +
                             p.shape_string());
        total += p.rows();
        parents.push_back(p.impl());
    }
    std::vector<S> out;
    out.reserve(total * c);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return detail::make_result<S>(
        {total, c}, std::move(out), "concat_rows", std::move(parents), [c](auto& self) {
            size_t offset = 0;
            for (auto& p : self.parents) {
                const size_t len = p->data.size();
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (size_t i = 0; i < len; ++i) p->grad[i] += self.grad[offset + i];
                }
                offset += len;
            }
        });
}

// Single column as an n×1 tensor.
template <typename S>
Tensor<S> col(const Tensor<S>& x, size_t j) {
    if (x.rank() != 2 || j >= x.cols())
        throw ShapeError("col: index " + std::to_string(j) + " in " + x.shape_string());
    const size_t n = x.rows(), k = x.cols();
    std::vector<S> out(n);
    for (size_t t = 0; t < n; ++t) out[t] = x.values()[t * k + j];
    return detail::make_result<S>(
        {n, 1}, std::move(out), "col", {x.impl()}, [j, k, n](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t t = 0; t < n; ++t) p->grad[t * k + j] += self.grad[t];
        });
}

// out[t][j] = a[t][j] · s[t], with s an n×1 column of per-row factors.
template <typename S>
Tensor<S> scale_rows(const Tensor<S>& a, const Tensor<S>& s) {
    if (a.rank() != 2 || s.rank() != 2 || s.cols() != 1 || s.rows() != a.rows())
        throw ShapeError("scale_rows: " + a.shape_string() + " with factors " + s.shape_string());
    const size_t n = a.rows(), d = a.cols();
    std::vector<S> out(n * d);
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < d; ++j) out[t * d + j] = a.values()[t * d + j] * s.values()[t];
    return detail::make_result<S>(
        a.shape(), std::move(out), "scale_rows", {a.impl(), s.impl()}, [n, d](auto& self) {
            auto& pa = self.parents[0];
            auto& ps = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t t = 0; t < n; ++t)
                    for (size_t j = 0; j < d; ++j) pa->grad[t * d + j] += self.grad[t * d + j] * ps->data[t];
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                for (size_t t = 0; t < n; ++t) {
                    S acc = 0;
                    for (size_t j = 0; j < d; ++j) acc += self.grad[t * d + j] * pa->data[t * d + j];
                    ps->grad[t] += acc;
                }
            }
        });
}

template <typename S>
Tensor<S> mean_rows(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("mean_rows: expected rank-2 tensor, got " + x.shape_string());
    const size_t n = x.rows(), d = x.cols();
    std::vector<S> out(d, S(0));
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < d; ++j) out[j] += x.values()[t * d + j];
    for (size_t j = 0; j < d; ++j) out[j] /= S(n);
    return detail::make_result<S>(
        {1, d}, std::move(out), "mean_rows", {x.impl()}, [n, d](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t t = 0; t < n; ++t)
                for (size_t j = 0; j < d; ++j) p->grad[t * d + j] += self.grad[j] / S(n);
        });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = 0;
    for (S v : x.values()) acc += v;
    return detail::make_result<S>(
        {1}, {acc}, "sum_all", {x.impl()}, [](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += self.grad[0];
        });
}

// Row gather from an embedding table; duplicate ids accumulate gradient.
template <typename S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank-2, got " + table.shape_string());
    const size_t v = table.rows(), d = table.cols(), n = ids.size();
    if (n == 0) throw ShapeError("embedding: empty id sequence");
    for (size_t t = 0; t < n; ++t)
        if (ids[t] < 0 || static_cast<size_t>(ids[t]) >= v)
            throw IndexError("embedding: token id " + std::to_string(ids[t]) + " outside vocab " +
                             std::to_string(v));
    std::vector<S> out(n * d);
    for (size_t t = 0; t < n; ++t)
        for (size_t j = 0; j < d; ++j) out[t * d + j] = table.values()[ids[t] * d + j];
    return detail::make_result<S>(
        {n, d}, std::move(out), "embedding", {table.impl()}, [ids, d, n](auto& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t t = 0; t < n; ++t)
                for (size_t j = 0; j < d; ++j) p->grad[ids[t] * d + j] += self.grad[t * d + j];
        });
}

// Right-pad or truncate x to exactly n rows; padded rows are copies of the
// 1×d pad row, which receives the summed gradient of every padded position.
template <typename S>
Tensor<S> align_rows(const Tensor<S>& x, size_t n, const Tensor<S>& pad) {
    if (x.rank() != 2 || pad.rank() != 2 || pad.rows() != 1 || pad.cols() != x.cols())
        throw ShapeError("align_rows: " + x.shape_string() + " with pad " + pad.shape_string());
    if (n == 0) throw ShapeError("align_rows: target row count must be positive");
    const size_t k = x.rows(), d = x.cols();
    const size_t keep = std::min(k, n);
    std::vector<S> out(n * d);
    for (size_t t = 0; t < keep; ++t)
        for (size_t j = 0; j < d; ++j) out[t * d + j] = x.values()[t * d + j];
    for (size_t t = keep; t < n; ++t)
        for (size_t j = 0; j < d; ++j) out[t * d + j] = pad.values()[j];
    return detail::make_result<S>(
        {n, d}, std::move(out), "align_rows", {x.impl(), pad.impl()}, [keep, n, d](auto& self) {
            auto& px = self.parents[0];
            auto& pp = self.parents[1];
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t t = 0; t < keep; ++t)
                    for (size_t j = 0; j < d; ++j) px->grad[t * d + j] += self.grad[t * d + j];
            }
            if (pp->requires_grad) {
                pp->ensure_grad();
                for (size_t t = keep; t < n; ++t)
                    for (size_t j = 0; j < d; ++j) pp->grad[j] += self.grad[t * d + j];
            }
        });
}

// Fresh leaf tensor with entries drawn uniformly from [lo, hi).
template <typename S>
Tensor<S> rand_uniform(Rng& rng, std::vector<size_t> shape, S lo, S hi, bool requires_grad = false) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape), requires_grad);
    for (S& v : t.values_mut()) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
}

}  // namespace midre
