#ifndef POSEDIFF_AUTOGRAD_HPP
#define POSEDIFF_AUTOGRAD_HPP

// Reverse-mode autograd on dense tensors, define-by-run. A Var wraps a graph
// node; ops build the graph while grad mode is on and backward() walks it in
// reverse creation order. Templated on the scalar type: training runs float,
// finite-difference gradient checks run double.
//
// Parallel kernels only ever split work across output elements, so results are
// bit-identical for any thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "tensor.hpp"

namespace posediff {
namespace ag {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated lazily in backward
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;

    void ensure_grad() {
        if (grad.v.empty()) {
            grad = Tensor<T>::zeros(val.shape);
        }
    }
};

inline uint64_t next_node_id() {
    static std::atomic<uint64_t> counter{0};
    return ++counter;
}

template <typename T>
class Var {
public:
    using NodePtr = std::shared_ptr<Node<T>>;

    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var leaf(Tensor<T> t, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        n->val = std::move(t);
        n->requires_grad = requires_grad;
        n->id = next_node_id();
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->val; }
    Tensor<T>& value() { return node_->val; }
    Tensor<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad = Tensor<T>(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->val.shape; }
    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

template <typename T>
Var<T> make_op(Tensor<T> out, std::vector<Var<T>> parents, std::function<void(Node<T>&)> bp) {
    auto n = std::make_shared<Node<T>>();
    n->val = std::move(out);
    n->id = next_node_id();
    if (grad_mode()) {
        bool need = false;
        for (const auto& p : parents) {
            need = need || p.requires_grad();
        }
        if (need) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (auto& p : parents) {
                n->parents.push_back(p.node());
            }
            n->backprop = std::move(bp);
        }
    }
    return Var<T>(std::move(n));
}

template <typename T>
void accum(const std::shared_ptr<Node<T>>& n, const Tensor<T>& g) {
    if (!n->requires_grad) {
        return;
    }
    n->ensure_grad();
    T* dst = n->grad.data();
    const T* src = g.data();
    int64_t m = n->grad.numel();
    for (int64_t i = 0; i < m; i++) {
        dst[i] += src[i];
    }
}

// Backward from a scalar root. Nodes run in reverse creation order, which is a
// valid topological order for a define-by-run graph.
template <typename T>
void backward(const Var<T>& root) {
    if (root.value().numel() != 1) {
        throw std::invalid_argument("backward: root must be a scalar");
    }
    auto rn = root.node();
    if (!rn->requires_grad) {
        return;
    }
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::shared_ptr<Node<T>>> stack{rn};
    seen.insert(rn.get());
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) {
                stack.push_back(p);
            }
        }
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->id > b->id; });
    rn->ensure_grad();
    rn->grad[0] = T(1);
    for (auto& n : order) {
        if (n->backprop) {
            n->backprop(*n);
        }
    }
}

// ---------------------------------------------------------------- elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a.value(), b.value())) {
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    Tensor<T> out = a.value();
    const T* bv = b.value().data();
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] += bv[i];
    }
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        accum(n.parents[0], n.grad);
        accum(n.parents[1], n.grad);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a.value(), b.value())) {
        throw std::invalid_argument("sub: shape mismatch");
    }
    Tensor<T> out = a.value();
    const T* bv = b.value().data();
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] -= bv[i];
    }
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        accum(n.parents[0], n.grad);
        Tensor<T> gb = n.grad;
        for (auto& x : gb.v) {
            x = -x;
        }
        accum(n.parents[1], gb);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    if (!same_shape(a.value(), b.value())) {
        throw std::invalid_argument("mul: shape mismatch");
    }
    Tensor<T> out = a.value();
    const T* bv = b.value().data();
    for (int64_t i = 0; i < out.numel(); i++) {
        out[i] *= bv[i];
    }
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
        const Tensor<T>& av = n.parents[0]->val;
        const Tensor<T>& bv2 = n.parents[1]->val;
        Tensor<T> ga = n.grad;
        Tensor<T> gb = n.grad;
        for (int64_t i = 0; i < ga.numel(); i++) {
            ga[i] *= bv2[i];
            gb[i] *= av[i];
        }
        accum(n.parents[0], ga);
        accum(n.parents[1], gb);
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, double s) {
    Tensor<T> out = a.value();
    for (auto& x : out.v) {
        x = static_cast<T>(x * s);
    }
    return make_op<T>(std::move(out), {a}, [s](Node<T>& n) {
        Tensor<T> g = n.grad;
        for (auto& x : g.v) {
            x = static_cast<T>(x * s);
        }
        accum(n.parents[0], g);
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double s) {
    Tensor<T> out = a.value();
    for (auto& x : out.v) {
        x = static_cast<T>(x + s);
    }
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) { accum(n.parents[0], n.grad); });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& x : out.v) {
        x = static_cast<T>(x / (T(1) + std::exp(-x)));
    }
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        const Tensor<T>& x = n.parents[0]->val;
        Tensor<T> g = n.grad;
        for (int64_t i = 0; i < g.numel(); i++) {
            T s = T(1) / (T(1) + std::exp(-x[i]));
            g[i] *= s * (T(1) + x[i] * (T(1) - s));
        }
        accum(n.parents[0], g);
    });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& x : out.v) {
        x = std::exp(x);
    }
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        Tensor<T> g = n.grad;
        for (int64_t i = 0; i < g.numel(); i++) {
            g[i] *= n.val[i];
        }
        accum(n.parents[0], g);
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& x : out.v) {
        x = T(1) / (T(1) + std::exp(-x));
    }
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        const Tensor<T>& y = n.val;
        Tensor<T> g = n.grad;
        for (int64_t i = 0; i < g.numel(); i++) {
            g[i] *= y[i] * (T(1) - y[i]);
        }
        accum(n.parents[0], g);
    });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T s = 0;
    for (const auto& x : a.value().v) {
        s += x;
    }
    return make_op<T>(Tensor<T>::scalar(s), {a}, [](Node<T>& n) {
        Tensor<T> g(n.parents[0]->val.shape, n.grad[0]);
        accum(n.parents[0], g);
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    T s = 0;
    for (const auto& x : a.value().v) {
        s += x;
    }
    int64_t m = a.value().numel();
    return make_op<T>(Tensor<T>::scalar(s / static_cast<T>(m)), {a}, [m](Node<T>& n) {
        Tensor<T> g(n.parents[0]->val.shape, n.grad[0] / static_cast<T>(m));
        accum(n.parents[0], g);
    });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

// ---------------------------------------------------------------- shape ops

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    if (numel_of(shape) != a.value().numel()) {
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(a.shape()) + " -> " +
                                    shape_str(shape));
    }
    Tensor<T> out = a.value();
    out.shape = shape;
    return make_op<T>(std::move(out), {a}, [](Node<T>& n) {
        Tensor<T> g = n.grad;
        g.shape = n.parents[0]->val.shape;
        accum(n.parents[0], g);
    });
}

namespace detail {

inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; i--) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

template <typename T>
Tensor<T> permute_tensor(const Tensor<T>& in, const std::vector<int>& perm) {
    Shape oshape(perm.size());
    for (size_t i = 0; i < perm.size(); i++) {
        oshape[i] = in.shape[static_cast<size_t>(perm[i])];
    }
    Tensor<T> out(oshape);
    auto istr = strides_of(in.shape);
    // stride of output index i in the input buffer
    std::vector<int64_t> map(perm.size());
    for (size_t i = 0; i < perm.size(); i++) {
        map[i] = istr[static_cast<size_t>(perm[i])];
    }
    int rank = static_cast<int>(perm.size());
    std::vector<int64_t> idx(perm.size(), 0);
    int64_t src = 0;
    for (int64_t o = 0; o < out.numel(); o++) {
        out[o] = in.v[static_cast<size_t>(src)];
        for (int d = rank - 1; d >= 0; d--) {
            idx[static_cast<size_t>(d)]++;
            src += map[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < oshape[static_cast<size_t>(d)]) {
                break;
            }
            src -= map[static_cast<size_t>(d)] * oshape[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> perm) {
    if (perm.size() != a.value().shape.size()) {
        throw std::invalid_argument("permute: rank mismatch");
    }
    Tensor<T> out = detail::permute_tensor(a.value(), perm);
    return make_op<T>(std::move(out), {a}, [perm](Node<T>& n) {
        std::vector<int> inv(perm.size());
        for (size_t i = 0; i < perm.size(); i++) {
            inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
        }
        accum(n.parents[0], detail::permute_tensor(n.grad, inv));
    });
}

template <typename T>
Var<T> slice(const Var<T>& a, int dim, int64_t start, int64_t len) {
    const Shape& s = a.value().shape;
    if (dim < 0 || dim >= static_cast<int>(s.size()) || start < 0 ||
        start + len > s[static_cast<size_t>(dim)]) {
        throw std::invalid_argument("slice: out of range");
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; i++) {
        outer *= s[static_cast<size_t>(i)];
    }
    for (size_t i = static_cast<size_t>(dim) + 1; i < s.size(); i++) {
        inner *= s[i];
    }
    int64_t d = s[static_cast<size_t>(dim)];
    Shape oshape = s;
    oshape[static_cast<size_t>(dim)] = len;
    Tensor<T> out(oshape);
    for (int64_t o = 0; o < outer; o++) {
        std::memcpy(out.data() + o * len * inner,
                    a.value().data() + (o * d + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(T));
    }
    return make_op<T>(std::move(out), {a}, [dim, start, len, outer, inner, d](Node<T>& n) {
        Tensor<T> g = Tensor<T>::zeros(n.parents[0]->val.shape);
        for (int64_t o = 0; o < outer; o++) {
            T* dst = g.data() + (o * d + start) * inner;
            const T* src = n.grad.data() + o * len * inner;
            for (int64_t i = 0; i < len * inner; i++) {
                dst[i] += src[i];
            }
        }
        accum(n.parents[0], g);
    });
}

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, int dim) {
    const Shape& sa = a.value().shape;
    const Shape& sb = b.value().shape;
    if (sa.size() != sb.size()) {
        throw std::invalid_argument("concat: rank mismatch");
    }
    for (size_t i = 0; i < sa.size(); i++) {
        if (static_cast<int>(i) != dim && sa[i] != sb[i]) {
            throw std::invalid_argument("concat: shape mismatch off the concat dim");
        }
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; i++) {
        outer *= sa[static_cast<size_t>(i)];
    }
    for (size_t i = static_cast<size_t>(dim) + 1; i < sa.size(); i++) {
        inner *= sa[i];
    }
    int64_t da = sa[static_cast<size_t>(dim)], db = sb[static_cast<size_t>(dim)];
    Shape oshape = sa;
    oshape[static_cast<size_t>(dim)] = da + db;
    Tensor<T> out(oshape);
    for (int64_t o = 0; o < outer; o++) {
        std::memcpy(out.data() + o * (da + db) * inner, a.value().data() + o * da * inner,
                    static_cast<size_t>(da * inner) * sizeof(T));
        std::memcpy(out.data() + (o * (da + db) + da) * inner, b.value().data() + o * db * inner,
                    static_cast<size_t>(db * inner) * sizeof(T));
    }
    return make_op<T>(std::move(out), {a, b}, [dim, outer, inner, da, db](Node<T>& n) {
        Tensor<T> ga(n.parents[0]->val.shape);
        Tensor<T> gb(n.parents[1]->val.shape);
        for (int64_t o = 0; o < outer; o++) {
            std::memcpy(ga.data() + o * da * inner, n.grad.data() + o * (da + db) * inner,
                        static_cast<size_t>(da * inner) * sizeof(T));
            std::memcpy(gb.data() + o * db * inner,
                        n.grad.data() + (o * (da + db) + da) * inner,
                        static_cast<size_t>(db * inner) * sizeof(T));
        }
        accum(n.parents[0], ga);
        accum(n.parents[1], gb);
    });
}

// Broadcast a size-1 axis to `times` copies.
template <typename T>
Var<T> repeat_dim(const Var<T>& a, int dim, int64_t times) {
    const Shape& s = a.value().shape;
    if (s[static_cast<size_t>(dim)] != 1) {
        throw std::invalid_argument("repeat_dim: axis must have size 1");
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < dim; i++) {
        outer *= s[static_cast<size_t>(i)];
    }
    for (size_t i = static_cast<size_t>(dim) + 1; i < s.size(); i++) {
        inner *= s[i];
    }
    Shape oshape = s;
    oshape[static_cast<size_t>(dim)] = times;
    Tensor<T> out(oshape);
    for (int64_t o = 0; o < outer; o++) {
        for (int64_t r = 0; r < times; r++) {
            std::memcpy(out.data() + (o * times + r) * inner, a.value().data() + o * inner,
                        static_cast<size_t>(inner) * sizeof(T));
        }
    }
    return make_op<T>(std::move(out), {a}, [outer, inner, times](Node<T>& n) {
        Tensor<T> g = Tensor<T>::zeros(n.parents[0]->val.shape);
        for (int64_t o = 0; o < outer; o++) {
            T* dst = g.data() + o * inner;
            for (int64_t r = 0; r < times; r++) {
                const T* src = n.grad.data() + (o * times + r) * inner;
                for (int64_t i = 0; i < inner; i++) {
                    dst[i] += src[i];
                }
            }
        }
        accum(n.parents[0], g);
    });
}

// x (..., C) + b (C)
template <typename T>
Var<T> add_rowbcast(const Var<T>& x, const Var<T>& b) {
    int64_t c = b.value().numel();
    if (x.value().shape.back() != c) {
        throw std::invalid_argument("add_rowbcast: trailing dim mismatch");
    }
    Tensor<T> out = x.value();
    int64_t rows = out.numel() / c;
    const T* bv = b.value().data();
    for (int64_t r = 0; r < rows; r++) {
        T* row = out.data() + r * c;
        for (int64_t i = 0; i < c; i++) {
            row[i] += bv[i];
        }
    }
    return make_op<T>(std::move(out), {x, b}, [rows, c](Node<T>& n) {
        accum(n.parents[0], n.grad);
        Tensor<T> gb = Tensor<T>::zeros(n.parents[1]->val.shape);
        for (int64_t r = 0; r < rows; r++) {
            const T* row = n.grad.data() + r * c;
            for (int64_t i = 0; i < c; i++) {
                gb[i] += row[i];
            }
        }
        accum(n.parents[1], gb);
    });
}

// ---------------------------------------------------------------- matmul

namespace detail {

// C (M,N) += A (M,K) @ B (K,N); C must be zeroed by the caller.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; i++) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; p++) {
            T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; j++) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C (M,N) += A (M,K) @ B(N,K)^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; i++) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; j++) {
            const T* brow = b + j * k;
            T s = 0;
            for (int64_t p = 0; p < k; p++) {
                s += arow[p] * brow[p];
            }
            crow[j] += s;
        }
    }
}

// C (M,N) += A (R,M)^T @ B (R,N)
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t r, int64_t m, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; i++) {
        T* crow = c + i * n;
        for (int64_t p = 0; p < r; p++) {
            T av = a[p * m + i];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; j++) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace detail

// a (M,K) @ b (K,N) -> (M,N)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Shape& sa = a.value().shape;
    const Shape& sb = b.value().shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        throw std::invalid_argument("matmul: need (M,K)x(K,N), got " + shape_str(sa) + " x " +
                                    shape_str(sb));
    }
    int64_t m = sa[0], k = sa[1], n = sb[1];
    Tensor<T> out(Shape{m, n});
    detail::mm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
    return make_op<T>(std::move(out), {a, b}, [m, k, n](Node<T>& node) {
        const Tensor<T>& av = node.parents[0]->val;
        const Tensor<T>& bv = node.parents[1]->val;
        Tensor<T> ga(Shape{m, k});
        Tensor<T> gb(Shape{k, n});
        detail::mm_nt(node.grad.data(), bv.data(), ga.data(), m, n, k);
        detail::mm_tn(av.data(), node.grad.data(), gb.data(), m, k, n);
        accum(node.parents[0], ga);
        accum(node.parents[1], gb);
    });
}

// a (B,M,K) @ b (B,K,N) -> (B,M,N)
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
    const Shape& sa = a.value().shape;
    const Shape& sb = b.value().shape;
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) {
        throw std::invalid_argument("bmm: need (B,M,K)x(B,K,N), got " + shape_str(sa) + " x " +
                                    shape_str(sb));
    }
    int64_t bs = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Tensor<T> out(Shape{bs, m, n});
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < bs; i++) {
        const T* ap = a.value().data() + i * m * k;
        const T* bp = b.value().data() + i * k * n;
        T* cp = out.data() + i * m * n;
        for (int64_t r = 0; r < m; r++) {
            for (int64_t p = 0; p < k; p++) {
                T av = ap[r * k + p];
                const T* brow = bp + p * n;
                T* crow = cp + r * n;
                for (int64_t j = 0; j < n; j++) {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
    return make_op<T>(std::move(out), {a, b}, [bs, m, k, n](Node<T>& node) {
        const Tensor<T>& av = node.parents[0]->val;
        const Tensor<T>& bv = node.parents[1]->val;
        Tensor<T> ga(Shape{bs, m, k});
        Tensor<T> gb(Shape{bs, k, n});
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < bs; i++) {
            const T* gp = node.grad.data() + i * m * n;
            const T* bp = bv.data() + i * k * n;
            const T* ap = av.data() + i * m * k;
            T* gap = ga.data() + i * m * k;
            T* gbp = gb.data() + i * k * n;
            // ga = g @ b^T
            for (int64_t r = 0; r < m; r++) {
                for (int64_t p = 0; p < k; p++) {
                    T s = 0;
                    const T* grow = gp + r * n;
                    const T* brow = bp + p * n;
                    for (int64_t j = 0; j < n; j++) {
                        s += grow[j] * brow[j];
                    }
                    gap[r * k + p] += s;
                }
            }
            // gb = a^T @ g
            for (int64_t r = 0; r < m; r++) {
                for (int64_t p = 0; p < k; p++) {
                    T av2 = ap[r * k + p];
                    const T* grow = gp + r * n;
                    T* gbrow = gbp + p * n;
                    for (int64_t j = 0; j < n; j++) {
                        gbrow[j] += av2 * grow[j];
                    }
                }
            }
        }
        accum(node.parents[0], ga);
        accum(node.parents[1], gb);
    });
}

// ---------------------------------------------------------------- softmax

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
    const Shape& s = a.value().shape;
    int64_t c = s.back();
    int64_t rows = a.value().numel() / c;
    Tensor<T> out = a.value();
    // accumulate in double regardless of T
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; r++) {
        T* row = out.data() + r * c;
        T mx = row[0];
        for (int64_t i = 1; i < c; i++) {
            mx = std::max(mx, row[i]);
        }
        double sum = 0;
        for (int64_t i = 0; i < c; i++) {
            row[i] = static_cast<T>(std::exp(static_cast<double>(row[i]) - mx));
            sum += row[i];
        }
        T inv = static_cast<T>(1.0 / sum);
        for (int64_t i = 0; i < c; i++) {
            row[i] *= inv;
        }
    }
    return make_op<T>(std::move(out), {a}, [rows, c](Node<T>& n) {
        Tensor<T> g = n.grad;
        const Tensor<T>& y = n.val;
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; r++) {
            T* grow = g.data() + r * c;
            const T* yrow = y.data() + r * c;
            T dot = 0;
            for (int64_t i = 0; i < c; i++) {
                dot += grow[i] * yrow[i];
            }
            for (int64_t i = 0; i < c; i++) {
                grow[i] = yrow[i] * (grow[i] - dot);
            }
        }
        accum(n.parents[0], g);
    });
}

// ---------------------------------------------------------------- norms

// x (..., C); stats per row over the trailing dim.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, double eps = 1e-5) {
    int64_t c = gamma.value().numel();
    if (x.value().shape.back() != c || beta.value().numel() != c) {
        throw std::invalid_argument("layer_norm: channel mismatch");
    }
    int64_t rows = x.value().numel() / c;
    Tensor<T> out(x.value().shape);
    Tensor<T> xhat(x.value().shape);
    Tensor<T> inv_std(Shape{rows});
    const T* xp = x.value().data();
    const T* gp = gamma.value().data();
    const T* bp = beta.value().data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; r++) {
        const T* row = xp + r * c;
        T mu = 0;
        for (int64_t i = 0; i < c; i++) {
            mu += row[i];
        }
        mu /= static_cast<T>(c);
        T var = 0;
        for (int64_t i = 0; i < c; i++) {
            T d = row[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
        inv_std[r] = inv;
        T* orow = out.data() + r * c;
        T* hrow = xhat.data() + r * c;
        for (int64_t i = 0; i < c; i++) {
            hrow[i] = (row[i] - mu) * inv;
            orow[i] = hrow[i] * gp[i] + bp[i];
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      [rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
                          const T* gp = n.parents[1]->val.data();
                          Tensor<T> gx(n.parents[0]->val.shape);
                          Tensor<T> ggamma = Tensor<T>::zeros(n.parents[1]->val.shape);
                          Tensor<T> gbeta = Tensor<T>::zeros(n.parents[2]->val.shape);
#pragma omp parallel for schedule(static)
                          for (int64_t r = 0; r < rows; r++) {
                              const T* grow = n.grad.data() + r * c;
                              const T* hrow = xhat.data() + r * c;
                              T* dxrow = gx.data() + r * c;
                              T s1 = 0, s2 = 0;
                              for (int64_t i = 0; i < c; i++) {
                                  s1 += grow[i] * gp[i];
                                  s2 += grow[i] * gp[i] * hrow[i];
                              }
                              s1 /= static_cast<T>(c);
                              s2 /= static_cast<T>(c);
                              for (int64_t i = 0; i < c; i++) {
                                  dxrow[i] = inv_std[r] * (grow[i] * gp[i] - s1 - hrow[i] * s2);
                              }
                          }
                          for (int64_t r = 0; r < rows; r++) {
                              const T* grow = n.grad.data() + r * c;
                              const T* hrow = xhat.data() + r * c;
                              for (int64_t i = 0; i < c; i++) {
                                  ggamma[i] += grow[i] * hrow[i];
                                  gbeta[i] += grow[i];
                              }
                          }
                          accum(n.parents[0], gx);
                          accum(n.parents[1], ggamma);
                          accum(n.parents[2], gbeta);
                      });
}

// x (N,H,W,C); stats per (sample, group) over H*W*(C/groups).
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  double eps = 1e-5) {
    const Shape& s = x.value().shape;
    if (s.size() != 4) {
        throw std::invalid_argument("group_norm: expected (N,H,W,C)");
    }
    int64_t n = s[0], h = s[1], w = s[2], c = s[3];
    if (c % groups != 0 || gamma.value().numel() != c || beta.value().numel() != c) {
        throw std::invalid_argument("group_norm: channel/group mismatch");
    }
    int64_t cg = c / groups;
    int64_t m = h * w * cg;  // elements per stat group
    Tensor<T> out(s);
    Tensor<T> xhat(s);
    Tensor<T> inv_std(Shape{n, static_cast<int64_t>(groups)});
    const T* xp = x.value().data();
    const T* gp = gamma.value().data();
    const T* bp = beta.value().data();
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ni = 0; ni < n; ni++) {
        for (int64_t g = 0; g < groups; g++) {
            T mu = 0;
            for (int64_t px = 0; px < h * w; px++) {
                const T* base = xp + (ni * h * w + px) * c + g * cg;
                for (int64_t i = 0; i < cg; i++) {
                    mu += base[i];
                }
            }
            mu /= static_cast<T>(m);
            T var = 0;
            for (int64_t px = 0; px < h * w; px++) {
                const T* base = xp + (ni * h * w + px) * c + g * cg;
                for (int64_t i = 0; i < cg; i++) {
                    T d = base[i] - mu;
                    var += d * d;
                }
            }
            var /= static_cast<T>(m);
            T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            inv_std.at(ni, g) = inv;
            for (int64_t px = 0; px < h * w; px++) {
                int64_t off = (ni * h * w + px) * c + g * cg;
                for (int64_t i = 0; i < cg; i++) {
                    T xh = (xp[off + i] - mu) * inv;
                    xhat[off + i] = xh;
                    out[off + i] = xh * gp[g * cg + i] + bp[g * cg + i];
                }
            }
        }
    }
    return make_op<T>(
        std::move(out), {x, gamma, beta},
        [n, h, w, c, groups, cg, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& nd) {
            const T* gp = nd.parents[1]->val.data();
            Tensor<T> gx(nd.parents[0]->val.shape);
            Tensor<T> ggamma = Tensor<T>::zeros(nd.parents[1]->val.shape);
            Tensor<T> gbeta = Tensor<T>::zeros(nd.parents[2]->val.shape);
#pragma omp parallel for collapse(2) schedule(static)
            for (int64_t ni = 0; ni < n; ni++) {
                for (int64_t g = 0; g < groups; g++) {
                    T s1 = 0, s2 = 0;
                    for (int64_t px = 0; px < h * w; px++) {
                        int64_t off = (ni * h * w + px) * c + g * cg;
                        for (int64_t i = 0; i < cg; i++) {
                            T gg = nd.grad[off + i] * gp[g * cg + i];
                            s1 += gg;
                            s2 += gg * xhat[off + i];
                        }
                    }
                    s1 /= static_cast<T>(m);
                    s2 /= static_cast<T>(m);
                    T inv = inv_std.at(ni, g);
                    for (int64_t px = 0; px < h * w; px++) {
                        int64_t off = (ni * h * w + px) * c + g * cg;
                        for (int64_t i = 0; i < cg; i++) {
                            T gg = nd.grad[off + i] * gp[g * cg + i];
                            gx[off + i] = inv * (gg - s1 - xhat[off + i] * s2);
                        }
                    }
                }
            }
            for (int64_t ni = 0; ni < n; ni++) {
                for (int64_t px = 0; px < h * w; px++) {
                    int64_t off = (ni * h * w + px) * c;
                    for (int64_t i = 0; i < c; i++) {
                        ggamma[i] += nd.grad[off + i] * xhat[off + i];
                        gbeta[i] += nd.grad[off + i];
                    }
                }
            }
            accum(nd.parents[0], gx);
            accum(nd.parents[1], ggamma);
            accum(nd.parents[2], gbeta);
        });
}

// ---------------------------------------------------------------- conv

struct ConvSpec {
    int stride = 1;
    int pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;

    static ConvSpec same3x3() { return {1, 1, 1, 1, 1}; }
    static ConvSpec padded(int stride, int pad) { return {stride, pad, pad, pad, pad}; }
};

namespace detail {

template <typename T>
void conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& cs,
                Tensor<T>& out) {
    int64_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], ci = x.shape[3];
    int64_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3];
    int64_t oh = out.shape[1], ow = out.shape[2];
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ni = 0; ni < n; ni++) {
        for (int64_t oy = 0; oy < oh; oy++) {
            T* orow = out.data() + (ni * oh + oy) * ow * co;
            for (int64_t ox = 0; ox < ow; ox++) {
                T* opix = orow + ox * co;
                for (int64_t j = 0; j < co; j++) {
                    opix[j] = b[j];
                }
            }
            for (int64_t ky = 0; ky < kh; ky++) {
                int64_t iy = oy * cs.stride + ky - cs.pad_top;
                if (iy < 0 || iy >= h) {
                    continue;
                }
                for (int64_t ox = 0; ox < ow; ox++) {
                    T* opix = orow + ox * co;
                    for (int64_t kx = 0; kx < kw; kx++) {
                        int64_t ix = ox * cs.stride + kx - cs.pad_left;
                        if (ix < 0 || ix >= wd) {
                            continue;
                        }
                        const T* xpix = x.data() + ((ni * h + iy) * wd + ix) * ci;
                        const T* wbase = w.data() + (ky * kw + kx) * ci * co;
                        for (int64_t ic = 0; ic < ci; ic++) {
                            T xv = xpix[ic];
                            const T* wrow = wbase + ic * co;
                            for (int64_t j = 0; j < co; j++) {
                                opix[j] += xv * wrow[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_input(const Tensor<T>& g, const Tensor<T>& w, const ConvSpec& cs, Tensor<T>& gx) {
    int64_t n = gx.shape[0], h = gx.shape[1], wd = gx.shape[2], ci = gx.shape[3];
    int64_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3];
    int64_t oh = g.shape[1], ow = g.shape[2];
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ni = 0; ni < n; ni++) {
        for (int64_t iy = 0; iy < h; iy++) {
            T* gxrow = gx.data() + (ni * h + iy) * wd * ci;
            for (int64_t ky = 0; ky < kh; ky++) {
                int64_t t = iy + cs.pad_top - ky;
                if (t < 0 || t % cs.stride != 0) {
                    continue;
                }
                int64_t oy = t / cs.stride;
                if (oy >= oh) {
                    continue;
                }
                for (int64_t ox = 0; ox < ow; ox++) {
                    const T* gpix = g.data() + ((ni * oh + oy) * ow + ox) * co;
                    for (int64_t kx = 0; kx < kw; kx++) {
                        int64_t ix = ox * cs.stride + kx - cs.pad_left;
                        if (ix < 0 || ix >= wd) {
                            continue;
                        }
                        T* gxpix = gxrow + ix * ci;
                        const T* wbase = w.data() + (ky * kw + kx) * ci * co;
                        for (int64_t ic = 0; ic < ci; ic++) {
                            const T* wrow = wbase + ic * co;
                            T s = 0;
                            for (int64_t j = 0; j < co; j++) {
                                s += gpix[j] * wrow[j];
                            }
                            gxpix[ic] += s;
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_bwd_weight(const Tensor<T>& x, const Tensor<T>& g, const ConvSpec& cs, Tensor<T>& gw,
                       Tensor<T>& gb) {
    int64_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], ci = x.shape[3];
    int64_t kh = gw.shape[0], kw = gw.shape[1], co = gw.shape[3];
    int64_t oh = g.shape[1], ow = g.shape[2];
#pragma omp parallel for collapse(3) schedule(static)
    for (int64_t ky = 0; ky < kh; ky++) {
        for (int64_t kx = 0; kx < kw; kx++) {
            for (int64_t ic = 0; ic < ci; ic++) {
                T* gwrow = gw.data() + ((ky * kw + kx) * ci + ic) * co;
                for (int64_t ni = 0; ni < n; ni++) {
                    for (int64_t oy = 0; oy < oh; oy++) {
                        int64_t iy = oy * cs.stride + ky - cs.pad_top;
                        if (iy < 0 || iy >= h) {
                            continue;
                        }
                        for (int64_t ox = 0; ox < ow; ox++) {
                            int64_t ix = ox * cs.stride + kx - cs.pad_left;
                            if (ix < 0 || ix >= wd) {
                                continue;
                            }
                            T xv = x.data()[((ni * h + iy) * wd + ix) * ci + ic];
                            const T* gpix = g.data() + ((ni * oh + oy) * ow + ox) * co;
                            for (int64_t j = 0; j < co; j++) {
                                gwrow[j] += xv * gpix[j];
                            }
                        }
                    }
                }
            }
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < co; j++) {
        T s = 0;
        const T* gp = g.data();
        int64_t total = n * oh * ow;
        for (int64_t i = 0; i < total; i++) {
            s += gp[i * co + j];
        }
        gb[j] += s;
    }
}

}  // namespace detail

// x (N,H,W,Ci), w (KH,KW,Ci,Co), b (Co) -> (N,OH,OW,Co)
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvSpec& cs) {
    const Shape& sx = x.value().shape;
    const Shape& sw = w.value().shape;
    if (sx.size() != 4 || sw.size() != 4 || sx[3] != sw[2]) {
        throw std::invalid_argument("conv2d: bad shapes " + shape_str(sx) + " / " + shape_str(sw));
    }
    int64_t oh = (sx[1] + cs.pad_top + cs.pad_bottom - sw[0]) / cs.stride + 1;
    int64_t ow = (sx[2] + cs.pad_left + cs.pad_right - sw[1]) / cs.stride + 1;
    if (oh < 1 || ow < 1) {
        throw std::invalid_argument("conv2d: output would be empty");
    }
    Tensor<T> out(Shape{sx[0], oh, ow, sw[3]});
    detail::conv2d_fwd(x.value(), w.value(), b.value(), cs, out);
    return make_op<T>(std::move(out), {x, w, b}, [cs](Node<T>& n) {
        const Tensor<T>& xv = n.parents[0]->val;
        const Tensor<T>& wv = n.parents[1]->val;
        Tensor<T> gx = Tensor<T>::zeros(xv.shape);
        Tensor<T> gw = Tensor<T>::zeros(wv.shape);
        Tensor<T> gb = Tensor<T>::zeros(n.parents[2]->val.shape);
        detail::conv2d_bwd_input(n.grad, wv, cs, gx);
        detail::conv2d_bwd_weight(xv, n.grad, cs, gw, gb);
        accum(n.parents[0], gx);
        accum(n.parents[1], gw);
        accum(n.parents[2], gb);
    });
}

// Nearest-neighbour 2x upsample, NHWC.
template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    const Shape& s = x.value().shape;
    if (s.size() != 4) {
        throw std::invalid_argument("upsample_nearest2: expected (N,H,W,C)");
    }
    int64_t n = s[0], h = s[1], w = s[2], c = s[3];
    Tensor<T> out(Shape{n, h * 2, w * 2, c});
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t ni = 0; ni < n; ni++) {
        for (int64_t oy = 0; oy < h * 2; oy++) {
            int64_t iy = oy / 2;
            for (int64_t ox = 0; ox < w * 2; ox++) {
                const T* src = x.value().data() + ((ni * h + iy) * w + ox / 2) * c;
                T* dst = out.data() + ((ni * h * 2 + oy) * w * 2 + ox) * c;
                std::memcpy(dst, src, static_cast<size_t>(c) * sizeof(T));
            }
        }
    }
    return make_op<T>(std::move(out), {x}, [n, h, w, c](Node<T>& nd) {
        Tensor<T> gx = Tensor<T>::zeros(nd.parents[0]->val.shape);
#pragma omp parallel for collapse(2) schedule(static)
        for (int64_t ni = 0; ni < n; ni++) {
            for (int64_t iy = 0; iy < h; iy++) {
                for (int64_t ix = 0; ix < w; ix++) {
                    T* dst = gx.data() + ((ni * h + iy) * w + ix) * c;
                    for (int64_t dy = 0; dy < 2; dy++) {
                        for (int64_t dx = 0; dx < 2; dx++) {
                            const T* src = nd.grad.data() +
                                           ((ni * h * 2 + iy * 2 + dy) * w * 2 + ix * 2 + dx) * c;
                            for (int64_t j = 0; j < c; j++) {
                                dst[j] += src[j];
                            }
                        }
                    }
                }
            }
        }
        accum(nd.parents[0], gx);
    });
}

}  // namespace ag
}  // namespace posediff

#endif  // POSEDIFF_AUTOGRAD_HPP
