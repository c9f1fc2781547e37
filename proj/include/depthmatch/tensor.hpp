#pragma once

// Dense tensor arithmetic with reverse-mode automatic differentiation.
//
// Tensors are immutable after creation except for gradient accumulation;
// a graph and its tensors belong to one thread of execution. The graph is
// dynamic: every operation records a node with a backward closure, and
// backward() replays the tape in reverse topological order.
//
// Scalar type is a template parameter: float for training, double for the
// finite-difference oracles in tests. Reductions (sums, means, softmax
// denominators, normalization statistics) accumulate in 64-bit regardless
// of the element type.
//
// Convolution uses the cross-correlation convention (no kernel flip).
// Broadcasting is right-aligned: trailing dimensions must match or be 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "depthmatch/common.hpp"

namespace dm {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first accumulation / zero_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> inputs;
    std::function<void(TensorNode<S>&)> backward_fn;

    std::int64_t numel() const { return std::int64_t(value.size()); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

template <typename S>
class TensorT {
public:
    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad, S(0));
    }

    static TensorT full(Shape shape, S v, bool requires_grad = false) {
        return from_data(std::move(shape), {}, requires_grad, v);
    }

    static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false,
                             S fill = S(0)) {
        auto n = std::make_shared<TensorNode<S>>();
        const std::int64_t count = numel_of(shape);
        for (auto d : shape)
            if (d <= 0) fail("tensor shape must have positive dimensions, got " + shape_str(shape));
        if (data.empty()) {
            data.assign(std::size_t(count), fill);
        } else if (std::int64_t(data.size()) != count) {
            fail(strfmt("tensor data length %zu does not match shape %s", data.size(),
                        shape_str(shape).c_str()));
        }
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(std::move(n));
    }

    static TensorT scalar(S v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static TensorT randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                         bool requires_grad = false) {
        std::vector<S> d(std::size_t(numel_of(shape)));
        for (auto& v : d) v = S(rng.normal() * stddev);
        return from_data(shape, std::move(d), requires_grad);
    }

    static TensorT rand_uniform(const Shape& shape, Rng& rng, double lo, double hi,
                                bool requires_grad = false) {
        std::vector<S> d(std::size_t(numel_of(shape)));
        for (auto& v : d) v = S(rng.uniform(lo, hi));
        return from_data(shape, std::move(d), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return int(node_->shape.size()); }
    std::int64_t dim(int i) const { return node_->shape[std::size_t(i)]; }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const S> values() const { return node_->value; }
    // Mutable access is reserved for the parameter owner (optimizer, EMA
    // update, finite-difference harness); graph operations never mutate.
    std::span<S> values_mut() { return node_->value; }

    std::span<const S> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() {
        if (!node_->requires_grad) return;
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    S item() const {
        if (numel() != 1) fail("item() requires a single-element tensor, shape is " + shape_str(shape()));
        return node_->value[0];
    }

    S value_at(std::int64_t i) const { return node_->value[std::size_t(i)]; }

    // Reverse pass from a scalar loss. Gradients accumulate additively into
    // every requires_grad tensor reachable through differentiable edges.
    void backward() const {
        if (!defined()) fail("backward: undefined tensor");
        if (numel() != 1) fail("backward: loss must be a scalar, shape is " + shape_str(shape()));
        if (!node_->requires_grad) fail("backward: loss does not require grad");

        std::vector<TensorNode<S>*> order;
        topo_sort(node_.get(), order);

        node_->ensure_grad();
        node_->grad[0] += S(1);

        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            TensorNode<S>* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
        }
    }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }

    explicit TensorT(std::shared_ptr<TensorNode<S>> n) : node_(std::move(n)) {}

private:
    static void topo_sort(TensorNode<S>* root, std::vector<TensorNode<S>*>& order) {
        struct Frame {
            TensorNode<S>* n;
            std::size_t next;
        };
        std::unordered_set<TensorNode<S>*> visited;
        std::vector<Frame> stack;
        stack.push_back({root, 0});
        visited.insert(root);
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->inputs.size()) {
                TensorNode<S>* child = f.n->inputs[f.next++].get();
                if (visited.insert(child).second) stack.push_back({child, 0});
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<S>> node_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

namespace detail {

template <typename S>
TensorT<S> make_node(Shape shape, std::vector<S> value, std::vector<TensorT<S>> inputs,
                     std::function<void(TensorNode<S>&)> bw) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->inputs.reserve(inputs.size());
        for (const auto& in : inputs) n->inputs.push_back(in.node());
        n->backward_fn = std::move(bw);
    }
    return TensorT<S>(std::move(n));
}

// Right-aligned broadcast: missing leading dims act as 1; size-1 dims stretch.
struct BcastPlan {
    Shape out;
    std::vector<std::int64_t> stride_a;  // per out-dim element strides, 0 where broadcast
    std::vector<std::int64_t> stride_b;
    std::int64_t out_numel = 0;
    bool same_shape = false;
};

inline std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = int(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

inline BcastPlan make_bcast(const Shape& a, const Shape& b) {
    BcastPlan p;
    if (a == b) {
        p.out = a;
        p.out_numel = numel_of(a);
        p.same_shape = true;
        return p;
    }
    const int nd = int(std::max(a.size(), b.size()));
    p.out.resize(nd);
    for (int i = 0; i < nd; ++i) {
        const std::int64_t da = i < nd - int(a.size()) ? 1 : a[i - (nd - int(a.size()))];
        const std::int64_t db = i < nd - int(b.size()) ? 1 : b[i - (nd - int(b.size()))];
        if (da != db && da != 1 && db != 1)
            fail("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
        p.out[i] = std::max(da, db);
    }
    p.out_numel = numel_of(p.out);
    auto sa = contiguous_strides(a);
    auto sb = contiguous_strides(b);
    p.stride_a.assign(nd, 0);
    p.stride_b.assign(nd, 0);
    for (int i = 0; i < nd; ++i) {
        const int ia = i - (nd - int(a.size()));
        const int ib = i - (nd - int(b.size()));
        if (ia >= 0 && a[ia] != 1) p.stride_a[i] = sa[ia];
        if (ib >= 0 && b[ib] != 1) p.stride_b[i] = sb[ib];
    }
    return p;
}

// Visits every output element in row-major order with the matching offsets
// into both broadcast inputs.
template <typename F>
void bcast_walk(const BcastPlan& p, F&& f) {
    if (p.same_shape) {
        for (std::int64_t i = 0; i < p.out_numel; ++i) f(i, i, i);
        return;
    }
    const int nd = int(p.out.size());
    std::vector<std::int64_t> idx(nd, 0);
    std::int64_t offa = 0, offb = 0;
    for (std::int64_t i = 0; i < p.out_numel; ++i) {
        f(i, offa, offb);
        for (int d = nd - 1; d >= 0; --d) {
            idx[d]++;
            offa += p.stride_a[d];
            offb += p.stride_b[d];
            if (idx[d] < p.out[d]) break;
            offa -= p.stride_a[d] * p.out[d];
            offb -= p.stride_b[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

// Sum a gradient of shape gshape down to target (inverse of broadcast).
template <typename S>
std::vector<S> reduce_grad_to(const std::vector<S>& g, const Shape& gshape, const Shape& target) {
    if (gshape == target) return g;
    std::vector<double> acc(std::size_t(numel_of(target)), 0.0);
    BcastPlan p = make_bcast(gshape, target);  // out == gshape by construction
    bcast_walk(p, [&](std::int64_t i, std::int64_t, std::int64_t tb) {
        acc[std::size_t(tb)] += double(g[std::size_t(i)]);
    });
    std::vector<S> out(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = S(acc[i]);
    return out;
}

template <typename S>
void accumulate_into(const std::shared_ptr<TensorNode<S>>& t, const std::vector<S>& g,
                     const Shape& gshape) {
    if (!t->requires_grad) return;
    t->ensure_grad();
    if (gshape == t->shape) {
        for (std::size_t i = 0; i < g.size(); ++i) t->grad[i] += g[i];
    } else {
        auto r = reduce_grad_to<S>(g, gshape, t->shape);
        for (std::size_t i = 0; i < r.size(); ++i) t->grad[i] += r[i];
    }
}

// outer/axis/inner decomposition for single-axis line operations
struct AxisLines {
    std::int64_t outer = 1, axis = 1, inner = 1;
};

inline AxisLines axis_lines(const Shape& s, int axis) {
    if (axis < 0) axis += int(s.size());
    if (axis < 0 || axis >= int(s.size()))
        fail(strfmt("axis %d out of range for shape %s", axis, shape_str(s).c_str()));
    AxisLines l;
    for (int i = 0; i < axis; ++i) l.outer *= s[i];
    l.axis = s[axis];
    for (int i = axis + 1; i < int(s.size()); ++i) l.inner *= s[i];
    return l;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary operations

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    auto p = detail::make_bcast(a.shape(), b.shape());
    std::vector<S> out(std::size_t(p.out_numel));
    const auto av = a.values(), bv = b.values();
    detail::bcast_walk(p, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        out[std::size_t(i)] = av[std::size_t(ia)] + bv[std::size_t(ib)];
    });
    Shape oshape = p.out;
    return detail::make_node<S>(p.out, std::move(out), {a, b}, [oshape](TensorNode<S>& n) {
        detail::accumulate_into(n.inputs[0], n.grad, oshape);
        detail::accumulate_into(n.inputs[1], n.grad, oshape);
    });
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    auto p = detail::make_bcast(a.shape(), b.shape());
    std::vector<S> out(std::size_t(p.out_numel));
    const auto av = a.values(), bv = b.values();
    detail::bcast_walk(p, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        out[std::size_t(i)] = av[std::size_t(ia)] - bv[std::size_t(ib)];
    });
    Shape oshape = p.out;
    return detail::make_node<S>(p.out, std::move(out), {a, b}, [oshape](TensorNode<S>& n) {
        detail::accumulate_into(n.inputs[0], n.grad, oshape);
        std::vector<S> neg(n.grad.size());
        for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -n.grad[i];
        detail::accumulate_into(n.inputs[1], neg, oshape);
    });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    auto p = detail::make_bcast(a.shape(), b.shape());
    std::vector<S> out(std::size_t(p.out_numel));
    const auto av = a.values(), bv = b.values();
    detail::bcast_walk(p, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        out[std::size_t(i)] = av[std::size_t(ia)] * bv[std::size_t(ib)];
    });
    auto plan = p;
    Shape oshape = p.out;
    return detail::make_node<S>(p.out, std::move(out), {a, b}, [plan, oshape](TensorNode<S>& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        std::vector<S> ga(n.grad.size()), gb(n.grad.size());
        detail::bcast_walk(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
            ga[std::size_t(i)] = n.grad[std::size_t(i)] * bv[std::size_t(ib)];
            gb[std::size_t(i)] = n.grad[std::size_t(i)] * av[std::size_t(ia)];
        });
        detail::accumulate_into(n.inputs[0], ga, oshape);
        detail::accumulate_into(n.inputs[1], gb, oshape);
    });
}

template <typename S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
    for (S v : b.values())
        if (v == S(0)) fail("div: zero divisor element");
    auto p = detail::make_bcast(a.shape(), b.shape());
    std::vector<S> out(std::size_t(p.out_numel));
    const auto av = a.values(), bv = b.values();
    detail::bcast_walk(p, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        out[std::size_t(i)] = av[std::size_t(ia)] / bv[std::size_t(ib)];
    });
    auto plan = p;
    Shape oshape = p.out;
    return detail::make_node<S>(p.out, std::move(out), {a, b}, [plan, oshape](TensorNode<S>& n) {
        const auto& av = n.inputs[0]->value;
        const auto& bv = n.inputs[1]->value;
        std::vector<S> ga(n.grad.size()), gb(n.grad.size());
        detail::bcast_walk(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
            const S bval = bv[std::size_t(ib)];
            ga[std::size_t(i)] = n.grad[std::size_t(i)] / bval;
            gb[std::size_t(i)] = -n.grad[std::size_t(i)] * av[std::size_t(ia)] / (bval * bval);
        });
        detail::accumulate_into(n.inputs[0], ga, oshape);
        detail::accumulate_into(n.inputs[1], gb, oshape);
    });
}

template <typename S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
    std::vector<S> out(a.values().begin(), a.values().end());
    for (auto& v : out) v += c;
    return detail::make_node<S>(a.shape(), std::move(out), {a}, [](TensorNode<S>& n) {
        detail::accumulate_into(n.inputs[0], n.grad, n.shape);
    });
}

template <typename S>
TensorT<S> mul_scalar(const TensorT<S>& a, S c) {
    std::vector<S> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= c;
    return detail::make_node<S>(a.shape(), std::move(out), {a}, [c](TensorNode<S>& n) {
        std::vector<S> g(n.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = n.grad[i] * c;
        detail::accumulate_into(n.inputs[0], g, n.shape);
    });
}

template <typename S>
TensorT<S> neg(const TensorT<S>& a) {
    return mul_scalar(a, S(-1));
}

template <typename S>
TensorT<S> operator+(const TensorT<S>& a, const TensorT<S>& b) { return add(a, b); }
template <typename S>
TensorT<S> operator-(const TensorT<S>& a, const TensorT<S>& b) { return sub(a, b); }
template <typename S>
TensorT<S> operator*(const TensorT<S>& a, const TensorT<S>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// matrix products

namespace detail {

template <typename S>
void mm_kernel(const S* A, const S* B, S* C, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        S* crow = C + i * n;
        for (std::int64_t l = 0; l < k; ++l) {
            const S a = A[i * k + l];
            const S* brow = B + l * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// dA += G * B^T, dB += A^T * G
template <typename S>
void mm_backward_kernel(const S* A, const S* B, const S* G, S* dA, S* dB, std::int64_t m,
                        std::int64_t k, std::int64_t n) {
    if (dA) {
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t l = 0; l < k; ++l) {
                S s = 0;
                const S* grow = G + i * n;
                const S* brow = B + l * n;
                for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                dA[i * k + l] += s;
            }
    }
    if (dB) {
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t l = 0; l < k; ++l) {
                const S a = A[i * k + l];
                const S* grow = G + i * n;
                S* drow = dB + l * n;
                for (std::int64_t j = 0; j < n; ++j) drow[j] += a * grow[j];
            }
    }
}

}  // namespace detail

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        fail("matmul: expected 2-D tensors, got " + shape_str(a.shape()) + " and " +
             shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        fail("matmul: inner dimensions differ, " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(std::size_t(m * n), S(0));
    detail::mm_kernel(a.values().data(), b.values().data(), out.data(), m, k, n);
    return detail::make_node<S>({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<S>& n_) {
        auto& ia = n_.inputs[0];
        auto& ib = n_.inputs[1];
        if (ia->requires_grad) ia->ensure_grad();
        if (ib->requires_grad) ib->ensure_grad();
        detail::mm_backward_kernel(ia->value.data(), ib->value.data(), n_.grad.data(),
                                   ia->requires_grad ? ia->grad.data() : nullptr,
                                   ib->requires_grad ? ib->grad.data() : nullptr, m, k, n);
    });
}

// batched matmul over a shared leading dimension: [B,m,k] x [B,k,n] -> [B,m,n]
template <typename S>
TensorT<S> bmm(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        fail("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<S> out(std::size_t(bs * m * n), S(0));
    for (std::int64_t i = 0; i < bs; ++i)
        detail::mm_kernel(a.values().data() + i * m * k, b.values().data() + i * k * n,
                          out.data() + i * m * n, m, k, n);
    return detail::make_node<S>({bs, m, n}, std::move(out), {a, b},
                                [bs, m, k, n](TensorNode<S>& n_) {
        auto& ia = n_.inputs[0];
        auto& ib = n_.inputs[1];
        if (ia->requires_grad) ia->ensure_grad();
        if (ib->requires_grad) ib->ensure_grad();
        for (std::int64_t i = 0; i < bs; ++i)
            detail::mm_backward_kernel(
                ia->value.data() + i * m * k, ib->value.data() + i * k * n,
                n_.grad.data() + i * m * n,
                ia->requires_grad ? ia->grad.data() + i * m * k : nullptr,
                ib->requires_grad ? ib->grad.data() + i * k * n : nullptr, m, k, n);
    });
}

// ---------------------------------------------------------------------------
// convolution and padding

// Cross-correlation: y[b,o,oh,ow] = sum_{ci,ky,kx} x[b,ci,oh*s-p+ky,ow*s-p+kx] * k[o,ci,ky,kx]
template <typename S>
TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& kernel, int stride, int padding) {
    if (x.ndim() != 4 || kernel.ndim() != 4)
        fail("conv2d: expected 4-D input and kernel, got " + shape_str(x.shape()) + " and " +
             shape_str(kernel.shape()));
    if (x.dim(1) != kernel.dim(1))
        fail(strfmt("conv2d: input channels %lld do not match kernel channels %lld",
                    (long long)x.dim(1), (long long)kernel.dim(1)));
    if (stride < 1) fail("conv2d: stride must be >= 1");
    if (padding < 0) fail("conv2d: padding must be >= 0");
    const std::int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t O = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const std::int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    if (H + 2 * padding < kh || W + 2 * padding < kw || Ho < 1 || Wo < 1)
        fail(strfmt("conv2d: output extent < 1 for input %s, kernel %s, stride %d, padding %d",
                    shape_str(x.shape()).c_str(), shape_str(kernel.shape()).c_str(), stride,
                    padding));

    std::vector<S> out(std::size_t(B * O * Ho * Wo), S(0));
    const S* xv = x.values().data();
    const S* kv = kernel.values().data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t o = 0; o < O; ++o)
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    S acc = 0;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            const std::int64_t ih = oh * stride - padding + ky;
                            if (ih < 0 || ih >= H) continue;
                            const S* xrow = xv + ((b * Ci + ci) * H + ih) * W;
                            const S* krow = kv + ((o * Ci + ci) * kh + ky) * kw;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t iw = ow * stride - padding + kx;
                                if (iw < 0 || iw >= W) continue;
                                acc += xrow[iw] * krow[kx];
                            }
                        }
                    out[std::size_t(((b * O + o) * Ho + oh) * Wo + ow)] = acc;
                }

    const int s = stride, p = padding;
    return detail::make_node<S>(
        {B, O, Ho, Wo}, std::move(out), {x, kernel},
        [B, Ci, H, W, O, kh, kw, Ho, Wo, s, p](TensorNode<S>& n) {
            auto& ix = n.inputs[0];
            auto& ik = n.inputs[1];
            if (ix->requires_grad) ix->ensure_grad();
            if (ik->requires_grad) ik->ensure_grad();
            S* dx = ix->requires_grad ? ix->grad.data() : nullptr;
            S* dk = ik->requires_grad ? ik->grad.data() : nullptr;
            const S* xv = ix->value.data();
            const S* kv = ik->value.data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t o = 0; o < O; ++o)
                    for (std::int64_t oh = 0; oh < Ho; ++oh)
                        for (std::int64_t ow = 0; ow < Wo; ++ow) {
                            const S gv = n.grad[std::size_t(((b * O + o) * Ho + oh) * Wo + ow)];
                            if (gv == S(0)) continue;
                            for (std::int64_t ci = 0; ci < Ci; ++ci)
                                for (std::int64_t ky = 0; ky < kh; ++ky) {
                                    const std::int64_t ih = oh * s - p + ky;
                                    if (ih < 0 || ih >= H) continue;
                                    for (std::int64_t kx = 0; kx < kw; ++kx) {
                                        const std::int64_t iw = ow * s - p + kx;
                                        if (iw < 0 || iw >= W) continue;
                                        const std::size_t xi =
                                            std::size_t(((b * Ci + ci) * H + ih) * W + iw);
                                        const std::size_t kidx =
                                            std::size_t(((o * Ci + ci) * kh + ky) * kw + kx);
                                        if (dx) dx[xi] += kv[kidx] * gv;
                                        if (dk) dk[kidx] += xv[xi] * gv;
                                    }
                                }
                        }
        });
}

namespace detail {
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}
}  // namespace detail

// Reflective padding without edge repetition (pad must be <= dim-1).
template <typename S>
TensorT<S> reflect_pad2d(const TensorT<S>& x, int pad) {
    if (x.ndim() != 4) fail("reflect_pad2d: expected 4-D input, got " + shape_str(x.shape()));
    if (pad < 0) fail("reflect_pad2d: pad must be >= 0");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (pad > H - 1 || pad > W - 1)
        fail(strfmt("reflect_pad2d: pad %d too large for %lldx%lld input", pad, (long long)H,
                    (long long)W));
    const std::int64_t Ho = H + 2 * pad, Wo = W + 2 * pad;
    std::vector<S> out(std::size_t(B * C * Ho * Wo));
    const S* xv = x.values().data();
    for (std::int64_t bc = 0; bc < B * C; ++bc)
        for (std::int64_t oy = 0; oy < Ho; ++oy) {
            const std::int64_t iy = detail::reflect_index(oy - pad, H);
            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                const std::int64_t ix = detail::reflect_index(ox - pad, W);
                out[std::size_t((bc * Ho + oy) * Wo + ox)] = xv[std::size_t((bc * H + iy) * W + ix)];
            }
        }
    return detail::make_node<S>({B, C, Ho, Wo}, std::move(out), {x},
                                [B, C, H, W, Ho, Wo, pad](TensorNode<S>& n) {
        auto& ix_ = n.inputs[0];
        if (!ix_->requires_grad) return;
        ix_->ensure_grad();
        S* dx = ix_->grad.data();
        for (std::int64_t bc = 0; bc < B * C; ++bc)
            for (std::int64_t oy = 0; oy < Ho; ++oy) {
                const std::int64_t iy = detail::reflect_index(oy - pad, H);
                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                    const std::int64_t ixx = detail::reflect_index(ox - pad, W);
                    dx[std::size_t((bc * H + iy) * W + ixx)] +=
                        n.grad[std::size_t((bc * Ho + oy) * Wo + ox)];
                }
            }
    });
}

// ---------------------------------------------------------------------------
// activations, normalization

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
    std::vector<S> out(x.values().begin(), x.values().end());
    for (auto& v : out) v = v > S(0) ? v : S(0);
    return detail::make_node<S>(x.shape(), std::move(out), {x}, [](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (in->value[i] > S(0)) in->grad[i] += n.grad[i];
    });
}

template <typename S>
TensorT<S> sqrt_t(const TensorT<S>& x) {
    std::vector<S> out(x.values().begin(), x.values().end());
    for (auto& v : out) {
        if (v < S(0)) fail("sqrt: negative input element");
        v = S(std::sqrt(double(v)));
    }
    auto saved = out;
    return detail::make_node<S>(x.shape(), std::move(out), {x}, [saved](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (saved[i] > S(0)) in->grad[i] += n.grad[i] * S(0.5) / saved[i];
    });
}

// Numerically stabilized softmax along one axis: rows sum to 1.
template <typename S>
TensorT<S> softmax(const TensorT<S>& x, int axis) {
    auto L = detail::axis_lines(x.shape(), axis);
    std::vector<S> out(std::size_t(x.numel()));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        for (std::int64_t i = 0; i < L.inner; ++i) {
            const std::int64_t base = o * L.axis * L.inner + i;
            double m = -1e300;
            for (std::int64_t a = 0; a < L.axis; ++a)
                m = std::max(m, double(xv[std::size_t(base + a * L.inner)]));
            double sum = 0;
            for (std::int64_t a = 0; a < L.axis; ++a)
                sum += std::exp(double(xv[std::size_t(base + a * L.inner)]) - m);
            for (std::int64_t a = 0; a < L.axis; ++a)
                out[std::size_t(base + a * L.inner)] =
                    S(std::exp(double(xv[std::size_t(base + a * L.inner)]) - m) / sum);
        }
    auto saved = out;
    return detail::make_node<S>(x.shape(), std::move(out), {x}, [saved, L](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::int64_t o = 0; o < L.outer; ++o)
            for (std::int64_t i = 0; i < L.inner; ++i) {
                const std::int64_t base = o * L.axis * L.inner + i;
                double dot = 0;
                for (std::int64_t a = 0; a < L.axis; ++a) {
                    const std::size_t idx = std::size_t(base + a * L.inner);
                    dot += double(n.grad[idx]) * double(saved[idx]);
                }
                for (std::int64_t a = 0; a < L.axis; ++a) {
                    const std::size_t idx = std::size_t(base + a * L.inner);
                    in->grad[idx] += S(double(saved[idx]) * (double(n.grad[idx]) - dot));
                }
            }
    });
}

template <typename S>
TensorT<S> log_softmax(const TensorT<S>& x, int axis) {
    auto L = detail::axis_lines(x.shape(), axis);
    std::vector<S> out(std::size_t(x.numel()));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        for (std::int64_t i = 0; i < L.inner; ++i) {
            const std::int64_t base = o * L.axis * L.inner + i;
            double m = -1e300;
            for (std::int64_t a = 0; a < L.axis; ++a)
                m = std::max(m, double(xv[std::size_t(base + a * L.inner)]));
            double sum = 0;
            for (std::int64_t a = 0; a < L.axis; ++a)
                sum += std::exp(double(xv[std::size_t(base + a * L.inner)]) - m);
            const double lse = m + std::log(sum);
            for (std::int64_t a = 0; a < L.axis; ++a)
                out[std::size_t(base + a * L.inner)] =
                    S(double(xv[std::size_t(base + a * L.inner)]) - lse);
        }
    auto saved = out;
    return detail::make_node<S>(x.shape(), std::move(out), {x}, [saved, L](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::int64_t o = 0; o < L.outer; ++o)
            for (std::int64_t i = 0; i < L.inner; ++i) {
                const std::int64_t base = o * L.axis * L.inner + i;
                double gsum = 0;
                for (std::int64_t a = 0; a < L.axis; ++a)
                    gsum += double(n.grad[std::size_t(base + a * L.inner)]);
                for (std::int64_t a = 0; a < L.axis; ++a) {
                    const std::size_t idx = std::size_t(base + a * L.inner);
                    in->grad[idx] +=
                        S(double(n.grad[idx]) - std::exp(double(saved[idx])) * gsum);
                }
            }
    });
}

// Layer normalization over the last axis with learned scale and offset.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      double eps = 1e-5) {
    const std::int64_t C = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 || beta.dim(0) != C)
        fail("layer_norm: gamma/beta must be 1-D of the normalized width");
    const std::int64_t rows = x.numel() / C;
    std::vector<S> out(std::size_t(x.numel()));
    std::vector<double> inv_std(static_cast<std::size_t>(rows)), mean(static_cast<std::size_t>(rows));
    const auto xv = x.values();
    const auto gv = gamma.values(), bv = beta.values();
    for (std::int64_t r = 0; r < rows; ++r) {
        double mu = 0;
        for (std::int64_t c = 0; c < C; ++c) mu += double(xv[std::size_t(r * C + c)]);
        mu /= double(C);
        double var = 0;
        for (std::int64_t c = 0; c < C; ++c) {
            const double d = double(xv[std::size_t(r * C + c)]) - mu;
            var += d * d;
        }
        var /= double(C);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[std::size_t(r)] = mu;
        inv_std[std::size_t(r)] = is;
        for (std::int64_t c = 0; c < C; ++c) {
            const double xhat = (double(xv[std::size_t(r * C + c)]) - mu) * is;
            out[std::size_t(r * C + c)] = S(xhat * double(gv[std::size_t(c)]) + double(bv[std::size_t(c)]));
        }
    }
    return detail::make_node<S>(
        x.shape(), std::move(out), {x, gamma, beta},
        [rows, C, mean, inv_std](TensorNode<S>& n) {
            auto& ix = n.inputs[0];
            auto& ig = n.inputs[1];
            auto& ib = n.inputs[2];
            if (ix->requires_grad) ix->ensure_grad();
            if (ig->requires_grad) ig->ensure_grad();
            if (ib->requires_grad) ib->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double mu = mean[std::size_t(r)];
                const double is = inv_std[std::size_t(r)];
                double m1 = 0, m2 = 0;
                for (std::int64_t c = 0; c < C; ++c) {
                    const std::size_t idx = std::size_t(r * C + c);
                    const double xhat = (double(ix->value[idx]) - mu) * is;
                    const double gg = double(n.grad[idx]) * double(ig->value[std::size_t(c)]);
                    m1 += gg;
                    m2 += gg * xhat;
                    if (ig->requires_grad) ig->grad[std::size_t(c)] += S(double(n.grad[idx]) * xhat);
                    if (ib->requires_grad) ib->grad[std::size_t(c)] += n.grad[idx];
                }
                m1 /= double(C);
                m2 /= double(C);
                if (ix->requires_grad)
                    for (std::int64_t c = 0; c < C; ++c) {
                        const std::size_t idx = std::size_t(r * C + c);
                        const double xhat = (double(ix->value[idx]) - mu) * is;
                        const double gg = double(n.grad[idx]) * double(ig->value[std::size_t(c)]);
                        ix->grad[idx] += S(is * (gg - m1 - xhat * m2));
                    }
            }
        });
}

// ---------------------------------------------------------------------------
// resampling

// align-corners=false: source coordinate (o + 0.5) * in/out - 0.5, clamped.
template <typename S>
TensorT<S> bilinear_resize(const TensorT<S>& x, std::int64_t out_h, std::int64_t out_w) {
    if (x.ndim() != 4) fail("bilinear_resize: expected 4-D input, got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1) fail("bilinear_resize: output size must be >= 1");
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (out_h == H && out_w == W) {
        std::vector<S> out(x.values().begin(), x.values().end());
        return detail::make_node<S>(x.shape(), std::move(out), {x}, [](TensorNode<S>& n) {
            detail::accumulate_into(n.inputs[0], n.grad, n.shape);
        });
    }

    struct Interp {
        std::int64_t i0, i1;
        double w;  // weight of i1
    };
    auto build = [](std::int64_t in, std::int64_t out) {
        std::vector<Interp> v(static_cast<std::size_t>(out));
        for (std::int64_t o = 0; o < out; ++o) {
            double src = (double(o) + 0.5) * double(in) / double(out) - 0.5;
            src = std::min(std::max(src, 0.0), double(in - 1));
            const std::int64_t i0 = std::int64_t(std::floor(src));
            v[std::size_t(o)] = {i0, std::min(i0 + 1, in - 1), src - double(i0)};
        }
        return v;
    };
    const auto ys = build(H, out_h);
    const auto xs = build(W, out_w);

    std::vector<S> out(std::size_t(B * C * out_h * out_w));
    const S* xv = x.values().data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const S* plane = xv + bc * H * W;
        S* oplane = out.data() + bc * out_h * out_w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const auto& Y = ys[std::size_t(oy)];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const auto& X = xs[std::size_t(ox)];
                const double v = (1 - Y.w) * ((1 - X.w) * double(plane[Y.i0 * W + X.i0]) +
                                              X.w * double(plane[Y.i0 * W + X.i1])) +
                                 Y.w * ((1 - X.w) * double(plane[Y.i1 * W + X.i0]) +
                                        X.w * double(plane[Y.i1 * W + X.i1]));
                oplane[oy * out_w + ox] = S(v);
            }
        }
    }
    return detail::make_node<S>({B, C, out_h, out_w}, std::move(out), {x},
                                [B, C, H, W, out_h, out_w, ys, xs](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
            S* dplane = in->grad.data() + bc * H * W;
            const S* gplane = n.grad.data() + bc * out_h * out_w;
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                const auto& Y = ys[std::size_t(oy)];
                for (std::int64_t ox = 0; ox < out_w; ++ox) {
                    const auto& X = xs[std::size_t(ox)];
                    const double g = double(gplane[oy * out_w + ox]);
                    dplane[Y.i0 * W + X.i0] += S((1 - Y.w) * (1 - X.w) * g);
                    dplane[Y.i0 * W + X.i1] += S((1 - Y.w) * X.w * g);
                    dplane[Y.i1 * W + X.i0] += S(Y.w * (1 - X.w) * g);
                    dplane[Y.i1 * W + X.i1] += S(Y.w * X.w * g);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
TensorT<S> reduce_sum(const TensorT<S>& x) {
    double acc = 0;
    for (S v : x.values()) acc += double(v);
    return detail::make_node<S>({1}, {S(acc)}, {x}, [](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        const S g = n.grad[0];
        for (auto& gv : in->grad) gv += g;
    });
}

template <typename S>
TensorT<S> reduce_mean(const TensorT<S>& x) {
    double acc = 0;
    for (S v : x.values()) acc += double(v);
    const std::int64_t count = x.numel();
    return detail::make_node<S>({1}, {S(acc / double(count))}, {x}, [count](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        const S g = S(double(n.grad[0]) / double(count));
        for (auto& gv : in->grad) gv += g;
    });
}

namespace detail {
inline Shape reduced_shape(const Shape& s, int axis, bool keepdims) {
    Shape out;
    for (int i = 0; i < int(s.size()); ++i) {
        if (i == axis) {
            if (keepdims) out.push_back(1);
        } else {
            out.push_back(s[i]);
        }
    }
    if (out.empty()) out.push_back(1);
    return out;
}
}  // namespace detail

template <typename S>
TensorT<S> reduce_sum_axis(const TensorT<S>& x, int axis, bool keepdims = false) {
    auto L = detail::axis_lines(x.shape(), axis);
    if (axis < 0) axis += x.ndim();
    std::vector<S> out(std::size_t(L.outer * L.inner));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        for (std::int64_t i = 0; i < L.inner; ++i) {
            double acc = 0;
            for (std::int64_t a = 0; a < L.axis; ++a)
                acc += double(xv[std::size_t((o * L.axis + a) * L.inner + i)]);
            out[std::size_t(o * L.inner + i)] = S(acc);
        }
    return detail::make_node<S>(detail::reduced_shape(x.shape(), axis, keepdims), std::move(out),
                                {x}, [L](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::int64_t o = 0; o < L.outer; ++o)
            for (std::int64_t i = 0; i < L.inner; ++i) {
                const S g = n.grad[std::size_t(o * L.inner + i)];
                for (std::int64_t a = 0; a < L.axis; ++a)
                    in->grad[std::size_t((o * L.axis + a) * L.inner + i)] += g;
            }
    });
}

template <typename S>
TensorT<S> reduce_mean_axis(const TensorT<S>& x, int axis, bool keepdims = false) {
    auto s = reduce_sum_axis(x, axis, keepdims);
    const std::int64_t a = x.dim(axis < 0 ? axis + x.ndim() : axis);
    return mul_scalar(s, S(1.0 / double(a)));
}

// Differentiable max along an axis; gradient flows to the first maximum.
template <typename S>
TensorT<S> reduce_max_axis(const TensorT<S>& x, int axis, bool keepdims = false) {
    auto L = detail::axis_lines(x.shape(), axis);
    if (axis < 0) axis += x.ndim();
    std::vector<S> out(std::size_t(L.outer * L.inner));
    std::vector<std::int64_t> arg(std::size_t(L.outer * L.inner));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        for (std::int64_t i = 0; i < L.inner; ++i) {
            S best = xv[std::size_t(o * L.axis * L.inner + i)];
            std::int64_t bi = 0;
            for (std::int64_t a = 1; a < L.axis; ++a) {
                const S v = xv[std::size_t((o * L.axis + a) * L.inner + i)];
                if (v > best) {
                    best = v;
                    bi = a;
                }
            }
            out[std::size_t(o * L.inner + i)] = best;
            arg[std::size_t(o * L.inner + i)] = bi;
        }
    return detail::make_node<S>(detail::reduced_shape(x.shape(), axis, keepdims), std::move(out),
                                {x}, [L, arg](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::int64_t o = 0; o < L.outer; ++o)
            for (std::int64_t i = 0; i < L.inner; ++i) {
                const std::int64_t a = arg[std::size_t(o * L.inner + i)];
                in->grad[std::size_t((o * L.axis + a) * L.inner + i)] +=
                    n.grad[std::size_t(o * L.inner + i)];
            }
    });
}

// max along an axis with the output detached from the graph
template <typename S>
TensorT<S> reduce_max_detached(const TensorT<S>& x, int axis, bool keepdims = false) {
    auto L = detail::axis_lines(x.shape(), axis);
    if (axis < 0) axis += x.ndim();
    std::vector<S> out(std::size_t(L.outer * L.inner));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        for (std::int64_t i = 0; i < L.inner; ++i) {
            S best = xv[std::size_t(o * L.axis * L.inner + i)];
            for (std::int64_t a = 1; a < L.axis; ++a)
                best = std::max(best, xv[std::size_t((o * L.axis + a) * L.inner + i)]);
            out[std::size_t(o * L.inner + i)] = best;
        }
    return TensorT<S>::from_data(detail::reduced_shape(x.shape(), axis, keepdims), std::move(out));
}

// argmax along an axis; ties resolve to the lowest index. Detached.
template <typename S>
TensorT<S> argmax(const TensorT<S>& x, int axis) {
    auto L = detail::axis_lines(x.shape(), axis);
    if (axis < 0) axis += x.ndim();
    std::vector<S> out(std::size_t(L.outer * L.inner));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        for (std::int64_t i = 0; i < L.inner; ++i) {
            S best = xv[std::size_t(o * L.axis * L.inner + i)];
            std::int64_t bi = 0;
            for (std::int64_t a = 1; a < L.axis; ++a) {
                const S v = xv[std::size_t((o * L.axis + a) * L.inner + i)];
                if (v > best) {
                    best = v;
                    bi = a;
                }
            }
            out[std::size_t(o * L.inner + i)] = S(bi);
        }
    return TensorT<S>::from_data(detail::reduced_shape(x.shape(), axis, false), std::move(out));
}

// ---------------------------------------------------------------------------
// shape manipulation

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel())
        fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
    std::vector<S> out(x.values().begin(), x.values().end());
    return detail::make_node<S>(std::move(new_shape), std::move(out), {x}, [](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
    });
}

template <typename S>
TensorT<S> permute(const TensorT<S>& x, const std::vector<int>& axes) {
    const int nd = x.ndim();
    if (int(axes.size()) != nd) fail("permute: axes length must equal tensor rank");
    std::vector<bool> seen(std::size_t(nd), false);
    for (int a : axes) {
        if (a < 0 || a >= nd || seen[std::size_t(a)]) fail("permute: invalid axes permutation");
        seen[std::size_t(a)] = true;
    }
    Shape oshape(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) oshape[std::size_t(i)] = x.dim(axes[std::size_t(i)]);
    const auto istrides = detail::contiguous_strides(x.shape());
    std::vector<std::int64_t> gather(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i) gather[std::size_t(i)] = istrides[std::size_t(axes[std::size_t(i)])];

    std::vector<S> out(std::size_t(x.numel()));
    const auto xv = x.values();
    std::vector<std::int64_t> idx(std::size_t(nd), 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        out[std::size_t(i)] = xv[std::size_t(src)];
        for (int d = nd - 1; d >= 0; --d) {
            idx[std::size_t(d)]++;
            src += gather[std::size_t(d)];
            if (idx[std::size_t(d)] < oshape[std::size_t(d)]) break;
            src -= gather[std::size_t(d)] * oshape[std::size_t(d)];
            idx[std::size_t(d)] = 0;
        }
    }
    return detail::make_node<S>(oshape, std::move(out), {x},
                                [oshape, gather, nd](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        std::vector<std::int64_t> idx(std::size_t(nd), 0);
        std::int64_t src = 0;
        for (std::int64_t i = 0; i < std::int64_t(n.grad.size()); ++i) {
            in->grad[std::size_t(src)] += n.grad[std::size_t(i)];
            for (int d = nd - 1; d >= 0; --d) {
                idx[std::size_t(d)]++;
                src += gather[std::size_t(d)];
                if (idx[std::size_t(d)] < oshape[std::size_t(d)]) break;
                src -= gather[std::size_t(d)] * oshape[std::size_t(d)];
                idx[std::size_t(d)] = 0;
            }
        }
    });
}

template <typename S>
TensorT<S> concat(const std::vector<TensorT<S>>& xs, int axis) {
    if (xs.empty()) fail("concat: empty input list");
    const int nd = xs[0].ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) fail("concat: axis out of range");
    std::int64_t axis_total = 0;
    for (const auto& t : xs) {
        if (t.ndim() != nd) fail("concat: rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis && t.dim(d) != xs[0].dim(d))
                fail("concat: shapes " + shape_str(xs[0].shape()) + " and " + shape_str(t.shape()) +
                     " differ outside the concat axis");
        axis_total += t.dim(axis);
    }
    Shape oshape = xs[0].shape();
    oshape[std::size_t(axis)] = axis_total;
    const auto L = detail::axis_lines(oshape, axis);

    std::vector<S> out(std::size_t(numel_of(oshape)));
    std::vector<std::int64_t> axis_sizes;
    for (const auto& t : xs) axis_sizes.push_back(t.dim(axis));
    std::int64_t axis_off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto xv = xs[k].values();
        const std::int64_t ablock = axis_sizes[k] * L.inner;
        for (std::int64_t o = 0; o < L.outer; ++o)
            std::copy(xv.begin() + o * ablock, xv.begin() + (o + 1) * ablock,
                      out.begin() + o * L.axis * L.inner + axis_off * L.inner);
        axis_off += axis_sizes[k];
    }
    std::vector<TensorT<S>> ins = xs;
    return detail::make_node<S>(oshape, std::move(out), std::move(ins),
                                [L, axis_sizes](TensorNode<S>& n) {
        std::int64_t axis_off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            auto& in = n.inputs[k];
            const std::int64_t ablock = axis_sizes[k] * L.inner;
            if (in->requires_grad) {
                in->ensure_grad();
                for (std::int64_t o = 0; o < L.outer; ++o) {
                    const S* src = n.grad.data() + o * L.axis * L.inner + axis_off * L.inner;
                    S* dst = in->grad.data() + o * ablock;
                    for (std::int64_t i = 0; i < ablock; ++i) dst[i] += src[i];
                }
            }
            axis_off += axis_sizes[k];
        }
    });
}

template <typename S>
TensorT<S> slice(const TensorT<S>& x, int axis, std::int64_t start, std::int64_t end) {
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) fail("slice: axis out of range");
    if (start < 0 || end > x.dim(axis) || start >= end)
        fail(strfmt("slice: invalid range [%lld,%lld) for axis size %lld", (long long)start,
                    (long long)end, (long long)x.dim(axis)));
    const auto L = detail::axis_lines(x.shape(), axis);
    Shape oshape = x.shape();
    oshape[std::size_t(axis)] = end - start;
    const std::int64_t oblock = (end - start) * L.inner;
    std::vector<S> out(std::size_t(L.outer * oblock));
    const auto xv = x.values();
    for (std::int64_t o = 0; o < L.outer; ++o)
        std::copy(xv.begin() + (o * L.axis + start) * L.inner,
                  xv.begin() + (o * L.axis + end) * L.inner, out.begin() + o * oblock);
    return detail::make_node<S>(oshape, std::move(out), {x}, [L, start, oblock](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::int64_t o = 0; o < L.outer; ++o) {
            const S* src = n.grad.data() + o * oblock;
            S* dst = in->grad.data() + (o * L.axis + start) * L.inner;
            for (std::int64_t i = 0; i < oblock; ++i) dst[i] += src[i];
        }
    });
}

// Detach from the graph: same values, no gradient path.
template <typename S>
TensorT<S> detach(const TensorT<S>& x) {
    return TensorT<S>::from_data(x.shape(), std::vector<S>(x.values().begin(), x.values().end()));
}

// Straight-through threshold: hard {0,1} forward, identity gradient backward.
// Deliberately not a true gradient; excluded from finite-difference checks.
template <typename S>
TensorT<S> ste_threshold(const TensorT<S>& x, S threshold) {
    std::vector<S> out(std::size_t(x.numel()));
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] >= threshold ? S(1) : S(0);
    return detail::make_node<S>(x.shape(), std::move(out), {x}, [](TensorNode<S>& n) {
        auto& in = n.inputs[0];
        if (!in->requires_grad) return;
        in->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) in->grad[i] += n.grad[i];
    });
}

template <typename S>
bool all_finite(const TensorT<S>& x) {
    for (S v : x.values())
        if (!std::isfinite(double(v))) return false;
    return true;
}

}  // namespace dm
