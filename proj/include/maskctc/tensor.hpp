#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every op builds a node in an implicit computation graph (child holds
// shared_ptr edges to its parents); backward() walks the graph in reverse
// topological order.  Leaf nodes (no parents) keep their grad buffers
// across calls so gradients accumulate until explicitly zeroed;
// intermediate grads are reset on every backward pass.
//
// Storage is templated on the scalar type: the production instantiation
// is float, and tests instantiate double to run finite-difference checks
// at 64-bit precision.  Reductions accumulate in double regardless.
//
// One graph belongs to one thread. Tensors whose graphs are disjoint may
// live on different threads concurrently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maskctc/errors.hpp"
#include "maskctc/rng.hpp"

namespace maskctc {

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
    os << "]";
    return os.str();
}

inline void check_shape_positive(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have rank >= 1");
    for (int d : s)
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(s));
}

template <typename T>
struct NodeT {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT<T>>> parents;
    std::function<void(NodeT<T>&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    bool is_leaf() const { return parents.empty(); }
};

template <typename T>
class TensorT {
public:
    TensorT() = default;

    static TensorT constant(Shape shape, std::vector<T> data) {
        return make(std::move(shape), std::move(data), false);
    }
    static TensorT param(Shape shape, std::vector<T> data) {
        return make(std::move(shape), std::move(data), true);
    }
    static TensorT full(Shape shape, T v) {
        check_shape_positive(shape);
        std::vector<T> data(static_cast<size_t>(numel_of(shape)), v);
        return make(std::move(shape), std::move(data), false);
    }
    static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }
    static TensorT scalar(T v) { return constant({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<T>& values() const { return node_->value; }
    // Mutable access is only sound for leaves (used by parameter updates
    // and finite-difference probes); graphs are otherwise immutable.
    std::vector<T>& raw_values() { return node_->value; }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ContractError("item() called on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    std::shared_ptr<NodeT<T>> node() const { return node_; }

    static TensorT wrap(std::shared_ptr<NodeT<T>> n) {
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static TensorT make(Shape shape, std::vector<T> data, bool requires_grad) {
        check_shape_positive(shape);
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
        auto n = std::make_shared<NodeT<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return wrap(std::move(n));
    }

    std::shared_ptr<NodeT<T>> node_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

namespace detail {

template <typename T>
TensorT<T> make_op(Shape shape, std::vector<T> value, std::vector<TensorT<T>> parents,
                   std::function<void(NodeT<T>&)> bp) {
    auto n = std::make_shared<NodeT<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (auto& p : parents) {
        n->parents.push_back(p.node());
        if (p.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) n->backprop = std::move(bp);
    return TensorT<T>::wrap(std::move(n));
}

// Right-aligned numpy-style broadcast of two shapes; strides are in
// element units with 0 marking a broadcast dimension.
struct BroadcastPlan {
    Shape shape;
    std::vector<int64_t> sa, sb;
    int64_t n = 1;
};

inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

inline BroadcastPlan make_broadcast(const Shape& a, const Shape& b) {
    size_t nd = std::max(a.size(), b.size());
    BroadcastPlan plan;
    plan.shape.resize(nd);
    plan.sa.assign(nd, 0);
    plan.sb.assign(nd, 0);
    auto sa = row_major_strides(a);
    auto sb = row_major_strides(b);
    for (size_t i = 0; i < nd; ++i) {
        size_t oi = nd - 1 - i;
        int ad = i < a.size() ? a[a.size() - 1 - i] : 1;
        int bd = i < b.size() ? b[b.size() - 1 - i] : 1;
        int od;
        if (ad == bd) od = ad;
        else if (ad == 1) od = bd;
        else if (bd == 1) od = ad;
        else throw ShapeError("shapes not broadcast-compatible: " + shape_str(a) + " vs " + shape_str(b));
        plan.shape[oi] = od;
        if (ad != 1 && i < a.size()) plan.sa[oi] = sa[a.size() - 1 - i];
        if (bd != 1 && i < b.size()) plan.sb[oi] = sb[b.size() - 1 - i];
        plan.n *= od;
    }
    return plan;
}

// Calls f(out_index, offset_a, offset_b) for every element of the
// broadcast result, odometer-style.
template <typename F>
void bcast_apply(const BroadcastPlan& plan, F&& f) {
    size_t nd = plan.shape.size();
    std::vector<int> idx(nd, 0);
    int64_t offa = 0, offb = 0;
    for (int64_t i = 0; i < plan.n; ++i) {
        f(i, offa, offb);
        for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            offa += plan.sa[ud];
            offb += plan.sb[ud];
            if (++idx[ud] < plan.shape[ud]) break;
            offa -= plan.sa[ud] * plan.shape[ud];
            offb -= plan.sb[ud] * plan.shape[ud];
            idx[ud] = 0;
        }
    }
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn_acc(const T* A, const T* B, T* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        T* c = C + static_cast<int64_t>(i) * n;
        const T* arow = A + static_cast<int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            T av = arow[kk];
            const T* brow = B + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) c[j] += av * brow[j];
        }
    }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
template <typename T>
void mm_nt_acc(const T* dC, const T* B, T* dA, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* crow = dC + static_cast<int64_t>(i) * n;
        T* arow = dA + static_cast<int64_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T* brow = B + static_cast<int64_t>(kk) * n;
            T s = 0;
            for (int j = 0; j < n; ++j) s += crow[j] * brow[j];
            arow[kk] += s;
        }
    }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
template <typename T>
void mm_tn_acc(const T* A, const T* dC, T* dB, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = A + static_cast<int64_t>(i) * k;
        const T* crow = dC + static_cast<int64_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            T av = arow[kk];
            T* brow = dB + static_cast<int64_t>(kk) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * crow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() == b.shape()) {
        std::vector<T> out(a.values());
        const auto& bv = b.values();
        for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
        return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](NodeT<T>& self) {
            if (a.requires_grad()) {
                a.node()->ensure_grad();
                auto& ga = a.node()->grad;
                for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
            }
            if (b.requires_grad()) {
                b.node()->ensure_grad();
                auto& gb = b.node()->grad;
                for (size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
            }
        });
    }
    auto plan = detail::make_broadcast(a.shape(), b.shape());
    std::vector<T> out(static_cast<size_t>(plan.n));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    detail::bcast_apply(plan, [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = av[oa] + bv[ob]; });
    return detail::make_op<T>(plan.shape, std::move(out), {a, b}, [a, b, plan](NodeT<T>& self) {
        const T* g = self.grad.data();
        if (a.requires_grad()) a.node()->ensure_grad();
        if (b.requires_grad()) b.node()->ensure_grad();
        T* ga = a.requires_grad() ? a.node()->grad.data() : nullptr;
        T* gb = b.requires_grad() ? b.node()->grad.data() : nullptr;
        detail::bcast_apply(plan, [&](int64_t i, int64_t oa, int64_t ob) {
            if (ga) ga[oa] += g[i];
            if (gb) gb[ob] += g[i];
        });
    });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    auto plan = detail::make_broadcast(a.shape(), b.shape());
    std::vector<T> out(static_cast<size_t>(plan.n));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    detail::bcast_apply(plan, [&](int64_t i, int64_t oa, int64_t ob) { out[static_cast<size_t>(i)] = av[oa] * bv[ob]; });
    return detail::make_op<T>(plan.shape, std::move(out), {a, b}, [a, b, plan](NodeT<T>& self) {
        const T* g = self.grad.data();
        const T* av = a.values().data();
        const T* bv = b.values().data();
        if (a.requires_grad()) a.node()->ensure_grad();
        if (b.requires_grad()) b.node()->ensure_grad();
        T* ga = a.requires_grad() ? a.node()->grad.data() : nullptr;
        T* gb = b.requires_grad() ? b.node()->grad.data() : nullptr;
        detail::bcast_apply(plan, [&](int64_t i, int64_t oa, int64_t ob) {
            if (ga) ga[oa] += g[i] * bv[ob];
            if (gb) gb[ob] += g[i] * av[oa];
        });
    });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    std::vector<T> out(a.values());
    for (auto& v : out) v *= c;
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [a, c](NodeT<T>& self) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
    });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T c) {
    std::vector<T> out(a.values());
    for (auto& v : out) v += c;
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](NodeT<T>& self) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> neg(const TensorT<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return add(a, neg(b));
}

template <typename T>
TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <typename T>
TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <typename T>
TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    std::vector<T> out(a.values());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [a](NodeT<T>& self) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        const auto& av = a.values();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (av[i] > T(0)) ga[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// matmul

// Standard matrix product over the last two dims; leading dims broadcast.
// Gradient rule: dA = dC * B^T, dB = A^T * dC (summed over broadcast dims).
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2)
        throw ShapeError("matmul needs rank >= 2 operands: " + shape_str(sa) + " vs " + shape_str(sb));
    int m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    int k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (k != k2)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));

    Shape batch_a(sa.begin(), sa.end() - 2);
    Shape batch_b(sb.begin(), sb.end() - 2);
    if (batch_a.empty()) batch_a = {1};
    if (batch_b.empty()) batch_b = {1};
    detail::BroadcastPlan plan;
    try {
        plan = detail::make_broadcast(batch_a, batch_b);
    } catch (const ShapeError&) {
        throw ShapeError("matmul batch dimensions disagree: " + shape_str(sa) + " x " + shape_str(sb));
    }
    // strides are per batch element; scale to full matrices
    for (auto& s : plan.sa) s *= static_cast<int64_t>(m) * k;
    for (auto& s : plan.sb) s *= static_cast<int64_t>(k) * n;

    Shape out_shape;
    if (sa.size() > 2 || sb.size() > 2)
        for (int d : plan.shape) out_shape.push_back(d);
    out_shape.push_back(m);
    out_shape.push_back(n);

    std::vector<T> out(static_cast<size_t>(plan.n) * m * n, T(0));
    const T* av = a.values().data();
    const T* bv = b.values().data();
    detail::bcast_apply(plan, [&](int64_t i, int64_t oa, int64_t ob) {
        detail::mm_nn_acc(av + oa, bv + ob, out.data() + i * m * n, m, k, n);
    });

    return detail::make_op<T>(std::move(out_shape), std::move(out), {a, b},
                              [a, b, plan, m, k, n](NodeT<T>& self) {
                                  const T* g = self.grad.data();
                                  const T* av = a.values().data();
                                  const T* bv = b.values().data();
                                  if (a.requires_grad()) a.node()->ensure_grad();
                                  if (b.requires_grad()) b.node()->ensure_grad();
                                  T* ga = a.requires_grad() ? a.node()->grad.data() : nullptr;
                                  T* gb = b.requires_grad() ? b.node()->grad.data() : nullptr;
                                  detail::bcast_apply(plan, [&](int64_t i, int64_t oa, int64_t ob) {
                                      const T* gc = g + i * m * n;
                                      if (ga) detail::mm_nt_acc(gc, bv + ob, ga + oa, m, n, k);
                                      if (gb) detail::mm_tn_acc(av + oa, gc, gb + ob, m, k, n);
                                  });
                              });
}

// ---------------------------------------------------------------------------
// softmax family (last dim, max-subtracted)

template <typename T>
TensorT<T> log_softmax(const TensorT<T>& x) {
    int d = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / d;
    std::vector<T> out(x.values().size());
    const T* xv = x.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * d;
        T m = row[0];
        for (int j = 0; j < d; ++j) {
            if (!std::isfinite(static_cast<double>(row[j])))
                throw NumericError("log_softmax: non-finite input at row " + std::to_string(r));
            m = std::max(m, row[j]);
        }
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += std::exp(static_cast<double>(row[j] - m));
        T lse = m + static_cast<T>(std::log(s));
        T* orow = out.data() + r * d;
        for (int j = 0; j < d; ++j) orow[j] = row[j] - lse;
    }
    return detail::make_op<T>(x.shape(), std::move(out), {x}, [x, d, rows](NodeT<T>& self) {
        x.node()->ensure_grad();
        T* gx = x.node()->grad.data();
        const T* g = self.grad.data();
        const T* ov = self.value.data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = g + r * d;
            const T* orow = ov + r * d;
            double sg = 0.0;
            for (int j = 0; j < d; ++j) sg += static_cast<double>(grow[j]);
            T* gxrow = gx + r * d;
            for (int j = 0; j < d; ++j)
                gxrow[j] += grow[j] - static_cast<T>(std::exp(static_cast<double>(orow[j])) * sg);
        }
    });
}

// softmax tolerates -inf entries (masked attention scores); a fully
// masked row is an error.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x) {
    int d = x.dim(x.rank() - 1);
    int64_t rows = x.numel() / d;
    std::vector<T> out(x.values().size());
    const T* xv = x.values().data();
    const T ninf = -std::numeric_limits<T>::infinity();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * d;
        T m = ninf;
        for (int j = 0; j < d; ++j) {
            if (std::isnan(static_cast<double>(row[j])) || row[j] == std::numeric_limits<T>::infinity())
                throw NumericError("softmax: invalid input at row " + std::to_string(r));
            m = std::max(m, row[j]);
        }
        if (m == ninf) throw NumericError("softmax: fully masked row " + std::to_string(r));
        double s = 0.0;
        T* orow = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            double e = std::exp(static_cast<double>(row[j] - m));
            orow[j] = static_cast<T>(e);
            s += e;
        }
        T inv = static_cast<T>(1.0 / s);
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
    return detail::make_op<T>(x.shape(), std::move(out), {x}, [x, d, rows](NodeT<T>& self) {
        x.node()->ensure_grad();
        T* gx = x.node()->grad.data();
        const T* g = self.grad.data();
        const T* p = self.value.data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* grow = g + r * d;
            const T* prow = p + r * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += static_cast<double>(grow[j]) * prow[j];
            T* gxrow = gx + r * d;
            for (int j = 0; j < d; ++j) gxrow[j] += prow[j] * (grow[j] - static_cast<T>(dot));
        }
    });
}

// ---------------------------------------------------------------------------
// layer norm

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias, T eps) {
    int d = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw ShapeError("layer_norm affine params must be [d]=" + std::to_string(d) + ", got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    if (eps <= T(0)) throw ContractError("layer_norm eps must be positive");
    int64_t rows = x.numel() / d;
    std::vector<T> out(x.values().size());
    auto xhat = std::make_shared<std::vector<T>>(x.values().size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const T* xv = x.values().data();
    const T* gv = gain.values().data();
    const T* bv = bias.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        (*inv_std)[static_cast<size_t>(r)] = istd;
        T* hrow = xhat->data() + r * d;
        T* orow = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            hrow[j] = static_cast<T>((row[j] - mean)) * istd;
            orow[j] = gv[j] * hrow[j] + bv[j];
        }
    }
    return detail::make_op<T>(x.shape(), std::move(out), {x, gain, bias},
                              [x, gain, bias, d, rows, xhat, inv_std](NodeT<T>& self) {
                                  const T* g = self.grad.data();
                                  const T* gv = gain.values().data();
                                  if (x.requires_grad()) x.node()->ensure_grad();
                                  if (gain.requires_grad()) gain.node()->ensure_grad();
                                  if (bias.requires_grad()) bias.node()->ensure_grad();
                                  T* gx = x.requires_grad() ? x.node()->grad.data() : nullptr;
                                  T* gg = gain.requires_grad() ? gain.node()->grad.data() : nullptr;
                                  T* gb = bias.requires_grad() ? bias.node()->grad.data() : nullptr;
                                  for (int64_t r = 0; r < rows; ++r) {
                                      const T* grow = g + r * d;
                                      const T* hrow = xhat->data() + r * d;
                                      if (gg || gb) {
                                          for (int j = 0; j < d; ++j) {
                                              if (gg) gg[j] += grow[j] * hrow[j];
                                              if (gb) gb[j] += grow[j];
                                          }
                                      }
                                      if (gx) {
                                          double m1 = 0.0, m2 = 0.0;
                                          for (int j = 0; j < d; ++j) {
                                              double dh = static_cast<double>(grow[j]) * gv[j];
                                              m1 += dh;
                                              m2 += dh * hrow[j];
                                          }
                                          m1 /= d;
                                          m2 /= d;
                                          T istd = (*inv_std)[static_cast<size_t>(r)];
                                          T* gxrow = gx + r * d;
                                          for (int j = 0; j < d; ++j) {
                                              double dh = static_cast<double>(grow[j]) * gv[j];
                                              gxrow[j] += static_cast<T>((dh - m1 - hrow[j] * m2)) * istd;
                                          }
                                      }
                                  }
                              });
}

// ---------------------------------------------------------------------------
// logaddexp (elementwise, -inf safe; the CTC forward recursion runs on this)

template <typename T>
TensorT<T> logaddexp(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("logaddexp shapes disagree: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const T ninf = -std::numeric_limits<T>::infinity();
    std::vector<T> out(a.values().size());
    const T* av = a.values().data();
    const T* bv = b.values().data();
    for (size_t i = 0; i < out.size(); ++i) {
        T m = std::max(av[i], bv[i]);
        if (m == ninf) {
            out[i] = ninf;
        } else {
            out[i] = m + static_cast<T>(std::log(std::exp(static_cast<double>(av[i] - m)) +
                                                 std::exp(static_cast<double>(bv[i] - m))));
        }
    }
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [a, b, ninf](NodeT<T>& self) {
        const T* g = self.grad.data();
        const T* av = a.values().data();
        const T* bv = b.values().data();
        const T* ov = self.value.data();
        if (a.requires_grad()) a.node()->ensure_grad();
        if (b.requires_grad()) b.node()->ensure_grad();
        T* ga = a.requires_grad() ? a.node()->grad.data() : nullptr;
        T* gb = b.requires_grad() ? b.node()->grad.data() : nullptr;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (ov[i] == ninf) continue;  // both branches dead, weight 0
            if (ga && av[i] != ninf) ga[i] += g[i] * static_cast<T>(std::exp(static_cast<double>(av[i] - ov[i])));
            if (gb && bv[i] != ninf) gb[i] += g[i] * static_cast<T>(std::exp(static_cast<double>(bv[i] - ov[i])));
        }
    });
}

// ---------------------------------------------------------------------------
// structural ops

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
    check_shape_positive(shape);
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    std::vector<T> out(a.values());
    return detail::make_op<T>(std::move(shape), std::move(out), {a}, [a](NodeT<T>& self) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> transpose_last2(const TensorT<T>& a) {
    if (a.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2, got " + shape_str(a.shape()));
    Shape s = a.shape();
    int r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
    std::swap(s[s.size() - 1], s[s.size() - 2]);
    int64_t mats = a.numel() / (static_cast<int64_t>(r) * c);
    std::vector<T> out(a.values().size());
    const T* av = a.values().data();
    for (int64_t m = 0; m < mats; ++m) {
        const T* src = av + m * r * c;
        T* dst = out.data() + m * r * c;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) dst[static_cast<int64_t>(j) * r + i] = src[static_cast<int64_t>(i) * c + j];
    }
    return detail::make_op<T>(std::move(s), std::move(out), {a}, [a, r, c, mats](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data();
        const T* g = self.grad.data();
        for (int64_t m = 0; m < mats; ++m) {
            const T* src = g + m * r * c;
            T* dst = ga + m * r * c;
            for (int j = 0; j < c; ++j)
                for (int i = 0; i < r; ++i) dst[static_cast<int64_t>(i) * c + j] += src[static_cast<int64_t>(j) * r + i];
        }
    });
}

// [L, h*dk] -> [h, L, dk]
template <typename T>
TensorT<T> split_heads(const TensorT<T>& a, int heads) {
    if (a.rank() != 2) throw ShapeError("split_heads expects [L, d], got " + shape_str(a.shape()));
    int L = a.dim(0), d = a.dim(1);
    if (d % heads != 0) throw ShapeError("split_heads: width " + std::to_string(d) + " not divisible by " + std::to_string(heads));
    int dk = d / heads;
    std::vector<T> out(a.values().size());
    const T* av = a.values().data();
    for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l)
            for (int c = 0; c < dk; ++c)
                out[(static_cast<int64_t>(h) * L + l) * dk + c] = av[static_cast<int64_t>(l) * d + h * dk + c];
    return detail::make_op<T>({heads, L, dk}, std::move(out), {a}, [a, heads, L, d, dk](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data();
        const T* g = self.grad.data();
        for (int h = 0; h < heads; ++h)
            for (int l = 0; l < L; ++l)
                for (int c = 0; c < dk; ++c)
                    ga[static_cast<int64_t>(l) * d + h * dk + c] += g[(static_cast<int64_t>(h) * L + l) * dk + c];
    });
}

// [h, L, dk] -> [L, h*dk]
template <typename T>
TensorT<T> merge_heads(const TensorT<T>& a) {
    if (a.rank() != 3) throw ShapeError("merge_heads expects [h, L, dk], got " + shape_str(a.shape()));
    int heads = a.dim(0), L = a.dim(1), dk = a.dim(2);
    int d = heads * dk;
    std::vector<T> out(a.values().size());
    const T* av = a.values().data();
    for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l)
            for (int c = 0; c < dk; ++c)
                out[static_cast<int64_t>(l) * d + h * dk + c] = av[(static_cast<int64_t>(h) * L + l) * dk + c];
    return detail::make_op<T>({L, d}, std::move(out), {a}, [a, heads, L, d, dk](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data();
        const T* g = self.grad.data();
        for (int h = 0; h < heads; ++h)
            for (int l = 0; l < L; ++l)
                for (int c = 0; c < dk; ++c)
                    ga[(static_cast<int64_t>(h) * L + l) * dk + c] += g[static_cast<int64_t>(l) * d + h * dk + c];
    });
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& a, int start, int len) {
    int rows = a.dim(0);
    if (len < 1 || start < 0 || start + len > rows)
        throw ShapeError("slice_rows [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") out of range for " + shape_str(a.shape()));
    int64_t row_size = a.numel() / rows;
    Shape s = a.shape();
    s[0] = len;
    std::vector<T> out(static_cast<size_t>(len * row_size));
    std::copy_n(a.values().data() + start * row_size, out.size(), out.data());
    return detail::make_op<T>(std::move(s), std::move(out), {a}, [a, start, row_size](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data() + start * row_size;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
    Shape sa = a.shape(), sb = b.shape();
    if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
        throw ShapeError("concat_rows trailing dims disagree: " + shape_str(sa) + " vs " + shape_str(sb));
    Shape s = sa;
    s[0] = sa[0] + sb[0];
    std::vector<T> out;
    out.reserve(a.values().size() + b.values().size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    size_t na = a.values().size();
    return detail::make_op<T>(std::move(s), std::move(out), {a, b}, [a, b, na](NodeT<T>& self) {
        if (a.requires_grad()) {
            a.node()->ensure_grad();
            auto& ga = a.node()->grad;
            for (size_t i = 0; i < na; ++i) ga[i] += self.grad[i];
        }
        if (b.requires_grad()) {
            b.node()->ensure_grad();
            auto& gb = b.node()->grad;
            for (size_t i = na; i < self.grad.size(); ++i) gb[i - na] += self.grad[i];
        }
    });
}

// Embedding-style lookup over the first dim: out[i] = a[idx[i]].
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& a, const std::vector<int>& idx) {
    int rows = a.dim(0);
    for (int i : idx)
        if (i < 0 || i >= rows)
            throw ContractError("gather_rows index " + std::to_string(i) + " out of range [0, " + std::to_string(rows) + ")");
    if (idx.empty()) throw ShapeError("gather_rows needs at least one index");
    int64_t row_size = a.numel() / rows;
    Shape s = a.shape();
    s[0] = static_cast<int>(idx.size());
    std::vector<T> out(idx.size() * static_cast<size_t>(row_size));
    const T* av = a.values().data();
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy_n(av + static_cast<int64_t>(idx[i]) * row_size, row_size, out.data() + static_cast<int64_t>(i) * row_size);
    return detail::make_op<T>(std::move(s), std::move(out), {a}, [a, idx, row_size](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data();
        const T* g = self.grad.data();
        for (size_t i = 0; i < idx.size(); ++i) {
            T* dst = ga + static_cast<int64_t>(idx[i]) * row_size;
            const T* src = g + static_cast<int64_t>(i) * row_size;
            for (int64_t j = 0; j < row_size; ++j) dst[j] += src[j];
        }
    });
}

// Column gather on a rank-2 tensor: out[r, j] = a[r, idx[j]].
template <typename T>
TensorT<T> gather_cols(const TensorT<T>& a, const std::vector<int>& idx) {
    if (a.rank() != 2) throw ShapeError("gather_cols expects rank 2, got " + shape_str(a.shape()));
    if (idx.empty()) throw ShapeError("gather_cols needs at least one index");
    int rows = a.dim(0), cols = a.dim(1);
    for (int i : idx)
        if (i < 0 || i >= cols)
            throw ContractError("gather_cols index " + std::to_string(i) + " out of range [0, " + std::to_string(cols) + ")");
    int m = static_cast<int>(idx.size());
    std::vector<T> out(static_cast<size_t>(rows) * m);
    const T* av = a.values().data();
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < m; ++j) out[static_cast<int64_t>(r) * m + j] = av[static_cast<int64_t>(r) * cols + idx[j]];
    return detail::make_op<T>({rows, m}, std::move(out), {a}, [a, idx, rows, cols, m](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data();
        const T* g = self.grad.data();
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < m; ++j) ga[static_cast<int64_t>(r) * cols + idx[j]] += g[static_cast<int64_t>(r) * m + j];
    });
}

// out[r] = a[r, idx[r]] for a rank-2 tensor.
template <typename T>
TensorT<T> pick(const TensorT<T>& a, const std::vector<int>& idx) {
    if (a.rank() != 2) throw ShapeError("pick expects rank 2, got " + shape_str(a.shape()));
    int rows = a.dim(0), cols = a.dim(1);
    if (static_cast<int>(idx.size()) != rows)
        throw ContractError("pick needs one index per row: " + std::to_string(idx.size()) + " vs " + std::to_string(rows));
    for (int i : idx)
        if (i < 0 || i >= cols)
            throw ContractError("pick index " + std::to_string(i) + " out of range [0, " + std::to_string(cols) + ")");
    std::vector<T> out(static_cast<size_t>(rows));
    const T* av = a.values().data();
    for (int r = 0; r < rows; ++r) out[static_cast<size_t>(r)] = av[static_cast<int64_t>(r) * cols + idx[r]];
    return detail::make_op<T>({rows}, std::move(out), {a}, [a, idx, rows, cols](NodeT<T>& self) {
        a.node()->ensure_grad();
        T* ga = a.node()->grad.data();
        const T* g = self.grad.data();
        for (int r = 0; r < rows; ++r) ga[static_cast<int64_t>(r) * cols + idx[r]] += g[r];
    });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
    double s = 0.0;
    for (T v : a.values()) s += static_cast<double>(v);
    return detail::make_op<T>({1}, {static_cast<T>(s)}, {a}, [a](NodeT<T>& self) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        T g = self.grad[0];
        for (auto& v : ga) v += g;
    });
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
    return scale(sum_all(a), static_cast<T>(1.0 / static_cast<double>(a.numel())));
}

// ---------------------------------------------------------------------------
// dropout (inverted scaling; identity when rate == 0)

template <typename T>
TensorT<T> dropout(const TensorT<T>& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    if (rate == 0.0) return a;
    auto mask = std::make_shared<std::vector<T>>(a.values().size());
    T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> out(a.values());
    for (size_t i = 0; i < out.size(); ++i) {
        T m = rng.uniform() >= rate ? keep_scale : T(0);
        (*mask)[i] = m;
        out[i] *= m;
    }
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [a, mask](NodeT<T>& self) {
        a.node()->ensure_grad();
        auto& ga = a.node()->grad;
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// backward

// Accumulates d(loss)/d(leaf) into every reachable leaf with
// requires_grad. Intermediate grads are zeroed per call, so calling
// backward twice doubles leaf grads (additive accumulation contract).
template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    using Node = NodeT<T>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative postorder DFS
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // fresh grads for intermediates; leaves keep accumulating
    for (Node* n : order) {
        if (!n->requires_grad) continue;
        if (n->is_leaf()) {
            n->ensure_grad();
        } else {
            n->grad.assign(n->value.size(), T(0));
        }
    }
    Node* root = loss.node().get();
    if (!root->requires_grad) return;
    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
}

}  // namespace maskctc
