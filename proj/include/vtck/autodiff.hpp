#pragma once

// Tape-based reverse-mode autodiff over Tensor<Real>. A Graph records ops as
// they execute and replays local gradient rules in reverse creation order.
// Graphs are cheap and rebuilt per training step; one graph is single-threaded
// by contract, but independent graphs may run concurrently (parallel batch
// members each own a graph, leaf gradients are flushed serially afterwards).

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "vtck/kernels.hpp"
#include "vtck/tensor.hpp"

namespace vtck {

namespace detail {

// Row-major strides of `shape` as seen from an index space padded to nd dims.
// Broadcast dims get stride 0.
inline void broadcast_strides(const Shape& shape, const Shape& out, int64_t* strides) {
    const size_t nd = out.size();
    const size_t pad = nd - shape.size();
    int64_t run = 1;
    for (size_t i = nd; i-- > 0;) {
        if (i < pad || shape[i - pad] == 1) {
            strides[i] = 0;
        } else {
            strides[i] = run;
            run *= shape[i - pad];
        }
    }
}

// Applies fn(out_index, a_offset, b_offset) over every element of the
// broadcast result shape. Supports up to 4 dims, which is all the graph needs.
template <class Fn>
void broadcast_walk(const Shape& a, const Shape& b, const Shape& out, Fn&& fn) {
    const size_t nd = out.size();
    if (nd > 4) throw DimError("broadcast: rank > 4 unsupported");
    int64_t dims[4] = {1, 1, 1, 1};
    int64_t sa[4] = {0, 0, 0, 0};
    int64_t sb[4] = {0, 0, 0, 0};
    int64_t sa_raw[4], sb_raw[4];
    broadcast_strides(a, out, sa_raw);
    broadcast_strides(b, out, sb_raw);
    // Right-align into fixed 4-dim index space.
    for (size_t i = 0; i < nd; ++i) {
        dims[4 - nd + i] = out[i];
        sa[4 - nd + i] = sa_raw[i];
        sb[4 - nd + i] = sb_raw[i];
    }
    int64_t idx = 0;
    for (int64_t i0 = 0; i0 < dims[0]; ++i0)
        for (int64_t i1 = 0; i1 < dims[1]; ++i1)
            for (int64_t i2 = 0; i2 < dims[2]; ++i2) {
                int64_t oa = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                int64_t ob = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for (int64_t i3 = 0; i3 < dims[3]; ++i3) {
                    fn(idx++, oa + i3 * sa[3], ob + i3 * sb[3]);
                }
            }
}

// True when b broadcasts onto a as a repeated suffix (e.g. bias [H] or row
// [1,H] onto [n,H]); the hot conditioning adds all look like this, and the
// modulo form avoids the generic index walk.
inline bool suffix_broadcast(const Shape& a, const Shape& b, const Shape& out) {
    if (a != out) return false;
    const int64_t nb = shape_numel(b);
    if (nb == 0) return false;
    // b's dims must equal a's trailing dims once leading 1s are stripped
    size_t lead = 0;
    while (lead < b.size() && b[lead] == 1) ++lead;
    const size_t tail = b.size() - lead;
    if (tail > a.size()) return false;
    for (size_t i = 0; i < tail; ++i) {
        if (b[lead + i] != a[a.size() - tail + i]) return false;
    }
    return true;
}

}  // namespace detail

template <class Real>
class Graph {
public:
    using Id = int32_t;

    // Registers a leaf. The tensor's data (and grad buffer) stay shared with
    // the caller; flush_leaf_grads() accumulates into it when requires_grad.
    Id input(const Tensor<Real>& t) {
        Node node;
        node.value = t;
        node.needs_grad = t.requires_grad();
        node.is_leaf = true;
        nodes_.push_back(std::move(node));
        return static_cast<Id>(nodes_.size() - 1);
    }

    const Tensor<Real>& value(Id id) const { return nodes_[check(id)].value; }

    // Copy of the node's accumulated gradient (zeros when untouched).
    Tensor<Real> grad(Id id) const {
        const Node& n = nodes_[check(id)];
        Tensor<Real> g = Tensor<Real>::zeros(n.value.shape());
        if (!n.grad.empty()) {
            for (int64_t i = 0; i < g.numel(); ++i) g[i] = n.grad[static_cast<size_t>(i)];
        }
        return g;
    }

    Id add(Id a, Id b) { return binary(a, b, /*is_mul=*/false, /*sign=*/Real(1)); }
    Id sub(Id a, Id b) { return binary(a, b, /*is_mul=*/false, /*sign=*/Real(-1)); }
    Id mul(Id a, Id b) { return binary(a, b, /*is_mul=*/true, /*sign=*/Real(1)); }

    Id scale(Id a, Real s) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        Tensor<Real> out = Tensor<Real>::zeros(va.shape());
        kernels::scale(va.numel(), s, va.data(), out.data());
        return make_node(std::move(out), {a}, [a, s](Graph& g, Id self) {
            if (!g.wants(a)) return;
            const auto& grad = g.nodes_[self].grad;
            kernels::axpy<Real>(static_cast<int64_t>(grad.size()), s, grad.data(), g.grad_buf(a));
        });
    }

    Id matmul(Id a, Id b) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        const Tensor<Real>& vb = nodes_[check(b)].value;
        require_2d(va, "matmul lhs");
        require_2d(vb, "matmul rhs");
        const int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
        if (vb.dim(0) != k) {
            throw DimError("matmul: inner dims " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
        }
        Tensor<Real> out = Tensor<Real>::zeros({m, n});
        kernels::matmul_nn(m, k, n, va.data(), vb.data(), out.data());
        return make_node(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, Id self) {
            const Real* grad = g.nodes_[self].grad.data();
            if (g.wants(a)) {
                std::vector<Real> tmp(static_cast<size_t>(m * k));
                kernels::matmul_nt(m, n, k, grad, g.nodes_[b].value.data(), tmp.data());
                kernels::axpy<Real>(m * k, Real(1), tmp.data(), g.grad_buf(a));
            }
            if (g.wants(b)) {
                std::vector<Real> tmp(static_cast<size_t>(k * n));
                kernels::matmul_tn(k, m, n, g.nodes_[a].value.data(), grad, tmp.data());
                kernels::axpy<Real>(k * n, Real(1), tmp.data(), g.grad_buf(b));
            }
        });
    }

    // C = A * B^T with A[m,k], B[n,k]; the natural orientation for y = x W^T.
    Id matmul_nt(Id a, Id b) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        const Tensor<Real>& vb = nodes_[check(b)].value;
        require_2d(va, "matmul_nt lhs");
        require_2d(vb, "matmul_nt rhs");
        const int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(0);
        if (vb.dim(1) != k) {
            throw DimError("matmul_nt: inner dims " + shape_str(va.shape()) + " x " + shape_str(vb.shape()) + "^T");
        }
        Tensor<Real> out = Tensor<Real>::zeros({m, n});
        kernels::matmul_nt(m, k, n, va.data(), vb.data(), out.data());
        return make_node(std::move(out), {a, b}, [a, b, m, k, n](Graph& g, Id self) {
            const Real* grad = g.nodes_[self].grad.data();
            if (g.wants(a)) {
                std::vector<Real> tmp(static_cast<size_t>(m * k));
                kernels::matmul_nn(m, n, k, grad, g.nodes_[b].value.data(), tmp.data());
                kernels::axpy<Real>(m * k, Real(1), tmp.data(), g.grad_buf(a));
            }
            if (g.wants(b)) {
                std::vector<Real> tmp(static_cast<size_t>(n * k));
                kernels::matmul_tn(n, m, k, grad, g.nodes_[a].value.data(), tmp.data());
                kernels::axpy<Real>(n * k, Real(1), tmp.data(), g.grad_buf(b));
            }
        });
    }

    // Softmax over the last axis.
    Id softmax(Id a) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        if (va.ndim() < 1 || va.numel() == 0) throw DimError("softmax: empty input");
        const int64_t cols = va.shape().back();
        const int64_t rows = va.numel() / cols;
        Tensor<Real> out = Tensor<Real>::zeros(va.shape());
        kernels::softmax_rows(rows, cols, va.data(), out.data());
        return make_node(std::move(out), {a}, [a, rows, cols](Graph& g, Id self) {
            if (!g.wants(a)) return;
            const Real* grad = g.nodes_[self].grad.data();
            const Real* y = g.nodes_[self].value.data();
            Real* da = g.grad_buf(a);
            for (int64_t r = 0; r < rows; ++r) {
                const Real* gr = grad + r * cols;
                const Real* yr = y + r * cols;
                Real dot = Real(0);
                for (int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
                Real* dr = da + r * cols;
                for (int64_t c = 0; c < cols; ++c) dr[c] += yr[c] * (gr[c] - dot);
            }
        });
    }

    // Layer norm over the last axis with affine gain/bias (1-D, length cols).
    Id layer_norm(Id x, Id gain, Id bias, Real eps) {
        const Tensor<Real>& vx = nodes_[check(x)].value;
        const Tensor<Real>& vg = nodes_[check(gain)].value;
        const Tensor<Real>& vb = nodes_[check(bias)].value;
        if (vx.ndim() < 1 || vx.numel() == 0) throw DimError("layer_norm: empty input");
        const int64_t cols = vx.shape().back();
        if (vg.numel() != cols || vb.numel() != cols) {
            throw DimError("layer_norm: gain/bias length must equal last dim " + std::to_string(cols));
        }
        const int64_t rows = vx.numel() / cols;
        Tensor<Real> out = Tensor<Real>::zeros(vx.shape());
        auto stash = std::make_shared<std::vector<Real>>(static_cast<size_t>(2 * rows));
        Real* mean = stash->data();
        Real* rstd = stash->data() + rows;
        kernels::layer_norm_rows(rows, cols, vx.data(), vg.data(), vb.data(), eps, out.data(), mean, rstd);
        return make_node(std::move(out), {x, gain, bias},
                         [x, gain, bias, rows, cols, stash](Graph& g, Id self) {
            const Real* grad = g.nodes_[self].grad.data();
            const Real* xv = g.nodes_[x].value.data();
            const Real* gv = g.nodes_[gain].value.data();
            const Real* mean = stash->data();
            const Real* rstd = stash->data() + rows;
            Real* dx = g.wants(x) ? g.grad_buf(x) : nullptr;
            Real* dg = g.wants(gain) ? g.grad_buf(gain) : nullptr;
            Real* db = g.wants(bias) ? g.grad_buf(bias) : nullptr;
            std::vector<Real> xhat(static_cast<size_t>(cols));
            std::vector<Real> gh(static_cast<size_t>(cols));
            for (int64_t r = 0; r < rows; ++r) {
                const Real* xr = xv + r * cols;
                const Real* gr = grad + r * cols;
                for (int64_t c = 0; c < cols; ++c) xhat[static_cast<size_t>(c)] = (xr[c] - mean[r]) * rstd[r];
                if (dg) {
                    for (int64_t c = 0; c < cols; ++c) dg[c] += gr[c] * xhat[static_cast<size_t>(c)];
                }
                if (db) {
                    for (int64_t c = 0; c < cols; ++c) db[c] += gr[c];
                }
                if (dx) {
                    Real m1 = Real(0), m2 = Real(0);
                    for (int64_t c = 0; c < cols; ++c) {
                        gh[static_cast<size_t>(c)] = gr[c] * gv[c];
                        m1 += gh[static_cast<size_t>(c)];
                        m2 += gh[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
                    }
                    m1 /= Real(cols);
                    m2 /= Real(cols);
                    Real* dxr = dx + r * cols;
                    for (int64_t c = 0; c < cols; ++c) {
                        dxr[c] += rstd[r] * (gh[static_cast<size_t>(c)] - m1 - xhat[static_cast<size_t>(c)] * m2);
                    }
                }
            }
        });
    }

    Id gelu(Id a) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        Tensor<Real> out = Tensor<Real>::zeros(va.shape());
        kernels::gelu(va.numel(), va.data(), out.data());
        return make_node(std::move(out), {a}, [a](Graph& g, Id self) {
            if (!g.wants(a)) return;
            const auto& grad = g.nodes_[self].grad;
            const Real* xv = g.nodes_[a].value.data();
            Real* da = g.grad_buf(a);
            constexpr Real kInvSqrt2 = Real(0.7071067811865475);
            constexpr Real kInvSqrt2Pi = Real(0.3989422804014327);
            for (size_t i = 0; i < grad.size(); ++i) {
                const Real x = xv[i];
                const Real cdf = Real(0.5) * (Real(1) + std::erf(x * kInvSqrt2));
                const Real pdf = kInvSqrt2Pi * std::exp(Real(-0.5) * x * x);
                da[i] += grad[i] * (cdf + x * pdf);
            }
        });
    }

    Id tanh_op(Id a) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        Tensor<Real> out = Tensor<Real>::zeros(va.shape());
        kernels::tanh(va.numel(), va.data(), out.data());
        return make_node(std::move(out), {a}, [a](Graph& g, Id self) {
            if (!g.wants(a)) return;
            const auto& grad = g.nodes_[self].grad;
            const Real* y = g.nodes_[self].value.data();
            Real* da = g.grad_buf(a);
            for (size_t i = 0; i < grad.size(); ++i) da[i] += grad[i] * (Real(1) - y[i] * y[i]);
        });
    }

    // Columns [c0, c1) of a 2-D tensor.
    Id slice_cols(Id a, int64_t c0, int64_t c1) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        require_2d(va, "slice_cols");
        const int64_t rows = va.dim(0), cols = va.dim(1);
        if (c0 < 0 || c1 > cols || c0 >= c1) throw DimError("slice_cols: bad range");
        const int64_t w = c1 - c0;
        Tensor<Real> out = Tensor<Real>::zeros({rows, w});
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < w; ++c) out[r * w + c] = va[r * cols + c0 + c];
        }
        return make_node(std::move(out), {a}, [a, rows, cols, c0, w](Graph& g, Id self) {
            if (!g.wants(a)) return;
            const auto& grad = g.nodes_[self].grad;
            Real* da = g.grad_buf(a);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < w; ++c) da[r * cols + c0 + c] += grad[static_cast<size_t>(r * w + c)];
            }
        });
    }

    Id concat_cols(const std::vector<Id>& parts) {
        if (parts.empty()) throw DimError("concat_cols: no inputs");
        const int64_t rows = nodes_[check(parts[0])].value.dim(0);
        int64_t total = 0;
        for (Id p : parts) {
            const Tensor<Real>& v = nodes_[check(p)].value;
            require_2d(v, "concat_cols");
            if (v.dim(0) != rows) throw DimError("concat_cols: row mismatch");
            total += v.dim(1);
        }
        Tensor<Real> out = Tensor<Real>::zeros({rows, total});
        int64_t off = 0;
        for (Id p : parts) {
            const Tensor<Real>& v = nodes_[p].value;
            const int64_t w = v.dim(1);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t c = 0; c < w; ++c) out[r * total + off + c] = v[r * w + c];
            }
            off += w;
        }
        std::vector<Id> ins(parts);
        return make_node(std::move(out), ins, [ins, rows, total](Graph& g, Id self) {
            const auto& grad = g.nodes_[self].grad;
            int64_t off = 0;
            for (Id p : ins) {
                const int64_t w = g.nodes_[p].value.dim(1);
                if (g.wants(p)) {
                    Real* dp = g.grad_buf(p);
                    for (int64_t r = 0; r < rows; ++r) {
                        for (int64_t c = 0; c < w; ++c) dp[r * w + c] += grad[static_cast<size_t>(r * total + off + c)];
                    }
                }
                off += w;
            }
        });
    }

    Id sum(Id a) { return reduce(a, /*mean=*/false); }
    Id mean(Id a) { return reduce(a, /*mean=*/true); }

    // Runs the reverse pass and flushes leaf gradients into the registered
    // tensors' grad buffers. Repeated calls accumulate.
    void backward(Id loss, Real seed = Real(1)) {
        backward_nodes(loss, seed);
        flush_leaf_grads();
    }

    // Reverse pass only; node-local gradients are reset first. Use together
    // with flush_leaf_grads() when several graphs must flush in a fixed order.
    void backward_nodes(Id loss, Real seed = Real(1)) {
        Node& ln = nodes_[check(loss)];
        if (ln.value.numel() != 1) {
            throw ContractError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
        }
        for (Node& n : nodes_) {
            if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), Real(0));
        }
        grad_buf(loss)[0] = seed;
        for (Id id = static_cast<Id>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.backprop && n.needs_grad && !n.grad.empty()) n.backprop(*this, id);
        }
    }

    // Adds node gradients into leaf tensors that require grad. Tensors that
    // the loss never reached still get a (zero) grad buffer.
    void flush_leaf_grads() {
        for (Node& n : nodes_) {
            if (!n.is_leaf || !n.value.requires_grad()) continue;
            if (n.grad.empty()) {
                n.value.grad();  // populate with zeros
            } else {
                n.value.accumulate_grad(n.grad.data(), n.value.numel());
            }
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<Real> value;
        std::vector<Real> grad;  // lazily sized to numel
        std::function<void(Graph&, Id)> backprop;
        bool needs_grad = false;
        bool is_leaf = false;
    };

    Id check(Id id) const {
        if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) throw ContractError("graph: bad node id");
        return id;
    }

    static void require_2d(const Tensor<Real>& t, const char* what) {
        if (t.ndim() != 2) throw DimError(std::string(what) + ": expected 2-D, got " + shape_str(t.shape()));
    }

    bool wants(Id id) const { return nodes_[id].needs_grad; }

    Real* grad_buf(Id id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.value.numel()), Real(0));
        return n.grad.data();
    }

    template <class Fn>
    Id make_node(Tensor<Real> value, const std::vector<Id>& parents, Fn&& backprop) {
        Node node;
        node.value = std::move(value);
        for (Id p : parents) node.needs_grad = node.needs_grad || nodes_[p].needs_grad;
        if (node.needs_grad) node.backprop = std::forward<Fn>(backprop);
        nodes_.push_back(std::move(node));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id binary(Id a, Id b, bool is_mul, Real sign) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        const Tensor<Real>& vb = nodes_[check(b)].value;
        const Shape out_shape = broadcast_shape(va.shape(), vb.shape());
        Tensor<Real> out = Tensor<Real>::zeros(out_shape);
        const Real* pa = va.data();
        const Real* pb = vb.data();
        Real* po = out.data();
        if (va.shape() == vb.shape()) {  // common fast path
            if (is_mul) {
                kernels::mul(out.numel(), pa, pb, po);
            } else if (sign > 0) {
                kernels::add(out.numel(), pa, pb, po);
            } else {
                for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
            }
        } else if (detail::suffix_broadcast(va.shape(), vb.shape(), out_shape)) {
            const int64_t nb = vb.numel();
            if (is_mul) {
                for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i % nb];
            } else {
                for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + sign * pb[i % nb];
            }
        } else if (is_mul) {
            detail::broadcast_walk(va.shape(), vb.shape(), out_shape,
                                   [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] * pb[ib]; });
        } else {
            detail::broadcast_walk(va.shape(), vb.shape(), out_shape,
                                   [&](int64_t o, int64_t ia, int64_t ib) { po[o] = pa[ia] + sign * pb[ib]; });
        }
        const Shape sa = va.shape(), sb = vb.shape();
        return make_node(std::move(out), {a, b}, [a, b, is_mul, sign, sa, sb, out_shape](Graph& g, Id self) {
            const auto& gradv = g.nodes_[self].grad;
            const Real* grad = gradv.data();
            Real* da = g.wants(a) ? g.grad_buf(a) : nullptr;
            Real* db = g.wants(b) ? g.grad_buf(b) : nullptr;
            if (detail::suffix_broadcast(sa, sb, out_shape)) {
                const int64_t nb = shape_numel(sb);
                const int64_t total = static_cast<int64_t>(gradv.size());
                if (is_mul) {
                    const Real* pa2 = g.nodes_[a].value.data();
                    const Real* pb2 = g.nodes_[b].value.data();
                    for (int64_t i = 0; i < total; ++i) {
                        if (da) da[i] += grad[i] * pb2[i % nb];
                        if (db) db[i % nb] += grad[i] * pa2[i];
                    }
                } else {
                    for (int64_t i = 0; i < total; ++i) {
                        if (da) da[i] += grad[i];
                        if (db) db[i % nb] += sign * grad[i];
                    }
                }
                return;
            }
            if (is_mul) {
                const Real* pa2 = g.nodes_[a].value.data();
                const Real* pb2 = g.nodes_[b].value.data();
                detail::broadcast_walk(sa, sb, out_shape, [&](int64_t o, int64_t ia, int64_t ib) {
                    if (da) da[ia] += grad[o] * pb2[ib];
                    if (db) db[ib] += grad[o] * pa2[ia];
                });
            } else {
                detail::broadcast_walk(sa, sb, out_shape, [&](int64_t o, int64_t ia, int64_t ib) {
                    if (da) da[ia] += grad[o];
                    if (db) db[ib] += sign * grad[o];
                });
            }
        });
    }

    Id reduce(Id a, bool mean) {
        const Tensor<Real>& va = nodes_[check(a)].value;
        if (va.numel() == 0) throw DimError("reduce: empty input");
        Real acc = kernels::sum(va.numel(), va.data());
        const Real denom = mean ? Real(va.numel()) : Real(1);
        Tensor<Real> out = Tensor<Real>::scalar(acc / denom);
        const int64_t n = va.numel();
        return make_node(std::move(out), {a}, [a, n, denom](Graph& g, Id self) {
            if (!g.wants(a)) return;
            const Real gv = g.nodes_[self].grad[0] / denom;
            Real* da = g.grad_buf(a);
            for (int64_t i = 0; i < n; ++i) da[i] += gv;
        });
    }

    std::vector<Node> nodes_;
};

}  // namespace vtck
