#pragma once

#include <functional>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "d3sr/tensor.hpp"

namespace d3sr {

// Loss graphs allocate and free tens of MB per step; with default glibc
// tuning every teardown trims the heap back to the OS and the next graph
// pays the page faults again. Keeping freed pages in-process removes that
// cost while bounding memory by the peak graph size.
inline void tune_allocator_once() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
        return true;
    }();
    (void)done;
#endif
}

// Handle into a Graph. Plain index; validity is the owner's concern.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Dynamic reverse-mode tape. One graph is built per loss evaluation; leaves
// are parameters or constants, interior nodes record a backward closure.
// Gradients are only propagated into subtrees that contain a requires_grad
// leaf, so frozen networks cost a forward pass and nothing else.
template <typename T>
class Graph {
public:
    Graph() { tune_allocator_once(); }

    Var leaf(Tensor<T> value, bool requires_grad = false) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    Var make(Tensor<T> value, std::vector<int> parents,
             std::function<void(Graph&, int)> backward_fn) {
        Node n;
        n.value = std::move(value);
        for (int p : parents)
            if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
        if (n.needs_grad) {
            n.parents = std::move(parents);
            n.backward_fn = std::move(backward_fn);
        }
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    Tensor<T>& mutable_val(Var v) { return nodes_[static_cast<size_t>(v.id)].value; }

    bool needs_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }

    // Gradient of the last backward() w.r.t. v; zeros if v never received one.
    Tensor<T> grad_of(Var v) const {
        const Node& n = nodes_[static_cast<size_t>(v.id)];
        if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    bool has_grad(Var v) const { return !nodes_[static_cast<size_t>(v.id)].grad.empty(); }

    // Lazily allocated gradient accumulator for a node.
    Tensor<T>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
        return n.grad;
    }

    void backward(Var loss) {
        const Node& ln = nodes_[static_cast<size_t>(loss.id)];
        if (ln.value.numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(ln.value.shape));
        grad_buf(loss.id).data[0] = T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.backward_fn || n.grad.empty()) continue;
            n.backward_fn(*this, id);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // empty until touched
        std::vector<int> parents;
        std::function<void(Graph&, int)> backward_fn;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
    require_same_shape(g.val(a), g.val(b), "add");
    Tensor<T> out = g.val(a);
    const auto& bv = g.val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return g.make(std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        for (Var p : {a, b}) {
            if (!gr.needs_grad(p)) continue;
            auto& gp = gr.grad_buf(p.id);
            for (int64_t i = 0; i < go.numel(); ++i) gp[i] += go[i];
        }
    });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
    require_same_shape(g.val(a), g.val(b), "sub");
    Tensor<T> out = g.val(a);
    const auto& bv = g.val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return g.make(std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        if (gr.needs_grad(a)) {
            auto& ga = gr.grad_buf(a.id);
            for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        }
        if (gr.needs_grad(b)) {
            auto& gb = gr.grad_buf(b.id);
            for (int64_t i = 0; i < go.numel(); ++i) gb[i] -= go[i];
        }
    });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
    require_same_shape(g.val(a), g.val(b), "mul");
    Tensor<T> out = g.val(a);
    const auto& bv = g.val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return g.make(std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& av = gr.val(a);
        const auto& bv2 = gr.val(b);
        if (gr.needs_grad(a)) {
            auto& ga = gr.grad_buf(a.id);
            for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * bv2[i];
        }
        if (gr.needs_grad(b)) {
            auto& gb = gr.grad_buf(b.id);
            for (int64_t i = 0; i < go.numel(); ++i) gb[i] += go[i] * av[i];
        }
    });
}

template <typename T>
Var div(Graph<T>& g, Var a, Var b) {
    require_same_shape(g.val(a), g.val(b), "div");
    Tensor<T> out = g.val(a);
    const auto& bv = g.val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
    return g.make(std::move(out), {a.id, b.id}, [a, b](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& av = gr.val(a);
        const auto& bv2 = gr.val(b);
        if (gr.needs_grad(a)) {
            auto& ga = gr.grad_buf(a.id);
            for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / bv2[i];
        }
        if (gr.needs_grad(b)) {
            auto& gb = gr.grad_buf(b.id);
            for (int64_t i = 0; i < go.numel(); ++i)
                gb[i] -= go[i] * av[i] / (bv2[i] * bv2[i]);
        }
    });
}

template <typename T>
Var scale(Graph<T>& g, Var a, double s) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = static_cast<T>(v * s);
    return g.make(std::move(out), {a.id}, [a, s](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += static_cast<T>(go[i] * s);
    });
}

template <typename T>
Var add_scalar(Graph<T>& g, Var a, double s) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = static_cast<T>(v + s);
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
}

template <typename T>
Var neg(Graph<T>& g, Var a) {
    return scale(g, a, -1.0);
}

template <typename T>
Var sigmoid(Graph<T>& g, Var a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& yv = gr.val(Var{self});
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * yv[i] * (T(1) - yv[i]);
    });
}

template <typename T>
Var silu(Graph<T>& g, Var a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = v / (T(1) + std::exp(-v));
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& xv = gr.val(a);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) {
            const T x = xv[i];
            const T s = T(1) / (T(1) + std::exp(-x));
            ga[i] += go[i] * s * (T(1) + x * (T(1) - s));
        }
    });
}

template <typename T>
Var relu(Graph<T>& g, Var a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& xv = gr.val(a);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i)
            if (xv[i] > T(0)) ga[i] += go[i];
    });
}

template <typename T>
Var log_op(Graph<T>& g, Var a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = static_cast<T>(std::log(static_cast<double>(v)));
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& xv = gr.val(a);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / xv[i];
    });
}

// sqrt with a zero subgradient at (numerically) zero inputs, so edge
// magnitudes of flat regions stay exact in the forward pass without producing
// infinities in the backward pass.
template <typename T>
Var sqrt_guarded(Graph<T>& g, Var a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = static_cast<T>(std::sqrt(std::max(0.0, static_cast<double>(v))));
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& yv = gr.val(Var{self});
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) {
            const double y = static_cast<double>(yv[i]);
            if (y > 1e-20) ga[i] += static_cast<T>(static_cast<double>(go[i]) / (2.0 * y));
        }
    });
}

template <typename T>
Var clamp(Graph<T>& g, Var a, double lo, double hi) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data)
        v = static_cast<T>(std::min(hi, std::max(lo, static_cast<double>(v))));
    return g.make(std::move(out), {a.id}, [a, lo, hi](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& xv = gr.val(a);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) {
            const double x = static_cast<double>(xv[i]);
            if (x > lo && x < hi) ga[i] += go[i];
        }
    });
}

template <typename T>
Var mean_all(Graph<T>& g, Var a) {
    const auto& av = g.val(a);
    double acc = 0.0;
    for (const T& v : av.data) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(av.numel())));
    const double inv_n = 1.0 / static_cast<double>(av.numel());
    return g.make(std::move(out), {a.id}, [a, inv_n](Graph<T>& gr, int self) {
        const T go = gr.grad_buf(self)[0];
        auto& ga = gr.grad_buf(a.id);
        const T c = static_cast<T>(static_cast<double>(go) * inv_n);
        for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += c;
    });
}

// (N,C,H,W) -> (N,C): mean over the spatial dims.
template <typename T>
Var mean_hw(Graph<T>& g, Var a) {
    const auto& av = g.val(a);
    if (av.rank() != 4) throw std::invalid_argument("mean_hw: expects rank-4 input");
    const int N = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
    const int64_t hw = static_cast<int64_t>(H) * W;
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = av.ptr() + (static_cast<int64_t>(n) * C + c) * hw;
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
            out[static_cast<int64_t>(n) * C + c] = static_cast<T>(acc / static_cast<double>(hw));
        }
    return g.make(std::move(out), {a.id}, [a, N, C, hw](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& ga = gr.grad_buf(a.id);
        const double inv = 1.0 / static_cast<double>(hw);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T gc = static_cast<T>(
                    static_cast<double>(go[static_cast<int64_t>(n) * C + c]) * inv);
                T* p = ga.ptr() + (static_cast<int64_t>(n) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) p[i] += gc;
            }
    });
}

// (N,C) -> (N): mean over columns.
template <typename T>
Var mean_cols(Graph<T>& g, Var a) {
    const auto& av = g.val(a);
    if (av.rank() != 2) throw std::invalid_argument("mean_cols: expects rank-2 input");
    const int N = av.dim(0), C = av.dim(1);
    Tensor<T> out({N});
    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c) acc += static_cast<double>(av[static_cast<int64_t>(n) * C + c]);
        out[n] = static_cast<T>(acc / C);
    }
    return g.make(std::move(out), {a.id}, [a, N, C](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& ga = gr.grad_buf(a.id);
        for (int n = 0; n < N; ++n) {
            const T gc = static_cast<T>(static_cast<double>(go[n]) / C);
            for (int c = 0; c < C; ++c) ga[static_cast<int64_t>(n) * C + c] += gc;
        }
    });
}

template <typename T>
Var reshape(Graph<T>& g, Var a, std::vector<int> new_shape) {
    const auto& av = g.val(a);
    if (numel_of(new_shape) != av.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out = av;
    out.shape = std::move(new_shape);
    return g.make(std::move(out), {a.id}, [a](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        auto& ga = gr.grad_buf(a.id);
        for (int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
    });
}

// Mean squared error between two same-shaped tensors, as a scalar node.
template <typename T>
Var mse(Graph<T>& g, Var a, Var b) {
    Var d = sub(g, a, b);
    return mean_all(g, mul(g, d, d));
}

}  // namespace d3sr
