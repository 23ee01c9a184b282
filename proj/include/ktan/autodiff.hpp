#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "ktan/kernels.hpp"
#include "ktan/tensor.hpp"

namespace ktan {

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Append-only reverse-mode tape. Nodes are recorded in execution order, so the
// node sequence is already a topological order and backward is a single
// reverse sweep. One tape per training step; leaves are the parameters.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int32_t self)>;

    Var leaf(Tensor<T> value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

    Var emit(Tensor<T> value, std::vector<Var> parents, BackwardFn back) {
        bool needs = false;
        for (Var p : parents) needs = needs || nodes_[static_cast<size_t>(p.id)].needs_grad;
        nodes_.push_back(Node{std::move(value), std::move(parents), needs ? std::move(back) : nullptr, needs});
        return Var{static_cast<int32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }
    size_t size() const { return nodes_.size(); }

    void backward(Var root) {
        const auto& rv = value(root);
        if (!rv.is_scalar())
            throw ShapeError("backward: root must be scalar, got " + shape_str(rv.shape()));
        grads_.assign(nodes_.size(), Tensor<T>{});
        grads_[static_cast<size_t>(root.id)] = Tensor<T>::scalar(T(1));
        for (int32_t i = root.id; i >= 0; --i) {
            Node& node = nodes_[static_cast<size_t>(i)];
            if (!node.needs_grad || !node.back) continue;
            if (grads_[static_cast<size_t>(i)].empty()) continue;  // not reachable from root
            node.back(*this, i);
        }
        ran_backward_ = true;
    }

    // Gradient of a node; zeros of the value's shape if untouched by backward.
    Tensor<T> grad(Var v) const {
        const auto& g = grads_[static_cast<size_t>(v.id)];
        if (g.empty()) return Tensor<T>(value(v).shape());
        return g;
    }

    bool has_grad(Var v) const {
        return ran_backward_ && !grads_[static_cast<size_t>(v.id)].empty();
    }

    // Accumulation buffer used by backward rules; allocated as zeros on demand.
    Tensor<T>& grad_buffer(int32_t id) {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty()) g = Tensor<T>(nodes_[static_cast<size_t>(id)].value.shape());
        return g;
    }

    const Tensor<T>& node_value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
    const std::vector<Var>& parents(int32_t id) const { return nodes_[static_cast<size_t>(id)].parents; }
    bool parent_needs_grad(int32_t id, size_t slot) const {
        return nodes_[static_cast<size_t>(parents(id)[slot].id)].needs_grad;
    }

private:
    struct Node {
        Tensor<T> value;
        std::vector<Var> parents;
        BackwardFn back;
        bool needs_grad;
    };
    std::vector<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    bool ran_backward_ = false;
};

namespace ops {

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& delta) {
    for (int64_t i = 0; i < into.numel(); ++i) into[i] += delta[i];
}

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var filters, Var bias, const ConvGeometry& geom) {
    Tensor<T> out = kernels::conv2d_forward(tape.value(input), tape.value(filters), tape.value(bias), geom);
    return tape.emit(std::move(out), {input, filters, bias}, [geom](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const auto& par = t.parents(self);
        const Tensor<T>& in = t.node_value(par[0].id);
        const Tensor<T>& flt = t.node_value(par[1].id);
        if (t.parent_needs_grad(self, 0))
            accumulate(t.grad_buffer(par[0].id), kernels::conv2d_backward_input(dout, flt, geom, in.shape()));
        if (t.parent_needs_grad(self, 1))
            accumulate(t.grad_buffer(par[1].id), kernels::conv2d_backward_filter(dout, in, geom));
        if (t.parent_needs_grad(self, 2))
            accumulate(t.grad_buffer(par[2].id), kernels::conv2d_backward_bias(dout));
    });
}

template <typename T>
Var dense(Tape<T>& tape, Var input, Var weights, Var bias) {
    Tensor<T> out = kernels::dense_forward(tape.value(input), tape.value(weights), tape.value(bias));
    return tape.emit(std::move(out), {input, weights, bias}, [](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const auto& par = t.parents(self);
        if (t.parent_needs_grad(self, 0))
            accumulate(t.grad_buffer(par[0].id), kernels::dense_backward_input(dout, t.node_value(par[1].id)));
        if (t.parent_needs_grad(self, 1))
            accumulate(t.grad_buffer(par[1].id), kernels::dense_backward_weight(dout, t.node_value(par[0].id)));
        if (t.parent_needs_grad(self, 2))
            accumulate(t.grad_buffer(par[2].id), kernels::dense_backward_bias(dout));
    });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
    return tape.emit(kernels::relu_forward(tape.value(input)), {input}, [](Tape<T>& t, int32_t self) {
        const auto& par = t.parents(self);
        accumulate(t.grad_buffer(par[0].id),
                   kernels::relu_backward(t.grad_buffer(self), t.node_value(par[0].id)));
    });
}

template <typename T>
Var max_pool2d(Tape<T>& tape, Var input, const PoolGeometry& pg) {
    auto [out, argmax] = kernels::maxpool_forward(tape.value(input), pg);
    return tape.emit(std::move(out), {input},
                     [argmax = std::move(argmax)](Tape<T>& t, int32_t self) {
                         const auto& par = t.parents(self);
                         accumulate(t.grad_buffer(par[0].id),
                                    kernels::maxpool_backward(t.grad_buffer(self), argmax,
                                                              t.node_value(par[0].id).shape()));
                     });
}

// Reshape to [N, rest]; gradient reshapes back.
template <typename T>
Var flatten(Tape<T>& tape, Var input) {
    const Tensor<T>& v = tape.value(input);
    if (v.rank() < 2) throw ShapeError("flatten: rank must be >= 2, got " + shape_str(v.shape()));
    Shape out_shape{v.extent(0), v.numel() / v.extent(0)};
    return tape.emit(v.reshaped(out_shape), {input}, [](Tape<T>& t, int32_t self) {
        const auto& par = t.parents(self);
        accumulate(t.grad_buffer(par[0].id),
                   t.grad_buffer(self).reshaped(t.node_value(par[0].id).shape()));
    });
}

template <typename T>
Var softmax(Tape<T>& tape, Var input) {
    return tape.emit(kernels::softmax_forward(tape.value(input)), {input}, [](Tape<T>& t, int32_t self) {
        const auto& par = t.parents(self);
        accumulate(t.grad_buffer(par[0].id),
                   kernels::softmax_backward(t.grad_buffer(self), t.node_value(self)));
    });
}

template <typename T>
Var log_softmax(Tape<T>& tape, Var input) {
    return tape.emit(kernels::log_softmax_forward(tape.value(input)), {input}, [](Tape<T>& t, int32_t self) {
        const auto& par = t.parents(self);
        accumulate(t.grad_buffer(par[0].id),
                   kernels::log_softmax_backward(t.grad_buffer(self), t.node_value(self)));
    });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
    return tape.emit(kernels::sigmoid_forward(tape.value(input)), {input}, [](Tape<T>& t, int32_t self) {
        const auto& par = t.parents(self);
        accumulate(t.grad_buffer(par[0].id),
                   kernels::sigmoid_backward(t.grad_buffer(self), t.node_value(self)));
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>&va = tape.value(a), &vb = tape.value(b);
    check_same_shape(va, vb, "add");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    return tape.emit(std::move(out), {a, b}, [](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const auto& par = t.parents(self);
        if (t.parent_needs_grad(self, 0)) accumulate(t.grad_buffer(par[0].id), dout);
        if (t.parent_needs_grad(self, 1)) accumulate(t.grad_buffer(par[1].id), dout);
    });
}

template <typename T>
Var sub(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>&va = tape.value(a), &vb = tape.value(b);
    check_same_shape(va, vb, "sub");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] - vb[i];
    return tape.emit(std::move(out), {a, b}, [](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const auto& par = t.parents(self);
        if (t.parent_needs_grad(self, 0)) accumulate(t.grad_buffer(par[0].id), dout);
        if (t.parent_needs_grad(self, 1)) {
            Tensor<T>& g = t.grad_buffer(par[1].id);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= dout[i];
        }
    });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>&va = tape.value(a), &vb = tape.value(b);
    check_same_shape(va, vb, "mul");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    return tape.emit(std::move(out), {a, b}, [](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const auto& par = t.parents(self);
        const Tensor<T>&va = t.node_value(par[0].id), &vb = t.node_value(par[1].id);
        if (t.parent_needs_grad(self, 0)) {
            Tensor<T>& g = t.grad_buffer(par[0].id);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += dout[i] * vb[i];
        }
        if (t.parent_needs_grad(self, 1)) {
            Tensor<T>& g = t.grad_buffer(par[1].id);
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += dout[i] * va[i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T c) {
    const Tensor<T>& va = tape.value(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * c;
    return tape.emit(std::move(out), {a}, [c](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        Tensor<T>& g = t.grad_buffer(t.parents(self)[0].id);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += dout[i] * c;
    });
}

template <typename T>
Var log(Tape<T>& tape, Var a) {
    const Tensor<T>& va = tape.value(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(va[i]);
    return tape.emit(std::move(out), {a}, [](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const Tensor<T>& va = t.node_value(t.parents(self)[0].id);
        Tensor<T>& g = t.grad_buffer(t.parents(self)[0].id);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += dout[i] / va[i];
    });
}

// Pass-through gradient inside [lo, hi], zero outside.
template <typename T>
Var clamp(Tape<T>& tape, Var a, T lo, T hi) {
    const Tensor<T>& va = tape.value(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, va[i]));
    return tape.emit(std::move(out), {a}, [lo, hi](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        const Tensor<T>& va = t.node_value(t.parents(self)[0].id);
        Tensor<T>& g = t.grad_buffer(t.parents(self)[0].id);
        for (int64_t i = 0; i < g.numel(); ++i)
            if (va[i] >= lo && va[i] <= hi) g[i] += dout[i];
    });
}

template <typename T>
Var sum_all(Tape<T>& tape, Var a) {
    const Tensor<T>& va = tape.value(a);
    T acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
    return tape.emit(Tensor<T>::scalar(acc), {a}, [](Tape<T>& t, int32_t self) {
        const T d = t.grad_buffer(self)[0];
        Tensor<T>& g = t.grad_buffer(t.parents(self)[0].id);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += d;
    });
}

template <typename T>
Var mean_all(Tape<T>& tape, Var a) {
    const Tensor<T>& va = tape.value(a);
    T acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
    const T inv = T(1) / static_cast<T>(va.numel());
    return tape.emit(Tensor<T>::scalar(acc * inv), {a}, [inv](Tape<T>& t, int32_t self) {
        const T d = t.grad_buffer(self)[0] * inv;
        Tensor<T>& g = t.grad_buffer(t.parents(self)[0].id);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += d;
    });
}

// out[n] = a[n, idx[n]] for a [N,K] input; backward scatters per row.
template <typename T>
Var pick(Tape<T>& tape, Var a, std::vector<int64_t> idx) {
    const Tensor<T>& va = tape.value(a);
    if (va.rank() != 2) throw ShapeError("pick: input must be [N,K]");
    const int64_t N = va.extent(0), K = va.extent(1);
    if (static_cast<int64_t>(idx.size()) != N)
        throw ShapeError("pick: index count " + std::to_string(idx.size()) + " != rows " + std::to_string(N));
    Tensor<T> out({N});
    for (int64_t n = 0; n < N; ++n) {
        if (idx[static_cast<size_t>(n)] < 0 || idx[static_cast<size_t>(n)] >= K)
            throw ShapeError("pick: index " + std::to_string(idx[static_cast<size_t>(n)]) +
                             " out of range [0," + std::to_string(K) + ")");
        out[n] = va[n * K + idx[static_cast<size_t>(n)]];
    }
    return tape.emit(std::move(out), {a}, [idx = std::move(idx), K](Tape<T>& t, int32_t self) {
        const Tensor<T>& dout = t.grad_buffer(self);
        Tensor<T>& g = t.grad_buffer(t.parents(self)[0].id);
        for (int64_t n = 0; n < dout.numel(); ++n) g[n * K + idx[static_cast<size_t>(n)]] += dout[n];
    });
}

// Value copy with the graph cut; gradients never flow past a detach.
template <typename T>
Var detach(Tape<T>& tape, Var a) {
    return tape.constant(tape.value(a));
}

}  // namespace ops

// Root-driven gradient map helper: runs backward and hands out leaf grads.
template <typename T>
Tensor<T> leaf_gradient(Tape<T>& tape, Var root, Var leaf) {
    tape.backward(root);
    return tape.grad(leaf);
}

}  // namespace ktan
