// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation. Every backward rule is emitted as
// new tape nodes built from the same primitive set, so a recorded gradient is
// itself differentiable (reverse over reverse). Graph lifetime is explicit:
// scopes truncate the tape and the live/peak counters make memory behavior a
// testable quantity instead of a profiler observation.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tesla/common.hpp"
#include "tesla/tensor.hpp"

namespace tesla {

enum class OpKind : std::uint8_t {
    leaf,
    add, sub, mul, div, neg, scale, add_scalar,
    exp, log, sqrt, relu, positive_mask,
    matmul, transpose2d,
    conv2d, conv2d_dinput, conv2d_dweight,
    avgpool2x2, unpool2x2, reshape,
    sum_all, bcast_scalar,
    sum_cols, repeat_cols, sum_rows, repeat_rows,
    sum_hw, bcast_hw, sum_nhw, bcast_chan,
    sum_chw, bcast_image, sum_chan_pix, bcast_chan_pix,
    rowmax, dot, smul,
    gather_rows, scatter_add_rows, slice_flat, scatter_flat,
    flip_h, translate, mul_mask,
};

inline const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::leaf: return "leaf";
        case OpKind::add: return "add";
        case OpKind::sub: return "sub";
        case OpKind::mul: return "mul";
        case OpKind::div: return "div";
        case OpKind::neg: return "neg";
        case OpKind::scale: return "scale";
        case OpKind::add_scalar: return "add_scalar";
        case OpKind::exp: return "exp";
        case OpKind::log: return "log";
        case OpKind::sqrt: return "sqrt";
        case OpKind::relu: return "relu";
        case OpKind::positive_mask: return "positive_mask";
        case OpKind::matmul: return "matmul";
        case OpKind::transpose2d: return "transpose2d";
        case OpKind::conv2d: return "conv2d";
        case OpKind::conv2d_dinput: return "conv2d_dinput";
        case OpKind::conv2d_dweight: return "conv2d_dweight";
        case OpKind::avgpool2x2: return "avgpool2x2";
        case OpKind::unpool2x2: return "unpool2x2";
        case OpKind::reshape: return "reshape";
        case OpKind::sum_all: return "sum_all";
        case OpKind::bcast_scalar: return "bcast_scalar";
        case OpKind::sum_cols: return "sum_cols";
        case OpKind::repeat_cols: return "repeat_cols";
        case OpKind::sum_rows: return "sum_rows";
        case OpKind::repeat_rows: return "repeat_rows";
        case OpKind::sum_hw: return "sum_hw";
        case OpKind::bcast_hw: return "bcast_hw";
        case OpKind::sum_nhw: return "sum_nhw";
        case OpKind::bcast_chan: return "bcast_chan";
        case OpKind::sum_chw: return "sum_chw";
        case OpKind::bcast_image: return "bcast_image";
        case OpKind::sum_chan_pix: return "sum_chan_pix";
        case OpKind::bcast_chan_pix: return "bcast_chan_pix";
        case OpKind::rowmax: return "rowmax";
        case OpKind::dot: return "dot";
        case OpKind::smul: return "smul";
        case OpKind::gather_rows: return "gather_rows";
        case OpKind::scatter_add_rows: return "scatter_add_rows";
        case OpKind::slice_flat: return "slice_flat";
        case OpKind::scatter_flat: return "scatter_flat";
        case OpKind::flip_h: return "flip_h";
        case OpKind::translate: return "translate";
        case OpKind::mul_mask: return "mul_mask";
    }
    return "?";
}

template <class Real>
class Tape;

template <class Real>
struct Var {
    Tape<Real>* tape = nullptr;
    std::int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const TensorT<Real>& value() const;
    const Shape& shape() const { return value().shape(); }
};

template <class Real>
class Tape {
public:
    enum class Mode { plain, grad_graph };

    struct ScopeToken {
        std::size_t node_count = 0;
        bool open = false;
    };

    explicit Tape(Mode mode = Mode::plain, bool strict = true) : mode_(mode), strict_(strict) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Mode mode() const { return mode_; }
    void set_mode(Mode m) { mode_ = m; }

    std::size_t live_nodes() const { return nodes_.size(); }
    std::size_t live_bytes() const { return live_bytes_; }
    std::size_t peak_nodes() const { return peak_nodes_; }
    std::size_t peak_bytes() const { return peak_bytes_; }
    void reset_peaks() {
        peak_nodes_ = nodes_.size();
        peak_bytes_ = live_bytes_;
    }

    const TensorT<Real>& value(std::int32_t id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
            throw ScopeError("node " + std::to_string(id) + " is not live on this tape");
        return nodes_[static_cast<std::size_t>(id)].value;
    }

    // Read-only node walk, for instrumentation and diagnostics.
    std::size_t node_count() const { return nodes_.size(); }
    OpKind node_kind(std::size_t i) const { return nodes_.at(i).kind; }
    std::int32_t node_input(std::size_t i, int slot) const { return nodes_.at(i).in[static_cast<std::size_t>(slot)]; }

    // ----------------------------- scopes -----------------------------

    ScopeToken open_scope() { return ScopeToken{nodes_.size(), true}; }

    void release_scope(ScopeToken& tok) {
        if (!tok.open) throw ScopeError("scope released twice");
        if (tok.node_count > nodes_.size())
            throw ScopeError("unbalanced scope release (inner scope outlived outer)");
        while (nodes_.size() > tok.node_count) {
            live_bytes_ -= node_bytes(nodes_.back());
            nodes_.pop_back();
        }
        tok.open = false;
    }

    // ----------------------------- recording -----------------------------

    Var<Real> leaf(TensorT<Real> v) {
        Node n;
        n.kind = OpKind::leaf;
        n.value = std::move(v);
        return push(std::move(n));
    }

    Var<Real> add(Var<Real> a, Var<Real> b) { return binop(OpKind::add, a, b, kernels::add(val(a), val(b))); }
    Var<Real> sub(Var<Real> a, Var<Real> b) { return binop(OpKind::sub, a, b, kernels::sub(val(a), val(b))); }
    Var<Real> mul(Var<Real> a, Var<Real> b) { return binop(OpKind::mul, a, b, kernels::mul(val(a), val(b))); }
    Var<Real> div(Var<Real> a, Var<Real> b) { return binop(OpKind::div, a, b, kernels::div(val(a), val(b))); }
    Var<Real> neg(Var<Real> a) { return unop(OpKind::neg, a, kernels::neg(val(a))); }

    Var<Real> scale(Var<Real> a, double c) {
        Node n = unnode(OpKind::scale, a, kernels::scale(val(a), c));
        n.c = c;
        return push(std::move(n));
    }
    Var<Real> add_scalar(Var<Real> a, double c) {
        Node n = unnode(OpKind::add_scalar, a, kernels::add_scalar(val(a), c));
        n.c = c;
        return push(std::move(n));
    }

    Var<Real> exp(Var<Real> a) { return unop(OpKind::exp, a, kernels::exp(val(a))); }
    Var<Real> log(Var<Real> a) { return unop(OpKind::log, a, kernels::log(val(a))); }
    Var<Real> sqrt(Var<Real> a) { return unop(OpKind::sqrt, a, kernels::sqrt(val(a))); }
    Var<Real> relu(Var<Real> a) { return unop(OpKind::relu, a, kernels::relu(val(a))); }
    Var<Real> positive_mask(Var<Real> a) { return unop(OpKind::positive_mask, a, kernels::positive_mask(val(a))); }

    Var<Real> matmul(Var<Real> a, Var<Real> b) { return binop(OpKind::matmul, a, b, kernels::matmul(val(a), val(b))); }
    Var<Real> transpose2d(Var<Real> a) { return unop(OpKind::transpose2d, a, kernels::transpose2d(val(a))); }

    Var<Real> conv2d(Var<Real> x, Var<Real> w) { return binop(OpKind::conv2d, x, w, kernels::conv2d(val(x), val(w))); }
    Var<Real> conv2d_dinput(Var<Real> g, Var<Real> w) {
        return binop(OpKind::conv2d_dinput, g, w, kernels::conv2d_dinput(val(g), val(w)));
    }
    Var<Real> conv2d_dweight(Var<Real> x, Var<Real> g, std::size_t k) {
        Node n = binnode(OpKind::conv2d_dweight, x, g, kernels::conv2d_dweight(val(x), val(g), k));
        n.p[0] = static_cast<std::int64_t>(k);
        return push(std::move(n));
    }

    Var<Real> avgpool2x2(Var<Real> a) { return unop(OpKind::avgpool2x2, a, kernels::avgpool2x2(val(a))); }
    Var<Real> unpool2x2(Var<Real> a) { return unop(OpKind::unpool2x2, a, kernels::unpool2x2(val(a))); }

    Var<Real> reshape(Var<Real> a, Shape s) { return unop(OpKind::reshape, a, kernels::reshape(val(a), std::move(s))); }

    Var<Real> sum_all(Var<Real> a) { return unop(OpKind::sum_all, a, kernels::sum_all(val(a))); }
    Var<Real> bcast_scalar(Var<Real> s, const Shape& shape) {
        return unop(OpKind::bcast_scalar, s, kernels::bcast_scalar(val(s), shape));
    }

    Var<Real> sum_cols(Var<Real> a) { return unop(OpKind::sum_cols, a, kernels::sum_cols(val(a))); }
    Var<Real> repeat_cols(Var<Real> a, std::size_t cols) {
        return unop(OpKind::repeat_cols, a, kernels::repeat_cols(val(a), cols));
    }
    Var<Real> sum_rows(Var<Real> a) { return unop(OpKind::sum_rows, a, kernels::sum_rows(val(a))); }
    Var<Real> repeat_rows(Var<Real> a, std::size_t rows) {
        return unop(OpKind::repeat_rows, a, kernels::repeat_rows(val(a), rows));
    }

    Var<Real> sum_hw(Var<Real> a) { return unop(OpKind::sum_hw, a, kernels::sum_hw(val(a))); }
    Var<Real> bcast_hw(Var<Real> a, std::size_t H, std::size_t W) {
        return unop(OpKind::bcast_hw, a, kernels::bcast_hw(val(a), H, W));
    }
    Var<Real> sum_nhw(Var<Real> a) { return unop(OpKind::sum_nhw, a, kernels::sum_nhw(val(a))); }
    Var<Real> bcast_chan(Var<Real> a, std::size_t N, std::size_t H, std::size_t W) {
        return unop(OpKind::bcast_chan, a, kernels::bcast_chan(val(a), N, H, W));
    }
    Var<Real> sum_chw(Var<Real> a) { return unop(OpKind::sum_chw, a, kernels::sum_chw(val(a))); }
    Var<Real> bcast_image(Var<Real> a, std::size_t C, std::size_t H, std::size_t W) {
        return unop(OpKind::bcast_image, a, kernels::bcast_image(val(a), C, H, W));
    }
    Var<Real> sum_chan_pix(Var<Real> a) { return unop(OpKind::sum_chan_pix, a, kernels::sum_chan_pix(val(a))); }
    Var<Real> bcast_chan_pix(Var<Real> a, std::size_t C) {
        return unop(OpKind::bcast_chan_pix, a, kernels::bcast_chan_pix(val(a), C));
    }

    Var<Real> rowmax(Var<Real> a) { return unop(OpKind::rowmax, a, kernels::rowmax(val(a))); }

    Var<Real> dot(Var<Real> a, Var<Real> b) { return binop(OpKind::dot, a, b, kernels::dot(val(a), val(b))); }
    Var<Real> smul(Var<Real> s, Var<Real> t) { return binop(OpKind::smul, s, t, kernels::smul(val(s), val(t))); }

    Var<Real> gather_rows(Var<Real> x, std::vector<std::uint32_t> idx) {
        Node n = unnode(OpKind::gather_rows, x, kernels::gather_rows(val(x), idx));
        n.idx = std::move(idx);
        return push(std::move(n));
    }
    Var<Real> scatter_add_rows(Var<Real> g, std::vector<std::uint32_t> idx, std::size_t rows) {
        Node n = unnode(OpKind::scatter_add_rows, g, kernels::scatter_add_rows(val(g), idx, rows));
        n.idx = std::move(idx);
        n.p[0] = static_cast<std::int64_t>(rows);
        return push(std::move(n));
    }

    Var<Real> slice_flat(Var<Real> x, std::size_t off, std::size_t len) {
        Node n = unnode(OpKind::slice_flat, x, kernels::slice_flat(val(x), off, len));
        n.p[0] = static_cast<std::int64_t>(off);
        n.p[1] = static_cast<std::int64_t>(len);
        return push(std::move(n));
    }
    Var<Real> scatter_flat(Var<Real> g, std::size_t off, std::size_t total) {
        Node n = unnode(OpKind::scatter_flat, g, kernels::scatter_flat(val(g), off, total));
        n.p[0] = static_cast<std::int64_t>(off);
        n.p[1] = static_cast<std::int64_t>(total);
        return push(std::move(n));
    }

    Var<Real> flip_h(Var<Real> x, bool apply) {
        Node n = unnode(OpKind::flip_h, x, kernels::flip_h(val(x), apply));
        n.p[0] = apply ? 1 : 0;
        return push(std::move(n));
    }
    Var<Real> translate(Var<Real> x, std::ptrdiff_t dy, std::ptrdiff_t dx) {
        Node n = unnode(OpKind::translate, x, kernels::translate(val(x), dy, dx));
        n.p[0] = static_cast<std::int64_t>(dy);
        n.p[1] = static_cast<std::int64_t>(dx);
        return push(std::move(n));
    }
    Var<Real> mul_mask(Var<Real> x, TensorT<Real> mask) {
        Node n = unnode(OpKind::mul_mask, x, kernels::mul_mask(val(x), mask));
        n.aux = std::move(mask);
        return push(std::move(n));
    }

    // ----------------------------- differentiation -----------------------------

    // Gradients of a scalar loss w.r.t. the given variables. The temporary
    // nodes built for the backward pass are released before returning.
    std::vector<TensorT<Real>> backward(Var<Real> loss, const std::vector<Var<Real>>& wrt) {
        ScopeToken tok = open_scope();
        std::vector<std::int32_t> cots = build_vjps(loss, wrt);
        std::vector<TensorT<Real>> out;
        out.reserve(wrt.size());
        for (std::size_t i = 0; i < wrt.size(); ++i) {
            if (cots[i] >= 0)
                out.push_back(value(cots[i]));
            else
                out.push_back(TensorT<Real>::zeros(value(wrt[i].id).shape()));
        }
        release_scope(tok);
        return out;
    }

    // Gradients as live, differentiable variables (reverse over reverse).
    std::vector<Var<Real>> gradient_as_graph(Var<Real> loss, const std::vector<Var<Real>>& wrt) {
        if (mode_ != Mode::grad_graph)
            throw ScopeError("gradient_as_graph requires grad_graph mode");
        std::vector<std::int32_t> cots = build_vjps(loss, wrt);
        std::vector<Var<Real>> out;
        out.reserve(wrt.size());
        for (std::size_t i = 0; i < wrt.size(); ++i) {
            if (cots[i] >= 0)
                out.push_back(Var<Real>{this, cots[i]});
            else
                out.push_back(leaf(TensorT<Real>::zeros(value(wrt[i].id).shape())));
        }
        return out;
    }

private:
    struct Node {
        OpKind kind = OpKind::leaf;
        std::array<std::int32_t, 2> in{-1, -1};
        TensorT<Real> value;
        double c = 0.0;
        std::array<std::int64_t, 3> p{0, 0, 0};
        std::vector<std::uint32_t> idx;
        TensorT<Real> aux;
    };

    static std::size_t node_bytes(const Node& n) { return n.value.bytes() + n.aux.bytes(); }

    const TensorT<Real>& val(Var<Real> v) {
        if (v.tape != this) throw ScopeError("variable belongs to a different tape");
        return value(v.id);
    }

    Var<Real> push(Node n) {
        if (strict_ && n.kind != OpKind::leaf) {
            if (!all_finite(n.value)) throw NumericFault(op_name(n.kind));
        }
        live_bytes_ += node_bytes(n);
        nodes_.push_back(std::move(n));
        peak_nodes_ = std::max(peak_nodes_, nodes_.size());
        peak_bytes_ = std::max(peak_bytes_, live_bytes_);
        return Var<Real>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
    }

    Node unnode(OpKind k, Var<Real> a, TensorT<Real> out) {
        val(a);  // validates
        Node n;
        n.kind = k;
        n.in[0] = a.id;
        n.value = std::move(out);
        return n;
    }
    Node binnode(OpKind k, Var<Real> a, Var<Real> b, TensorT<Real> out) {
        val(a);
        val(b);
        Node n;
        n.kind = k;
        n.in[0] = a.id;
        n.in[1] = b.id;
        n.value = std::move(out);
        return n;
    }
    Var<Real> unop(OpKind k, Var<Real> a, TensorT<Real> out) { return push(unnode(k, a, std::move(out))); }
    Var<Real> binop(OpKind k, Var<Real> a, Var<Real> b, TensorT<Real> out) {
        return push(binnode(k, a, b, std::move(out)));
    }

    // Reverse accumulation. Emits the backward pass as new nodes; returns the
    // node id of the accumulated cotangent per wrt entry (-1: no path).
    std::vector<std::int32_t> build_vjps(Var<Real> loss, const std::vector<Var<Real>>& wrt) {
        if (loss.tape != this) throw ScopeError("loss belongs to a different tape");
        if (value(loss.id).numel() != 1)
            throw ShapeError("backward: loss is not scalar, shape " + shape_str(value(loss.id).shape()));
        for (const auto& w : wrt) {
            if (w.tape != this) throw ScopeError("wrt variable belongs to a different tape");
            value(w.id);  // validates liveness
        }

        const std::size_t limit = static_cast<std::size_t>(loss.id) + 1;

        // needed[i]: node i lies on a path from some wrt var toward the loss
        std::vector<std::uint8_t> needed(limit, 0);
        for (const auto& w : wrt)
            if (static_cast<std::size_t>(w.id) < limit) needed[static_cast<std::size_t>(w.id)] = 1;
        for (std::size_t i = 0; i < limit; ++i) {
            if (needed[i]) continue;
            const Node& n = nodes_[i];
            if ((n.in[0] >= 0 && needed[static_cast<std::size_t>(n.in[0])]) ||
                (n.in[1] >= 0 && needed[static_cast<std::size_t>(n.in[1])]))
                needed[i] = 1;
        }

        std::vector<std::int32_t> cot(limit, -1);
        cot[static_cast<std::size_t>(loss.id)] = leaf(TensorT<Real>::full(value(loss.id).shape(), Real(1))).id;

        for (std::int32_t id = loss.id; id >= 0; --id) {
            const std::int32_t gid = cot[static_cast<std::size_t>(id)];
            if (gid < 0) continue;
            if (!needed[static_cast<std::size_t>(id)] && id != loss.id) continue;
            emit_vjp(id, Var<Real>{this, gid}, cot, needed);
        }

        std::vector<std::int32_t> out;
        out.reserve(wrt.size());
        for (const auto& w : wrt) out.push_back(cot[static_cast<std::size_t>(w.id)]);
        return out;
    }

    void accumulate(std::vector<std::int32_t>& cot, const std::vector<std::uint8_t>& needed,
                    std::int32_t input, Var<Real> contrib) {
        if (input < 0) return;
        const auto i = static_cast<std::size_t>(input);
        if (i >= needed.size() || !needed[i]) return;
        cot[i] = (cot[i] < 0) ? contrib.id : add(Var<Real>{this, cot[i]}, contrib).id;
    }

    void emit_vjp(std::int32_t id, Var<Real> g, std::vector<std::int32_t>& cot,
                  const std::vector<std::uint8_t>& needed) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Var<Real> self{this, id};
        const Var<Real> a{this, n.in[0]};
        const Var<Real> b{this, n.in[1]};
        auto acc = [&](std::int32_t input, Var<Real> contrib) { accumulate(cot, needed, input, contrib); };
        auto want = [&](std::int32_t input) {
            return input >= 0 && static_cast<std::size_t>(input) < needed.size() &&
                   needed[static_cast<std::size_t>(input)];
        };

        switch (n.kind) {
            case OpKind::leaf:
            case OpKind::positive_mask:
            case OpKind::rowmax:
                break;
            case OpKind::add:
                acc(n.in[0], g);
                acc(n.in[1], g);
                break;
            case OpKind::sub:
                acc(n.in[0], g);
                if (want(n.in[1])) acc(n.in[1], neg(g));
                break;
            case OpKind::mul:
                if (want(n.in[0])) acc(n.in[0], mul(g, b));
                if (want(n.in[1])) acc(n.in[1], mul(g, a));
                break;
            case OpKind::div:
                if (want(n.in[0])) acc(n.in[0], div(g, b));
                if (want(n.in[1])) acc(n.in[1], neg(div(mul(g, self), b)));
                break;
            case OpKind::neg:
                if (want(n.in[0])) acc(n.in[0], neg(g));
                break;
            case OpKind::scale:
                if (want(n.in[0])) acc(n.in[0], scale(g, n.c));
                break;
            case OpKind::add_scalar:
                acc(n.in[0], g);
                break;
            case OpKind::exp:
                if (want(n.in[0])) acc(n.in[0], mul(g, self));
                break;
            case OpKind::log:
                if (want(n.in[0])) acc(n.in[0], div(g, a));
                break;
            case OpKind::sqrt:
                if (want(n.in[0])) acc(n.in[0], scale(div(g, self), 0.5));
                break;
            case OpKind::relu:
                if (want(n.in[0])) acc(n.in[0], mul(g, positive_mask(a)));
                break;
            case OpKind::matmul:
                if (want(n.in[0])) acc(n.in[0], matmul(g, transpose2d(b)));
                if (want(n.in[1])) acc(n.in[1], matmul(transpose2d(a), g));
                break;
            case OpKind::transpose2d:
                if (want(n.in[0])) acc(n.in[0], transpose2d(g));
                break;
            case OpKind::conv2d:
                if (want(n.in[0])) acc(n.in[0], conv2d_dinput(g, b));
                if (want(n.in[1])) acc(n.in[1], conv2d_dweight(a, g, value(n.in[1]).dim(2)));
                break;
            case OpKind::conv2d_dinput:
                // self = dinput(a=g0, b=w)
                if (want(n.in[0])) acc(n.in[0], conv2d(g, b));
                if (want(n.in[1])) acc(n.in[1], conv2d_dweight(g, a, value(n.in[1]).dim(2)));
                break;
            case OpKind::conv2d_dweight:
                // self = dweight(a=x, b=g0), cotangent g is weight-shaped
                if (want(n.in[0])) acc(n.in[0], conv2d_dinput(b, g));
                if (want(n.in[1])) acc(n.in[1], conv2d(a, g));
                break;
            case OpKind::avgpool2x2:
                if (want(n.in[0])) acc(n.in[0], unpool2x2(g));
                break;
            case OpKind::unpool2x2:
                if (want(n.in[0])) acc(n.in[0], avgpool2x2(g));
                break;
            case OpKind::reshape:
                if (want(n.in[0])) acc(n.in[0], reshape(g, value(n.in[0]).shape()));
                break;
            case OpKind::sum_all:
                if (want(n.in[0])) acc(n.in[0], bcast_scalar(g, value(n.in[0]).shape()));
                break;
            case OpKind::bcast_scalar:
                if (want(n.in[0])) acc(n.in[0], sum_all(g));
                break;
            case OpKind::sum_cols:
                if (want(n.in[0])) acc(n.in[0], repeat_cols(g, value(n.in[0]).dim(1)));
                break;
            case OpKind::repeat_cols:
                if (want(n.in[0])) acc(n.in[0], sum_cols(g));
                break;
            case OpKind::sum_rows:
                if (want(n.in[0])) acc(n.in[0], repeat_rows(g, value(n.in[0]).dim(0)));
                break;
            case OpKind::repeat_rows:
                if (want(n.in[0])) acc(n.in[0], sum_rows(g));
                break;
            case OpKind::sum_hw:
                if (want(n.in[0])) acc(n.in[0], bcast_hw(g, value(n.in[0]).dim(2), value(n.in[0]).dim(3)));
                break;
            case OpKind::bcast_hw:
                if (want(n.in[0])) acc(n.in[0], sum_hw(g));
                break;
            case OpKind::sum_nhw:
                if (want(n.in[0]))
                    acc(n.in[0], bcast_chan(g, value(n.in[0]).dim(0), value(n.in[0]).dim(2), value(n.in[0]).dim(3)));
                break;
            case OpKind::bcast_chan:
                if (want(n.in[0])) acc(n.in[0], sum_nhw(g));
                break;
            case OpKind::sum_chw:
                if (want(n.in[0]))
                    acc(n.in[0], bcast_image(g, value(n.in[0]).dim(1), value(n.in[0]).dim(2), value(n.in[0]).dim(3)));
                break;
            case OpKind::bcast_image:
                if (want(n.in[0])) acc(n.in[0], sum_chw(g));
                break;
            case OpKind::sum_chan_pix:
                if (want(n.in[0])) acc(n.in[0], bcast_chan_pix(g, value(n.in[0]).dim(1)));
                break;
            case OpKind::bcast_chan_pix:
                if (want(n.in[0])) acc(n.in[0], sum_chan_pix(g));
                break;
            case OpKind::dot:
                if (want(n.in[0])) acc(n.in[0], smul(g, b));
                if (want(n.in[1])) acc(n.in[1], smul(g, a));
                break;
            case OpKind::smul:
                if (want(n.in[0])) acc(n.in[0], dot(g, b));
                if (want(n.in[1])) acc(n.in[1], smul(a, g));
                break;
            case OpKind::gather_rows:
                if (want(n.in[0])) acc(n.in[0], scatter_add_rows(g, n.idx, value(n.in[0]).dim(0)));
                break;
            case OpKind::scatter_add_rows:
                if (want(n.in[0])) acc(n.in[0], gather_rows(g, n.idx));
                break;
            case OpKind::slice_flat:
                if (want(n.in[0]))
                    acc(n.in[0], scatter_flat(g, static_cast<std::size_t>(n.p[0]), value(n.in[0]).numel()));
                break;
            case OpKind::scatter_flat:
                if (want(n.in[0]))
                    acc(n.in[0], slice_flat(g, static_cast<std::size_t>(n.p[0]), value(n.in[0]).numel()));
                break;
            case OpKind::flip_h:
                if (want(n.in[0])) acc(n.in[0], flip_h(g, n.p[0] != 0));
                break;
            case OpKind::translate:
                if (want(n.in[0]))
                    acc(n.in[0], translate(g, -static_cast<std::ptrdiff_t>(n.p[0]),
                                            -static_cast<std::ptrdiff_t>(n.p[1])));
                break;
            case OpKind::mul_mask:
                if (want(n.in[0])) acc(n.in[0], mul_mask(g, n.aux));
                break;
        }
    }

    std::vector<Node> nodes_;
    std::size_t live_bytes_ = 0;
    std::size_t peak_nodes_ = 0;
    std::size_t peak_bytes_ = 0;
    Mode mode_;
    bool strict_;
};

template <class Real>
const TensorT<Real>& Var<Real>::value() const {
    return tape->value(id);
}

// RAII scope: releases on destruction unless already released.
template <class Real>
class TapeScope {
public:
    explicit TapeScope(Tape<Real>& tape) : tape_(&tape), tok_(tape.open_scope()) {}
    ~TapeScope() {
        if (tok_.open) tape_->release_scope(tok_);
    }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
    void release() { tape_->release_scope(tok_); }

private:
    Tape<Real>* tape_;
    typename Tape<Real>::ScopeToken tok_;
};

}  // namespace tesla
