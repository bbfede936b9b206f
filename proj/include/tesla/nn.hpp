// SPDX-License-Identifier: Apache-2.0
//
// Student/teacher network family: ConvNet blocks (conv3x3 -> instance norm ->
// relu -> avgpool 2x2/2) with a final affine classifier, plus an MLP variant.
// Parameters live in one flat vector in canonical layer order (weight before
// bias), which makes parameter-space arithmetic and the trajectory file
// format straightforward.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "tesla/autodiff.hpp"
#include "tesla/common.hpp"
#include "tesla/tensor.hpp"

namespace tesla {

enum class ArchKind : std::uint8_t { convnet, mlp };
enum class NormKind : std::uint8_t { instance, none };

constexpr double kInstanceNormEps = 1e-5;

struct ModelArch {
    ArchKind kind = ArchKind::convnet;
    int depth = 3;
    int width = 128;
    NormKind norm = NormKind::instance;
    int classes = 10;
    std::array<std::size_t, 3> input{3, 32, 32};  // C,H,W

    bool operator==(const ModelArch&) const = default;

    std::string descriptor() const {
        std::ostringstream os;
        os << (kind == ArchKind::convnet ? "convnet" : "mlp") << ";d=" << depth << ";w=" << width
           << ";norm=" << (norm == NormKind::instance ? "instance" : "none") << ";classes=" << classes
           << ";in=" << input[0] << "x" << input[1] << "x" << input[2];
        return os.str();
    }

    static ModelArch parse(const std::string& s) {
        ModelArch a;
        std::stringstream ss(s);
        std::string tok;
        bool first = true;
        while (std::getline(ss, tok, ';')) {
            if (first) {
                if (tok == "convnet")
                    a.kind = ArchKind::convnet;
                else if (tok == "mlp")
                    a.kind = ArchKind::mlp;
                else
                    throw ConfigError("unknown arch kind '" + tok + "'");
                first = false;
                continue;
            }
            const auto eq = tok.find('=');
            if (eq == std::string::npos) throw ConfigError("bad arch descriptor token '" + tok + "'");
            const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "d")
                a.depth = std::stoi(val);
            else if (key == "w")
                a.width = std::stoi(val);
            else if (key == "norm")
                a.norm = (val == "instance") ? NormKind::instance : NormKind::none;
            else if (key == "classes")
                a.classes = std::stoi(val);
            else if (key == "in") {
                std::size_t c = 0, h = 0, w = 0;
                if (std::sscanf(val.c_str(), "%zux%zux%zu", &c, &h, &w) != 3)
                    throw ConfigError("bad arch input '" + val + "'");
                a.input = {c, h, w};
            } else
                throw ConfigError("unknown arch key '" + key + "'");
        }
        if (a.depth < 1) throw ConfigError("arch depth must be >= 1");
        return a;
    }
};

struct ParamSlice {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t len = 0;
    std::size_t fan_in = 0;  // 0: not a weight (bias / norm affine)
    double init = 0.0;       // constant init for non-weights
};

struct ParamLayout {
    std::vector<ParamSlice> slices;
    std::size_t total = 0;
};

inline ParamLayout layout_of(const ModelArch& arch) {
    ParamLayout lay;
    auto push = [&](std::string name, Shape shape, std::size_t fan_in, double init) {
        ParamSlice s;
        s.name = std::move(name);
        s.len = numel_of(shape);
        s.shape = std::move(shape);
        s.offset = lay.total;
        s.fan_in = fan_in;
        s.init = init;
        lay.total += s.len;
        lay.slices.push_back(std::move(s));
    };

    const std::size_t C = arch.input[0], H = arch.input[1], W = arch.input[2];
    const auto width = static_cast<std::size_t>(arch.width);
    const auto classes = static_cast<std::size_t>(arch.classes);

    if (arch.kind == ArchKind::convnet) {
        std::size_t cin = C, h = H, w = W;
        for (int d = 0; d < arch.depth; ++d) {
            if (h % 2 != 0 || w % 2 != 0)
                throw ShapeError("convnet depth " + std::to_string(arch.depth) + " needs spatial dims divisible by 2^depth");
            const std::string p = "block" + std::to_string(d) + ".";
            push(p + "conv.weight", {width, cin, 3, 3}, cin * 9, 0.0);
            push(p + "conv.bias", {width}, 0, 0.0);
            if (arch.norm == NormKind::instance) {
                push(p + "norm.gamma", {width}, 0, 1.0);
                push(p + "norm.beta", {width}, 0, 0.0);
            }
            cin = width;
            h /= 2;
            w /= 2;
        }
        push("fc.weight", {cin * h * w, classes}, cin * h * w, 0.0);
        push("fc.bias", {classes}, 0, 0.0);
    } else {
        std::size_t din = C * H * W;
        for (int d = 0; d < arch.depth; ++d) {
            const std::string p = "hidden" + std::to_string(d) + ".";
            push(p + "weight", {din, width}, din, 0.0);
            push(p + "bias", {width}, 0, 0.0);
            din = width;
        }
        push("fc.weight", {din, classes}, din, 0.0);
        push("fc.bias", {classes}, 0, 0.0);
    }
    return lay;
}

// Fan-in-scaled normal init for weights, constants elsewhere. Same seed gives
// bit-identical parameters.
template <class Real>
TensorT<Real> init_params(const ModelArch& arch, std::uint64_t seed) {
    const ParamLayout lay = layout_of(arch);
    TensorT<Real> flat({lay.total});
    Rng rng(mix_seed(seed, fnv1a64("init_params")));
    for (const auto& s : lay.slices) {
        if (s.fan_in > 0) {
            const double std = std::sqrt(2.0 / static_cast<double>(s.fan_in));
            for (std::size_t i = 0; i < s.len; ++i)
                flat[s.offset + i] = static_cast<Real>(rng.normal() * std);
        } else {
            for (std::size_t i = 0; i < s.len; ++i) flat[s.offset + i] = static_cast<Real>(s.init);
        }
    }
    return flat;
}

template <class Real>
std::vector<TensorT<Real>> unflatten(const ParamLayout& lay, const TensorT<Real>& flat) {
    if (flat.numel() != lay.total)
        throw ShapeError("unflatten: " + std::to_string(flat.numel()) + " vs layout total " + std::to_string(lay.total));
    std::vector<TensorT<Real>> out;
    out.reserve(lay.slices.size());
    for (const auto& s : lay.slices)
        out.push_back(kernels::reshape(kernels::slice_flat(flat, s.offset, s.len), s.shape));
    return out;
}

template <class Real>
TensorT<Real> flatten(const ParamLayout& lay, const std::vector<TensorT<Real>>& parts) {
    if (parts.size() != lay.slices.size()) throw ShapeError("flatten: part count mismatch");
    TensorT<Real> flat({lay.total});
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& s = lay.slices[i];
        if (parts[i].numel() != s.len) throw ShapeError("flatten: slice '" + s.name + "' size mismatch");
        std::copy(parts[i].data(), parts[i].data() + s.len, flat.data() + s.offset);
    }
    return flat;
}

namespace detail {

template <class Real>
Var<Real> param_view(Tape<Real>& t, Var<Real> flat, const ParamSlice& s) {
    Var<Real> v = t.slice_flat(flat, s.offset, s.len);
    if (s.shape.size() == 1) return v;
    return t.reshape(v, s.shape);
}

template <class Real>
Var<Real> instance_norm(Tape<Real>& t, Var<Real> x) {
    const std::size_t H = x.shape()[2], W = x.shape()[3];
    const double inv_hw = 1.0 / static_cast<double>(H * W);
    Var<Real> mu = t.scale(t.sum_hw(x), inv_hw);
    Var<Real> d = t.sub(x, t.bcast_hw(mu, H, W));
    Var<Real> var = t.scale(t.sum_hw(t.mul(d, d)), inv_hw);
    Var<Real> rs = t.sqrt(t.add_scalar(var, kInstanceNormEps));
    return t.div(d, t.bcast_hw(rs, H, W));
}

}  // namespace detail

// Row-wise log softmax via the shifted log-sum-exp; the shift is detached,
// which leaves first and second derivatives exact.
template <class Real>
Var<Real> log_softmax_rows(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const std::size_t C = x.shape()[1];
    Var<Real> m = t.rowmax(x);
    Var<Real> xm = t.sub(x, t.repeat_cols(m, C));
    Var<Real> lse = t.log(t.sum_cols(t.exp(xm)));
    return t.sub(xm, t.repeat_cols(lse, C));
}

template <class Real>
Var<Real> softmax_rows(Var<Real> x) {
    return x.tape->exp(log_softmax_rows(x));
}

template <class Real>
Var<Real> forward_logits(const ModelArch& arch, Var<Real> params, Var<Real> X) {
    Tape<Real>& t = *params.tape;
    if (X.tape != &t) throw ScopeError("forward_logits: params and input on different tapes");
    const ParamLayout lay = layout_of(arch);
    if (params.value().numel() != lay.total)
        throw ShapeError("forward_logits: parameter count " + std::to_string(params.value().numel()) +
                         " does not match arch (" + std::to_string(lay.total) + ")");
    const Shape& xs = X.shape();
    if (xs.size() != 4 || xs[1] != arch.input[0] || xs[2] != arch.input[1] || xs[3] != arch.input[2])
        throw ShapeError("forward_logits: input " + shape_str(xs) + " does not match arch " + arch.descriptor());
    if (xs[0] < 1) throw ShapeError("forward_logits: empty batch");

    const std::size_t N = xs[0];
    std::size_t si = 0;
    auto next = [&]() -> const ParamSlice& { return lay.slices[si++]; };

    Var<Real> h = X;
    if (arch.kind == ArchKind::convnet) {
        for (int d = 0; d < arch.depth; ++d) {
            Var<Real> w = detail::param_view(t, params, next());
            Var<Real> b = detail::param_view(t, params, next());
            const std::size_t Hh = h.shape()[2], Ww = h.shape()[3];
            h = t.add(t.conv2d(h, w), t.bcast_chan(b, N, Hh, Ww));
            if (arch.norm == NormKind::instance) {
                Var<Real> gamma = detail::param_view(t, params, next());
                Var<Real> beta = detail::param_view(t, params, next());
                h = t.add(t.mul(detail::instance_norm(t, h), t.bcast_chan(gamma, N, Hh, Ww)),
                          t.bcast_chan(beta, N, Hh, Ww));
            }
            h = t.avgpool2x2(t.relu(h));
        }
        h = t.reshape(h, {N, h.value().numel() / N});
    } else {
        h = t.reshape(h, {N, h.value().numel() / N});
        for (int d = 0; d < arch.depth; ++d) {
            Var<Real> w = detail::param_view(t, params, next());
            Var<Real> b = detail::param_view(t, params, next());
            h = t.relu(t.add(t.matmul(h, w), t.repeat_rows(b, N)));
        }
    }
    Var<Real> wfc = detail::param_view(t, params, next());
    Var<Real> bfc = detail::param_view(t, params, next());
    return t.add(t.matmul(h, wfc), t.repeat_rows(bfc, N));
}

// Value-only forward on a scratch tape.
template <class Real>
TensorT<Real> forward_logits_value(const ModelArch& arch, const TensorT<Real>& params, const TensorT<Real>& X) {
    Tape<Real> tape;
    Var<Real> p = tape.leaf(params);
    Var<Real> x = tape.leaf(X);
    return forward_logits(arch, p, x).value();
}

template <class Real>
void validate_target_rows(const TensorT<Real>& targets) {
    if (targets.rank() != 2) throw ShapeError("targets: expected (batch, classes), got " + shape_str(targets.shape()));
    const std::size_t R = targets.dim(0), C = targets.dim(1);
    for (std::size_t i = 0; i < R; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
            const double v = static_cast<double>(targets[i * C + j]);
            if (v < 0.0) throw ShapeError("targets: negative entry in row " + std::to_string(i));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-5)
            throw ShapeError("targets: row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
}

// Mean over the batch of -sum_c targets * log softmax(logits). Hard labels
// are one-hot rows through the same path.
template <class Real>
Var<Real> soft_ce_loss(Var<Real> logits, Var<Real> targets) {
    Tape<Real>& t = *logits.tape;
    if (targets.tape != &t) throw ScopeError("soft_ce_loss: mixed tapes");
    if (logits.shape() != targets.shape())
        throw ShapeError("soft_ce_loss: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    validate_target_rows(targets.value());
    const double inv_batch = 1.0 / static_cast<double>(logits.shape()[0]);
    Var<Real> lsm = log_softmax_rows(logits);
    return t.scale(t.sum_all(t.mul(lsm, targets)), -inv_batch);
}

template <class Real>
TensorT<Real> one_hot_rows(const std::vector<int>& labels, int classes) {
    TensorT<Real> out({labels.size(), static_cast<std::size_t>(classes)});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) throw ShapeError("one_hot_rows: label out of range");
        out[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])] = Real(1);
    }
    return out;
}

}  // namespace tesla
