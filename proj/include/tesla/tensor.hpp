// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float tensor and the deterministic kernels everything else
// builds on. All reductions run left to right with 64-bit accumulators;
// repeated evaluation on identical inputs is bit-identical. conv2d is a
// direct loop (pad-same, stride 1), no im2col or FFT paths.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "tesla/common.hpp"

namespace tesla {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <class Real>
class TensorT {
public:
    TensorT() = default;
    explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), Real(0)) {}
    TensorT(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel_of(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, Real v) {
        TensorT t(std::move(s));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static TensorT scalar(Real v) { return TensorT({1}, {v}); }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t bytes() const { return data_.size() * sizeof(Real); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    std::vector<Real>& vec() { return data_; }
    const std::vector<Real>& vec() const { return data_; }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    template <class Other>
    TensorT<Other> cast() const {
        TensorT<Other> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return out;
    }

private:
    Shape shape_;
    std::vector<Real> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class Real>
bool all_finite(const TensorT<Real>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

template <class Real>
void ensure_finite(const TensorT<Real>& t, const char* op) {
    if (!all_finite(t)) throw NumericFault(op);
}

template <class Real>
std::uint64_t checksum(const TensorT<Real>& t) {
    return fnv1a64(t.data(), t.bytes());
}

// ----------------------------- kernels -----------------------------

namespace kernels {

template <class Real>
void require_same_shape(const TensorT<Real>& a, const TensorT<Real>& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class Real, class F>
TensorT<Real> map2(const TensorT<Real>& a, const TensorT<Real>& b, const char* op, F f) {
    require_same_shape(a, b, op);
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
    return out;
}

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
    return map2(a, b, "add", [](Real x, Real y) { return x + y; });
}
template <class Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
    return map2(a, b, "sub", [](Real x, Real y) { return x - y; });
}
template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
    return map2(a, b, "mul", [](Real x, Real y) { return x * y; });
}
template <class Real>
TensorT<Real> div(const TensorT<Real>& a, const TensorT<Real>& b) {
    return map2(a, b, "div", [](Real x, Real y) { return x / y; });
}

template <class Real>
TensorT<Real> neg(const TensorT<Real>& a) {
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = -a[i];
    return out;
}

template <class Real>
TensorT<Real> scale(const TensorT<Real>& a, double c) {
    TensorT<Real> out(a.shape());
    const Real rc = static_cast<Real>(c);
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * rc;
    return out;
}

template <class Real>
TensorT<Real> add_scalar(const TensorT<Real>& a, double c) {
    TensorT<Real> out(a.shape());
    const Real rc = static_cast<Real>(c);
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + rc;
    return out;
}

template <class Real>
TensorT<Real> exp(const TensorT<Real>& a) {
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
    return out;
}

template <class Real>
TensorT<Real> log(const TensorT<Real>& a) {
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::log(a[i]);
    return out;
}

template <class Real>
TensorT<Real> sqrt(const TensorT<Real>& a) {
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::sqrt(a[i]);
    return out;
}

template <class Real>
TensorT<Real> relu(const TensorT<Real>& a) {
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > Real(0) ? a[i] : Real(0);
    return out;
}

// 1 where x > 0, else 0; constant w.r.t. differentiation
template <class Real>
TensorT<Real> positive_mask(const TensorT<Real>& a) {
    TensorT<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > Real(0) ? Real(1) : Real(0);
    return out;
}

// (R,K) x (K,C) -> (R,C)
template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t R = a.dim(0), K = a.dim(1), C = b.dim(1);
    TensorT<Real> out({R, C});
    for (std::size_t i = 0; i < R; ++i) {
        Real* orow = out.data() + i * C;
        const Real* arow = a.data() + i * K;
        for (std::size_t k = 0; k < K; ++k) {
            const Real av = arow[k];
            const Real* brow = b.data() + k * C;
            for (std::size_t j = 0; j < C; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

template <class Real>
TensorT<Real> transpose2d(const TensorT<Real>& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d: rank " + std::to_string(a.rank()));
    const std::size_t R = a.dim(0), C = a.dim(1);
    TensorT<Real> out({C, R});
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out[j * R + i] = a[i * C + j];
    return out;
}

// X (N,C,H,W) * W (O,C,k,k) -> (N,O,H,W); pad-same, stride 1, odd k
template <class Real>
TensorT<Real> conv2d(const TensorT<Real>& x, const TensorT<Real>& w) {
    if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
        throw ShapeError("conv2d: " + shape_str(x.shape()) + " * " + shape_str(w.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), K = w.dim(2);
    const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(K / 2);
    TensorT<Real> out({N, O, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
            Real* oplane = out.data() + (n * O + o) * H * W;
            for (std::size_t c = 0; c < C; ++c) {
                const Real* xplane = x.data() + (n * C + c) * H * W;
                const Real* wk = w.data() + (o * C + c) * K * K;
                for (std::size_t ki = 0; ki < K; ++ki)
                    for (std::size_t kj = 0; kj < K; ++kj) {
                        const Real wv = wk[ki * K + kj];
                        if (wv == Real(0)) continue;
                        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - P;
                        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - P;
                        const std::size_t i0 = di < 0 ? static_cast<std::size_t>(-di) : 0;
                        const std::size_t i1 = di > 0 ? H - static_cast<std::size_t>(di) : H;
                        const std::size_t j0 = dj < 0 ? static_cast<std::size_t>(-dj) : 0;
                        const std::size_t j1 = dj > 0 ? W - static_cast<std::size_t>(dj) : W;
                        for (std::size_t i = i0; i < i1; ++i) {
                            Real* orow = oplane + i * W;
                            const Real* xrow = xplane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + di) * W;
                            for (std::size_t j = j0; j < j1; ++j)
                                orow[j] += wv * xrow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + dj)];
                        }
                    }
            }
        }
    return out;
}

// gradient of conv2d w.r.t. its input: G (N,O,H,W), W (O,C,k,k) -> (N,C,H,W)
template <class Real>
TensorT<Real> conv2d_dinput(const TensorT<Real>& g, const TensorT<Real>& w) {
    if (g.rank() != 4 || w.rank() != 4 || g.dim(1) != w.dim(0))
        throw ShapeError("conv2d_dinput: " + shape_str(g.shape()) + " * " + shape_str(w.shape()));
    const std::size_t N = g.dim(0), O = g.dim(1), H = g.dim(2), W = g.dim(3);
    const std::size_t C = w.dim(1), K = w.dim(2);
    const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(K / 2);
    TensorT<Real> out({N, C, H, W});
    // out[n,c,p,q] = sum_{o,ki,kj} g[n,o,i,j] * w[o,c,ki,kj] with p = i+ki-P, q = j+kj-P
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            Real* oplane = out.data() + (n * C + c) * H * W;
            for (std::size_t o = 0; o < O; ++o) {
                const Real* gplane = g.data() + (n * O + o) * H * W;
                const Real* wk = w.data() + (o * C + c) * K * K;
                for (std::size_t ki = 0; ki < K; ++ki)
                    for (std::size_t kj = 0; kj < K; ++kj) {
                        const Real wv = wk[ki * K + kj];
                        if (wv == Real(0)) continue;
                        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - P;
                        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - P;
                        // out[i+di, j+dj] += wv * g[i, j]
                        const std::size_t i0 = di < 0 ? static_cast<std::size_t>(-di) : 0;
                        const std::size_t i1 = di > 0 ? H - static_cast<std::size_t>(di) : H;
                        const std::size_t j0 = dj < 0 ? static_cast<std::size_t>(-dj) : 0;
                        const std::size_t j1 = dj > 0 ? W - static_cast<std::size_t>(dj) : W;
                        for (std::size_t i = i0; i < i1; ++i) {
                            Real* orow = oplane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + di) * W;
                            const Real* grow = gplane + i * W;
                            for (std::size_t j = j0; j < j1; ++j)
                                orow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + dj)] += wv * grow[j];
                        }
                    }
            }
        }
    return out;
}

// gradient of conv2d w.r.t. its weights: X (N,C,H,W), G (N,O,H,W) -> (O,C,k,k)
template <class Real>
TensorT<Real> conv2d_dweight(const TensorT<Real>& x, const TensorT<Real>& g, std::size_t k) {
    if (x.rank() != 4 || g.rank() != 4 || x.dim(0) != g.dim(0) || x.dim(2) != g.dim(2) || x.dim(3) != g.dim(3))
        throw ShapeError("conv2d_dweight: " + shape_str(x.shape()) + " * " + shape_str(g.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = g.dim(1);
    const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(k / 2);
    TensorT<Real> out({O, C, k, k});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
            const Real* gplane = g.data() + (n * O + o) * H * W;
            for (std::size_t c = 0; c < C; ++c) {
                const Real* xplane = x.data() + (n * C + c) * H * W;
                Real* wk = out.data() + (o * C + c) * k * k;
                for (std::size_t ki = 0; ki < k; ++ki)
                    for (std::size_t kj = 0; kj < k; ++kj) {
                        const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(ki) - P;
                        const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(kj) - P;
                        const std::size_t i0 = di < 0 ? static_cast<std::size_t>(-di) : 0;
                        const std::size_t i1 = di > 0 ? H - static_cast<std::size_t>(di) : H;
                        const std::size_t j0 = dj < 0 ? static_cast<std::size_t>(-dj) : 0;
                        const std::size_t j1 = dj > 0 ? W - static_cast<std::size_t>(dj) : W;
                        Real acc = wk[ki * k + kj];
                        for (std::size_t i = i0; i < i1; ++i) {
                            const Real* grow = gplane + i * W;
                            const Real* xrow = xplane + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(i) + di) * W;
                            for (std::size_t j = j0; j < j1; ++j)
                                acc += grow[j] * xrow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) + dj)];
                        }
                        wk[ki * k + kj] = acc;
                    }
            }
        }
    return out;
}

// 2x2 average pool, stride 2; requires even spatial dims
template <class Real>
TensorT<Real> avgpool2x2(const TensorT<Real>& x) {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
        throw ShapeError("avgpool2x2: " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = H / 2, Wo = W / 2;
    TensorT<Real> out({N, C, Ho, Wo});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const Real* xp = x.data() + nc * H * W;
        Real* op = out.data() + nc * Ho * Wo;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                const Real* r0 = xp + (2 * i) * W + 2 * j;
                const Real* r1 = xp + (2 * i + 1) * W + 2 * j;
                op[i * Wo + j] = (r0[0] + r0[1] + r1[0] + r1[1]) * Real(0.25);
            }
    }
    return out;
}

// adjoint of avgpool2x2: (N,C,h,w) -> (N,C,2h,2w), each cell spread /4
template <class Real>
TensorT<Real> unpool2x2(const TensorT<Real>& g) {
    if (g.rank() != 4) throw ShapeError("unpool2x2: " + shape_str(g.shape()));
    const std::size_t N = g.dim(0), C = g.dim(1), Ho = g.dim(2), Wo = g.dim(3);
    TensorT<Real> out({N, C, 2 * Ho, 2 * Wo});
    const std::size_t H = 2 * Ho, W = 2 * Wo;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const Real* gp = g.data() + nc * Ho * Wo;
        Real* op = out.data() + nc * H * W;
        for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
                const Real v = gp[i * Wo + j] * Real(0.25);
                op[(2 * i) * W + 2 * j] = v;
                op[(2 * i) * W + 2 * j + 1] = v;
                op[(2 * i + 1) * W + 2 * j] = v;
                op[(2 * i + 1) * W + 2 * j + 1] = v;
            }
    }
    return out;
}

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& x, Shape s) {
    if (numel_of(s) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(s));
    return TensorT<Real>(std::move(s), x.vec());
}

template <class Real>
TensorT<Real> sum_all(const TensorT<Real>& x) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x[i]);
    return TensorT<Real>::scalar(static_cast<Real>(acc));
}

template <class Real>
TensorT<Real> bcast_scalar(const TensorT<Real>& s, const Shape& shape) {
    if (s.numel() != 1) throw ShapeError("bcast_scalar: source not scalar");
    return TensorT<Real>::full(shape, s[0]);
}

// (R,C) -> (R,): sum over columns
template <class Real>
TensorT<Real> sum_cols(const TensorT<Real>& x) {
    if (x.rank() != 2) throw ShapeError("sum_cols: " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), C = x.dim(1);
    TensorT<Real> out({R});
    for (std::size_t i = 0; i < R; ++i) {
        double acc = 0.0;
        const Real* row = x.data() + i * C;
        for (std::size_t j = 0; j < C; ++j) acc += static_cast<double>(row[j]);
        out[i] = static_cast<Real>(acc);
    }
    return out;
}

// (R,) -> (R,C): repeat each entry across a row
template <class Real>
TensorT<Real> repeat_cols(const TensorT<Real>& v, std::size_t cols) {
    if (v.rank() != 1) throw ShapeError("repeat_cols: " + shape_str(v.shape()));
    const std::size_t R = v.dim(0);
    TensorT<Real> out({R, cols});
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = v[i];
    return out;
}

// (R,C) -> (C,): sum over rows
template <class Real>
TensorT<Real> sum_rows(const TensorT<Real>& x) {
    if (x.rank() != 2) throw ShapeError("sum_rows: " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), C = x.dim(1);
    TensorT<Real> out({C});
    std::vector<double> acc(C, 0.0);
    for (std::size_t i = 0; i < R; ++i) {
        const Real* row = x.data() + i * C;
        for (std::size_t j = 0; j < C; ++j) acc[j] += static_cast<double>(row[j]);
    }
    for (std::size_t j = 0; j < C; ++j) out[j] = static_cast<Real>(acc[j]);
    return out;
}

// (C,) -> (R,C): repeat the row R times
template <class Real>
TensorT<Real> repeat_rows(const TensorT<Real>& v, std::size_t rows) {
    if (v.rank() != 1) throw ShapeError("repeat_rows: " + shape_str(v.shape()));
    const std::size_t C = v.dim(0);
    TensorT<Real> out({rows, C});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < C; ++j) out[i * C + j] = v[j];
    return out;
}

// (N,C,H,W) -> (N,C): sum over spatial dims
template <class Real>
TensorT<Real> sum_hw(const TensorT<Real>& x) {
    if (x.rank() != 4) throw ShapeError("sum_hw: " + shape_str(x.shape()));
    const std::size_t NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<Real> out({x.dim(0), x.dim(1)});
    for (std::size_t nc = 0; nc < NC; ++nc) {
        double acc = 0.0;
        const Real* p = x.data() + nc * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += static_cast<double>(p[i]);
        out[nc] = static_cast<Real>(acc);
    }
    return out;
}

// (N,C) -> (N,C,H,W)
template <class Real>
TensorT<Real> bcast_hw(const TensorT<Real>& v, std::size_t H, std::size_t W) {
    if (v.rank() != 2) throw ShapeError("bcast_hw: " + shape_str(v.shape()));
    TensorT<Real> out({v.dim(0), v.dim(1), H, W});
    for (std::size_t nc = 0; nc < v.numel(); ++nc) {
        Real* p = out.data() + nc * H * W;
        std::fill(p, p + H * W, v[nc]);
    }
    return out;
}

// (N,C,H,W) -> (C,): sum over batch and spatial dims
template <class Real>
TensorT<Real> sum_nhw(const TensorT<Real>& x) {
    if (x.rank() != 4) throw ShapeError("sum_nhw: " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<Real> out({C});
    std::vector<double> acc(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const Real* p = x.data() + (n * C + c) * HW;
            double a = 0.0;
            for (std::size_t i = 0; i < HW; ++i) a += static_cast<double>(p[i]);
            acc[c] += a;
        }
    for (std::size_t c = 0; c < C; ++c) out[c] = static_cast<Real>(acc[c]);
    return out;
}

// (C,) -> (N,C,H,W)
template <class Real>
TensorT<Real> bcast_chan(const TensorT<Real>& v, std::size_t N, std::size_t H, std::size_t W) {
    if (v.rank() != 1) throw ShapeError("bcast_chan: " + shape_str(v.shape()));
    const std::size_t C = v.dim(0);
    TensorT<Real> out({N, C, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            Real* p = out.data() + (n * C + c) * H * W;
            std::fill(p, p + H * W, v[c]);
        }
    return out;
}

// (N,C,H,W) -> (N,): sum over everything but the batch dim
template <class Real>
TensorT<Real> sum_chw(const TensorT<Real>& x) {
    if (x.rank() != 4) throw ShapeError("sum_chw: " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), CHW = x.dim(1) * x.dim(2) * x.dim(3);
    TensorT<Real> out({N});
    for (std::size_t n = 0; n < N; ++n) {
        double acc = 0.0;
        const Real* p = x.data() + n * CHW;
        for (std::size_t i = 0; i < CHW; ++i) acc += static_cast<double>(p[i]);
        out[n] = static_cast<Real>(acc);
    }
    return out;
}

// (N,) -> (N,C,H,W)
template <class Real>
TensorT<Real> bcast_image(const TensorT<Real>& v, std::size_t C, std::size_t H, std::size_t W) {
    if (v.rank() != 1) throw ShapeError("bcast_image: " + shape_str(v.shape()));
    TensorT<Real> out({v.dim(0), C, H, W});
    const std::size_t CHW = C * H * W;
    for (std::size_t n = 0; n < v.dim(0); ++n) {
        Real* p = out.data() + n * CHW;
        std::fill(p, p + CHW, v[n]);
    }
    return out;
}

// (N,C,H,W) -> (N,H,W): sum over channels at each pixel
template <class Real>
TensorT<Real> sum_chan_pix(const TensorT<Real>& x) {
    if (x.rank() != 4) throw ShapeError("sum_chan_pix: " + shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<Real> out({N, x.dim(2), x.dim(3)});
    for (std::size_t n = 0; n < N; ++n) {
        Real* op = out.data() + n * HW;
        for (std::size_t i = 0; i < HW; ++i) {
            double acc = 0.0;
            for (std::size_t c = 0; c < C; ++c) acc += static_cast<double>(x.data()[(n * C + c) * HW + i]);
            op[i] = static_cast<Real>(acc);
        }
    }
    return out;
}

// (N,H,W) -> (N,C,H,W)
template <class Real>
TensorT<Real> bcast_chan_pix(const TensorT<Real>& v, std::size_t C) {
    if (v.rank() != 3) throw ShapeError("bcast_chan_pix: " + shape_str(v.shape()));
    const std::size_t N = v.dim(0), HW = v.dim(1) * v.dim(2);
    TensorT<Real> out({N, C, v.dim(1), v.dim(2)});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            Real* p = out.data() + (n * C + c) * HW;
            const Real* s = v.data() + n * HW;
            std::copy(s, s + HW, p);
        }
    return out;
}

// (R,C) -> (R,): row-wise max. Constant for differentiation; used only for
// the log-sum-exp shift where its derivative cancels exactly.
template <class Real>
TensorT<Real> rowmax(const TensorT<Real>& x) {
    if (x.rank() != 2) throw ShapeError("rowmax: " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), C = x.dim(1);
    TensorT<Real> out({R});
    for (std::size_t i = 0; i < R; ++i) {
        const Real* row = x.data() + i * C;
        Real m = row[0];
        for (std::size_t j = 1; j < C; ++j) m = std::max(m, row[j]);
        out[i] = m;
    }
    return out;
}

// flat inner product, 64-bit accumulation
template <class Real>
double dot64(const TensorT<Real>& a, const TensorT<Real>& b) {
    if (a.numel() != b.numel())
        throw ShapeError("dot: length " + std::to_string(a.numel()) + " vs " + std::to_string(b.numel()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <class Real>
TensorT<Real> dot(const TensorT<Real>& a, const TensorT<Real>& b) {
    return TensorT<Real>::scalar(static_cast<Real>(dot64(a, b)));
}

// scalar ({1}) times tensor
template <class Real>
TensorT<Real> smul(const TensorT<Real>& s, const TensorT<Real>& t) {
    if (s.numel() != 1) throw ShapeError("smul: scalar operand has " + std::to_string(s.numel()) + " elements");
    return scale(t, static_cast<double>(s[0]));
}

// rows of a (n, ...) tensor selected into a (B, ...) tensor
template <class Real>
TensorT<Real> gather_rows(const TensorT<Real>& x, const std::vector<std::uint32_t>& idx) {
    if (x.rank() < 1) throw ShapeError("gather_rows: rank 0");
    const std::size_t n = x.dim(0), stride = x.numel() / std::max<std::size_t>(n, 1);
    Shape s = x.shape();
    s[0] = idx.size();
    TensorT<Real> out(s);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        if (idx[b] >= n) throw ShapeError("gather_rows: index out of range");
        std::copy(x.data() + idx[b] * stride, x.data() + (idx[b] + 1) * stride, out.data() + b * stride);
    }
    return out;
}

// adjoint of gather_rows: slot order b = 0..B-1, deterministic accumulation
template <class Real>
TensorT<Real> scatter_add_rows(const TensorT<Real>& g, const std::vector<std::uint32_t>& idx, std::size_t n) {
    if (g.rank() < 1 || g.dim(0) != idx.size()) throw ShapeError("scatter_add_rows: bad gradient shape");
    const std::size_t stride = g.numel() / std::max<std::size_t>(g.dim(0), 1);
    Shape s = g.shape();
    s[0] = n;
    TensorT<Real> out(s);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        if (idx[b] >= n) throw ShapeError("scatter_add_rows: index out of range");
        Real* dst = out.data() + idx[b] * stride;
        const Real* src = g.data() + b * stride;
        for (std::size_t i = 0; i < stride; ++i) dst[i] += src[i];
    }
    return out;
}

template <class Real>
TensorT<Real> slice_flat(const TensorT<Real>& x, std::size_t off, std::size_t len) {
    if (off + len > x.numel()) throw ShapeError("slice_flat: out of range");
    TensorT<Real> out({len});
    std::copy(x.data() + off, x.data() + off + len, out.data());
    return out;
}

template <class Real>
TensorT<Real> scatter_flat(const TensorT<Real>& g, std::size_t off, std::size_t total) {
    if (off + g.numel() > total) throw ShapeError("scatter_flat: out of range");
    TensorT<Real> out({total});
    std::copy(g.data(), g.data() + g.numel(), out.data() + off);
    return out;
}

// horizontal flip of every image in a batch; apply=false is identity
template <class Real>
TensorT<Real> flip_h(const TensorT<Real>& x, bool apply) {
    if (x.rank() != 4) throw ShapeError("flip_h: " + shape_str(x.shape()));
    if (!apply) return x;
    const std::size_t NCH = x.dim(0) * x.dim(1) * x.dim(2), W = x.dim(3);
    TensorT<Real> out(x.shape());
    for (std::size_t r = 0; r < NCH; ++r) {
        const Real* src = x.data() + r * W;
        Real* dst = out.data() + r * W;
        for (std::size_t j = 0; j < W; ++j) dst[j] = src[W - 1 - j];
    }
    return out;
}

// integer shift with zero fill; adjoint is the opposite shift
template <class Real>
TensorT<Real> translate(const TensorT<Real>& x, std::ptrdiff_t dy, std::ptrdiff_t dx) {
    if (x.rank() != 4) throw ShapeError("translate: " + shape_str(x.shape()));
    const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<Real> out(x.shape());
    for (std::size_t nc = 0; nc < NC; ++nc) {
        const Real* xp = x.data() + nc * H * W;
        Real* op = out.data() + nc * H * W;
        for (std::size_t i = 0; i < H; ++i) {
            const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i) - dy;
            if (si < 0 || si >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t j = 0; j < W; ++j) {
                const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j) - dx;
                if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(W)) continue;
                op[i * W + j] = xp[static_cast<std::size_t>(si) * W + static_cast<std::size_t>(sj)];
            }
        }
    }
    return out;
}

// elementwise multiply by a constant mask (payload, not a graph input)
template <class Real>
TensorT<Real> mul_mask(const TensorT<Real>& x, const TensorT<Real>& mask) {
    return mul(x, mask);
}

// row-wise log softmax via the shifted log-sum-exp; plain (non-tape) version
template <class Real>
TensorT<Real> log_softmax(const TensorT<Real>& x) {
    if (x.rank() != 2) throw ShapeError("log_softmax: " + shape_str(x.shape()));
    const std::size_t R = x.dim(0), C = x.dim(1);
    TensorT<Real> out(x.shape());
    for (std::size_t i = 0; i < R; ++i) {
        const Real* row = x.data() + i * C;
        Real m = row[0];
        for (std::size_t j = 1; j < C; ++j) m = std::max(m, row[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < C; ++j) se += std::exp(static_cast<double>(row[j] - m));
        const double lse = std::log(se);
        Real* orow = out.data() + i * C;
        for (std::size_t j = 0; j < C; ++j)
            orow[j] = static_cast<Real>(static_cast<double>(row[j] - m) - lse);
    }
    return out;
}

template <class Real>
TensorT<Real> softmax(const TensorT<Real>& x) {
    TensorT<Real> out = log_softmax(x);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
    return out;
}

// per-(sample, channel) normalization over spatial dims; plain version
template <class Real>
TensorT<Real> instance_normalize(const TensorT<Real>& x, double eps) {
    if (x.rank() != 4) throw ShapeError("instance_normalize: " + shape_str(x.shape()));
    const std::size_t NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<Real> out(x.shape());
    for (std::size_t nc = 0; nc < NC; ++nc) {
        const Real* p = x.data() + nc * HW;
        double mean = 0.0;
        for (std::size_t i = 0; i < HW; ++i) mean += static_cast<double>(p[i]);
        mean /= static_cast<double>(HW);
        double var = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
            const double d = static_cast<double>(p[i]) - mean;
            var += d * d;
        }
        var /= static_cast<double>(HW);
        const double inv = 1.0 / std::sqrt(var + eps);
        Real* o = out.data() + nc * HW;
        for (std::size_t i = 0; i < HW; ++i)
            o[i] = static_cast<Real>((static_cast<double>(p[i]) - mean) * inv);
    }
    return out;
}

}  // namespace kernels
}  // namespace tesla
