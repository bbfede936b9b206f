// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <catch2/catch_amalgamated.hpp>

#include "tesla/autodiff.hpp"
#include "tesla/tensor.hpp"

namespace tesla::testutil {

template <class Real>
TensorT<Real> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorT<Real> t(std::move(s));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<Real>(rng.uniform(lo, hi));
    return t;
}

template <class Real>
TensorT<Real> random_prob_rows(std::size_t rows, std::size_t cols, Rng& rng) {
    TensorT<Real> t({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double v = rng.uniform(0.05, 1.0);
            t[i * cols + j] = static_cast<Real>(v);
            sum += v;
        }
        for (std::size_t j = 0; j < cols; ++j)
            t[i * cols + j] = static_cast<Real>(static_cast<double>(t[i * cols + j]) / sum);
    }
    return t;
}

// Central finite differences of a scalar functional, coordinate by coordinate.
template <class F>
TensorT<double> finite_diff(const TensorT<double>& x, F f, double eps = 1e-3) {
    TensorT<double> g(x.shape());
    TensorT<double> xp = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + eps;
        const double fp = f(xp);
        xp[i] = orig - eps;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

// Per-coordinate agreement relative to the reference's own scale.
template <class Real>
void check_grad_close(const TensorT<Real>& got, const TensorT<double>& want, double rtol,
                      const std::string& note = "") {
    REQUIRE(got.shape() == want.shape());
    double scale = 0.0;
    for (std::size_t i = 0; i < want.numel(); ++i) scale = std::max(scale, std::abs(want[i]));
    scale = std::max(scale, 1e-10);
    for (std::size_t i = 0; i < got.numel(); ++i) {
        const double g = static_cast<double>(got[i]);
        const double w = want[i];
        INFO(note << " coord " << i << ": got " << g << " want " << w);
        REQUIRE(std::abs(g - w) <= rtol * std::max({std::abs(w), std::abs(g), 1e-3 * scale, 1e-12}));
    }
}

// Smallest |input| feeding any relu on the tape. Finite differences are only
// valid when no relu input sits within the probe step of its kink.
template <class Real>
double relu_margin(const Tape<Real>& tape) {
    double margin = 1e300;
    for (std::size_t i = 0; i < tape.node_count(); ++i) {
        if (tape.node_kind(i) != OpKind::relu && tape.node_kind(i) != OpKind::positive_mask) continue;
        const auto& in = tape.value(tape.node_input(i, 0));
        for (std::size_t j = 0; j < in.numel(); ++j)
            margin = std::min(margin, std::abs(static_cast<double>(in[j])));
    }
    return margin;
}

// Max-norm relative distance between two same-shaped tensors.
template <class A, class B>
double rel_linf(const TensorT<A>& a, const TensorT<B>& b) {
    REQUIRE(a.shape() == b.shape());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        num = std::max(num, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        den = std::max(den, std::abs(static_cast<double>(b[i])));
    }
    return num / std::max(den, 1e-30);
}

}  // namespace tesla::testutil
