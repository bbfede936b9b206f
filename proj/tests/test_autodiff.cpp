// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tesla/autodiff.hpp"
#include "tesla/nn.hpp"

using namespace tesla;
using tesla::testutil::check_grad_close;
using tesla::testutil::finite_diff;
using tesla::testutil::random_prob_rows;
using tesla::testutil::random_tensor;

using Tape64 = Tape<double>;
using Var64 = Var<double>;

TEST_CASE("backward of dot(w,w) gives 2w") {
    Tape64 t;
    Var64 w = t.leaf(Tensor64({2}, {1.0, 2.0}));
    Var64 loss = t.dot(w, w);
    auto g = t.backward(loss, {w});
    REQUIRE(g.size() == 1);
    CHECK(g[0][0] == 2.0);
    CHECK(g[0][1] == 4.0);
}

TEST_CASE("gradient of an unrelated variable is zero") {
    Tape64 t;
    Var64 w = t.leaf(Tensor64({2}, {1.0, 2.0}));
    Var64 v = t.leaf(Tensor64({3}, {5.0, 6.0, 7.0}));
    Var64 loss = t.dot(w, w);
    auto g = t.backward(loss, {v});
    REQUIRE(g[0].shape() == Shape{3});
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[0][i] == 0.0);
}

TEST_CASE("backward rejects non-scalar losses and foreign variables") {
    Tape64 t, other;
    Var64 w = t.leaf(Tensor64({2}, {1.0, 2.0}));
    Var64 nonscalar = t.add(w, w);
    CHECK_THROWS_AS(t.backward(nonscalar, {w}), ShapeError);
    Var64 loss = t.dot(w, w);
    Var64 foreign = other.leaf(Tensor64::scalar(1.0));
    CHECK_THROWS_AS(t.backward(loss, {foreign}), ScopeError);
}

TEST_CASE("two-layer MLP cross-entropy gradients match finite differences") {
    Rng rng(101);
    ModelArch arch;
    arch.kind = ArchKind::mlp;
    arch.depth = 2;
    arch.width = 8;
    arch.norm = NormKind::none;
    arch.classes = 3;
    arch.input = {1, 4, 5};

    Tensor64 params, X, Y;
    // reject draws whose relu inputs sit near the kink: finite differences
    // with eps=1e-3 are invalid there
    for (int attempt = 0;; ++attempt) {
        REQUIRE(attempt < 50);
        params = init_params<double>(arch, 5 + static_cast<std::uint64_t>(attempt));
        X = random_tensor<double>({3, 1, 4, 5}, rng);
        Y = random_prob_rows<double>(3, 3, rng);
        Tape64 probe;
        forward_logits(arch, probe.leaf(params), probe.leaf(X));
        if (tesla::testutil::relu_margin(probe) > 2e-2) break;
    }

    auto loss_at = [&](const Tensor64& p, const Tensor64& x) {
        Tape64 tape;
        Var64 pv = tape.leaf(p), xv = tape.leaf(x), yv = tape.leaf(Y);
        return soft_ce_loss(forward_logits(arch, pv, xv), yv).value()[0];
    };

    Tape64 tape;
    Var64 pv = tape.leaf(params), xv = tape.leaf(X), yv = tape.leaf(Y);
    Var64 loss = soft_ce_loss(forward_logits(arch, pv, xv), yv);
    auto grads = tape.backward(loss, {pv, xv});

    Tensor64 fd_p = finite_diff(params, [&](const Tensor64& p) { return loss_at(p, X); });
    Tensor64 fd_x = finite_diff(X, [&](const Tensor64& x) { return loss_at(params, x); });
    check_grad_close(grads[0], fd_p, 1e-4, "params");
    check_grad_close(grads[1], fd_x, 1e-4, "input");
}

TEST_CASE("gradient_as_graph requires grad_graph mode") {
    Tape64 t(Tape64::Mode::plain);
    Var64 w = t.leaf(Tensor64({2}, {1.0, 2.0}));
    Var64 loss = t.dot(w, w);
    CHECK_THROWS_AS(t.gradient_as_graph(loss, {w}), ScopeError);
}

TEST_CASE("bilinear case: d(v.grad_theta(theta.x))/dx = v") {
    Tape64 t(Tape64::Mode::grad_graph);
    Rng rng(7);
    Var64 theta = t.leaf(random_tensor<double>({4}, rng));
    Var64 x = t.leaf(random_tensor<double>({4}, rng));
    Var64 v = t.leaf(random_tensor<double>({4}, rng));
    Var64 loss = t.dot(theta, x);
    auto g = t.gradient_as_graph(loss, {theta});
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[0].value()[i] == x.value()[i]);
    Var64 s = t.dot(v, g[0]);
    auto gx = t.backward(s, {x});
    for (std::size_t i = 0; i < 4; ++i) CHECK(gx[0][i] == v.value()[i]);
}

TEST_CASE("elementwise quadratic: d(v.grad_theta(0.5*|theta*x|^2))/dx = 2*v*theta^2*x") {
    Tape64 t(Tape64::Mode::grad_graph);
    Rng rng(9);
    Tensor64 tv = random_tensor<double>({5}, rng), xv = random_tensor<double>({5}, rng),
             vv = random_tensor<double>({5}, rng);
    Var64 theta = t.leaf(tv), x = t.leaf(xv), v = t.leaf(vv);
    Var64 tx = t.mul(theta, x);
    Var64 loss = t.scale(t.dot(tx, tx), 0.5);
    auto g = t.gradient_as_graph(loss, {theta});
    // grad_theta = theta * x^2
    for (std::size_t i = 0; i < 5; ++i)
        CHECK_THAT(g[0].value()[i], Catch::Matchers::WithinRel(tv[i] * xv[i] * xv[i], 1e-12));
    Var64 s = t.dot(v, g[0]);
    auto gx = t.backward(s, {x});
    for (std::size_t i = 0; i < 5; ++i)
        CHECK_THAT(gx[0][i], Catch::Matchers::WithinRel(2.0 * vv[i] * tv[i] * xv[i], 1e-12));
}

TEST_CASE("second order through a tiny MLP matches finite differences of v.grad") {
    Rng rng(303);
    ModelArch arch;
    arch.kind = ArchKind::mlp;
    arch.depth = 1;
    arch.width = 4;
    arch.norm = NormKind::none;
    arch.classes = 3;
    arch.input = {1, 1, 6};

    const ParamLayout lay = layout_of(arch);
    Tensor64 params, X, Y;
    for (int attempt = 0;; ++attempt) {
        REQUIRE(attempt < 50);
        params = init_params<double>(arch, 11 + static_cast<std::uint64_t>(attempt));
        X = random_tensor<double>({2, 1, 1, 6}, rng);
        Y = random_prob_rows<double>(2, 3, rng);
        Tape64 probe;
        forward_logits(arch, probe.leaf(params), probe.leaf(X));
        if (tesla::testutil::relu_margin(probe) > 2e-2) break;
    }
    Tensor64 v = random_tensor<double>({lay.total}, rng);

    // h(x) := v . grad_theta CE(theta; x)
    auto h_at = [&](const Tensor64& x) {
        Tape64 tape;
        Var64 pv = tape.leaf(params), xv = tape.leaf(x), yv = tape.leaf(Y);
        auto g = tape.backward(soft_ce_loss(forward_logits(arch, pv, xv), yv), {pv});
        return kernels::dot64(v, g[0]);
    };

    Tape64 tape(Tape64::Mode::grad_graph);
    Var64 pv = tape.leaf(params), xv = tape.leaf(X), yv = tape.leaf(Y), vv = tape.leaf(v);
    auto g = tape.gradient_as_graph(soft_ce_loss(forward_logits(arch, pv, xv), yv), {pv});
    Var64 s = tape.dot(vv, g[0]);
    auto gx = tape.backward(s, {xv});

    Tensor64 fd = finite_diff(X, h_at);
    check_grad_close(gx[0], fd, 1e-4, "second order");
}

TEST_CASE("scope release restores live counters exactly") {
    Tape64 t;
    Var64 w = t.leaf(Tensor64({8}, {1, 2, 3, 4, 5, 6, 7, 8}));
    const std::size_t n0 = t.live_nodes(), b0 = t.live_bytes();
    auto tok = t.open_scope();
    Var64 h = w;
    for (int i = 0; i < 100; ++i) h = t.scale(h, 1.01);
    CHECK(t.live_nodes() == n0 + 100);
    t.release_scope(tok);
    CHECK(t.live_nodes() == n0);
    CHECK(t.live_bytes() == b0);
}

TEST_CASE("nested scopes restore monotonically; misuse is an error") {
    Tape64 t;
    Var64 w = t.leaf(Tensor64({4}, {1, 2, 3, 4}));
    auto outer = t.open_scope();
    t.scale(w, 2.0);
    const std::size_t mid = t.live_nodes();
    auto inner = t.open_scope();
    t.scale(w, 3.0);
    t.scale(w, 4.0);
    t.release_scope(inner);
    CHECK(t.live_nodes() == mid);
    t.release_scope(outer);
    CHECK(t.live_nodes() == 1);

    auto a = t.open_scope();
    t.scale(w, 5.0);
    auto b = t.open_scope();
    t.release_scope(a);
    CHECK_THROWS_AS(t.release_scope(b), ScopeError);  // inner outlived outer
    CHECK_THROWS_AS(t.release_scope(a), ScopeError);  // double release
}

TEST_CASE("backward cleans up its own nodes") {
    Tape64 t;
    Var64 w = t.leaf(Tensor64({3}, {1.0, -2.0, 3.0}));
    Var64 loss = t.dot(w, w);
    const std::size_t before = t.live_nodes();
    auto g = t.backward(loss, {w});
    CHECK(t.live_nodes() == before);
}

TEST_CASE("strict mode raises a numeric fault naming the op") {
    Tape64 t;
    Var64 w = t.leaf(Tensor64({2}, {-1.0, 4.0}));
    try {
        t.log(w);
        FAIL("expected NumericFault");
    } catch (const NumericFault& e) {
        CHECK(e.op_name == std::string("log"));
    }
}

TEST_CASE("finite-difference fuzz over composed graphs") {
    Rng rng(909);
    int cases = 0;
    for (int it = 0; cases < 100 && it < 400; ++it) {
        ModelArch arch;
        const bool conv = rng.coin();
        arch.kind = conv ? ArchKind::convnet : ArchKind::mlp;
        arch.depth = conv ? 1 + static_cast<int>(rng.below(2)) : 1 + static_cast<int>(rng.below(3));
        arch.width = 3 + static_cast<int>(rng.below(5));
        arch.norm = (conv && rng.coin()) ? NormKind::instance : NormKind::none;
        arch.classes = 2 + static_cast<int>(rng.below(3));
        arch.input = conv ? std::array<std::size_t, 3>{1 + rng.below(2), 8, 8}
                          : std::array<std::size_t, 3>{1, 2, 3 + rng.below(4)};
        const std::size_t batch = 1 + rng.below(3);

        Tensor64 params = init_params<double>(arch, rng.next_u64());
        Tensor64 X = random_tensor<double>({batch, arch.input[0], arch.input[1], arch.input[2]}, rng);
        Tensor64 Y = random_prob_rows<double>(batch, static_cast<std::size_t>(arch.classes), rng);

        auto loss_at = [&](const Tensor64& x) {
            Tape64 tape;
            Var64 pv = tape.leaf(params), xv = tape.leaf(x), yv = tape.leaf(Y);
            return soft_ce_loss(forward_logits(arch, pv, xv), yv).value()[0];
        };

        Tape64 tape;
        Var64 pv = tape.leaf(params), xv = tape.leaf(X), yv = tape.leaf(Y);
        auto grads = tape.backward(soft_ce_loss(forward_logits(arch, pv, xv), yv), {xv});
        if (tesla::testutil::relu_margin(tape) <= 2e-2) continue;  // kink too close for fd
        Tensor64 fd = finite_diff(X, loss_at);
        check_grad_close(grads[0], fd, 1e-4, "fuzz case " + std::to_string(it));
        ++cases;
    }
    CHECK(cases == 100);
}

TEST_CASE("finite differences through the remaining primitive ops") {
    Rng rng(555);
    // div, sqrt, exp, log, translate, flip, mul_mask, gather, slices, pools
    Tensor64 x0 = random_tensor<double>({2, 1, 4, 4}, rng, 0.5, 2.0);
    std::vector<std::uint32_t> idx{1, 0, 1};
    Tensor64 mask = random_tensor<double>({3, 1, 4, 4}, rng, 0.0, 1.0);

    auto f = [&](const Tensor64& x) {
        Tape<double> t;
        Var64 xv = t.leaf(x);
        Var64 g = t.gather_rows(xv, idx);
        Var64 a = t.flip_h(g, true);
        Var64 b = t.translate(a, 1, -1);
        Var64 c = t.mul_mask(b, mask);
        Var64 d = t.sqrt(t.add_scalar(c, 2.0));
        Var64 e = t.div(d, t.add_scalar(c, 3.0));
        Var64 p = t.avgpool2x2(e);
        Var64 u = t.unpool2x2(p);
        Var64 l = t.log(t.add_scalar(t.exp(t.scale(u, 0.3)), 1.0));
        return t.sum_all(l).value()[0];
    };

    Tape<double> t;
    Var64 xv = t.leaf(x0);
    Var64 g = t.gather_rows(xv, idx);
    Var64 a = t.flip_h(g, true);
    Var64 b = t.translate(a, 1, -1);
    Var64 c = t.mul_mask(b, mask);
    Var64 d = t.sqrt(t.add_scalar(c, 2.0));
    Var64 e = t.div(d, t.add_scalar(c, 3.0));
    Var64 p = t.avgpool2x2(e);
    Var64 u = t.unpool2x2(p);
    Var64 l = t.log(t.add_scalar(t.exp(t.scale(u, 0.3)), 1.0));
    auto grads = t.backward(t.sum_all(l), {xv});

    Tensor64 fd = finite_diff(x0, f, 1e-4);
    check_grad_close(grads[0], fd, 1e-4, "primitive chain");
}

TEST_CASE("gradient evaluation is bit-identical across repeats") {
    Rng rng(77);
    ModelArch arch;
    arch.kind = ArchKind::convnet;
    arch.depth = 2;
    arch.width = 4;
    arch.norm = NormKind::instance;
    arch.classes = 3;
    arch.input = {2, 8, 8};
    Tensor params = init_params<float>(arch, 3);
    Tensor X = random_tensor<float>({2, 2, 8, 8}, rng);
    Tensor Y = random_prob_rows<float>(2, 3, rng);

    auto run = [&]() {
        Tape<float> tape;
        auto pv = tape.leaf(params);
        auto xv = tape.leaf(X);
        auto yv = tape.leaf(Y);
        auto g = tape.backward(soft_ce_loss(forward_logits(arch, pv, xv), yv), {pv, xv});
        return std::pair{checksum(g[0]), checksum(g[1])};
    };
    auto r1 = run(), r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}
