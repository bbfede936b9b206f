// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tesla/nn.hpp"

using namespace tesla;
using tesla::testutil::random_prob_rows;
using tesla::testutil::random_tensor;
namespace k = tesla::kernels;

TEST_CASE("init_params is deterministic per seed") {
    ModelArch arch;
    arch.depth = 2;
    arch.width = 8;
    arch.classes = 4;
    arch.input = {1, 8, 8};
    Tensor a = init_params<float>(arch, 42);
    Tensor b = init_params<float>(arch, 42);
    CHECK(checksum(a) == checksum(b));
    Tensor c = init_params<float>(arch, 43);
    CHECK(checksum(a) != checksum(c));
}

TEST_CASE("bias and norm slices start at their constants") {
    ModelArch arch;
    arch.depth = 1;
    arch.width = 4;
    arch.norm = NormKind::instance;
    arch.classes = 3;
    arch.input = {1, 4, 4};
    Tensor p = init_params<float>(arch, 1);
    const ParamLayout lay = layout_of(arch);
    for (const auto& s : lay.slices) {
        if (s.fan_in > 0) continue;
        for (std::size_t i = 0; i < s.len; ++i) {
            INFO(s.name);
            REQUIRE(p[s.offset + i] == static_cast<float>(s.init));
        }
    }
}

TEST_CASE("weight variance is close to 2/fan_in") {
    ModelArch arch;
    arch.kind = ArchKind::mlp;
    arch.depth = 1;
    arch.width = 100;
    arch.norm = NormKind::none;
    arch.classes = 3;
    arch.input = {1, 10, 10};  // 100 x 100 = 10k weights in the first layer
    Tensor p = init_params<float>(arch, 7);
    const ParamLayout lay = layout_of(arch);
    const auto& w = lay.slices[0];
    REQUIRE(w.len == 10000);
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < w.len; ++i) mean += p[w.offset + i];
    mean /= static_cast<double>(w.len);
    for (std::size_t i = 0; i < w.len; ++i) {
        const double d = p[w.offset + i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(w.len);
    const double want = 2.0 / static_cast<double>(w.fan_in);
    CHECK(std::abs(var - want) <= 0.1 * want);
}

TEST_CASE("all-zero params with norm=none give all-zero logits") {
    ModelArch arch;
    arch.depth = 2;
    arch.width = 6;
    arch.norm = NormKind::none;
    arch.classes = 5;
    arch.input = {2, 8, 8};
    const ParamLayout lay = layout_of(arch);
    Tensor zeros({lay.total});
    Rng rng(3);
    Tensor X = random_tensor<float>({3, 2, 8, 8}, rng);
    Tensor logits = forward_logits_value(arch, zeros, X);
    REQUIRE(logits.shape() == Shape{3, 5});
    for (std::size_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.0f);
}

TEST_CASE("identical input rows give identical logit rows") {
    ModelArch arch;
    arch.depth = 1;
    arch.width = 4;
    arch.norm = NormKind::instance;
    arch.classes = 3;
    arch.input = {1, 8, 8};
    Tensor p = init_params<float>(arch, 9);
    Rng rng(5);
    Tensor one = random_tensor<float>({1, 1, 8, 8}, rng);
    Tensor X({3, 1, 8, 8});
    for (int r = 0; r < 3; ++r) std::copy(one.data(), one.data() + 64, X.data() + r * 64);
    Tensor logits = forward_logits_value(arch, p, X);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(logits[0 * 3 + j] == logits[1 * 3 + j]);
        CHECK(logits[1 * 3 + j] == logits[2 * 3 + j]);
    }
}

namespace {

// Brute-force scalar evaluation of a single-block convnet (norm=none),
// written with independent loops.
std::vector<double> reference_single_block(const ModelArch& arch, const Tensor& p, const Tensor& X) {
    const std::size_t C = arch.input[0], H = arch.input[1], W = arch.input[2];
    const auto F = static_cast<std::size_t>(arch.width);
    const auto classes = static_cast<std::size_t>(arch.classes);
    const std::size_t N = X.dim(0);
    const std::size_t wlen = F * C * 9;
    const double* pw = nullptr;
    std::vector<double> pd(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) pd[i] = p[i];
    pw = pd.data();
    const double* pb = pw + wlen;
    const double* fcw = pb + F;
    const double* fcb = fcw + (F * (H / 2) * (W / 2)) * classes;

    std::vector<double> out(N * classes, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> conv(F * H * W, 0.0);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j) {
                    double acc = pb[f];
                    for (std::size_t c = 0; c < C; ++c)
                        for (int di = -1; di <= 1; ++di)
                            for (int dj = -1; dj <= 1; ++dj) {
                                const int si = static_cast<int>(i) + di, sj = static_cast<int>(j) + dj;
                                if (si < 0 || si >= static_cast<int>(H) || sj < 0 || sj >= static_cast<int>(W))
                                    continue;
                                acc += pw[((f * C + c) * 3 + static_cast<std::size_t>(di + 1)) * 3 +
                                          static_cast<std::size_t>(dj + 1)] *
                                       static_cast<double>(
                                           X[((n * C + c) * H + static_cast<std::size_t>(si)) * W +
                                             static_cast<std::size_t>(sj)]);
                            }
                    conv[(f * H + i) * W + j] = acc > 0.0 ? acc : 0.0;  // relu
                }
        const std::size_t Ho = H / 2, Wo = W / 2;
        std::vector<double> pooled(F * Ho * Wo);
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j)
                    pooled[(f * Ho + i) * Wo + j] =
                        (conv[(f * H + 2 * i) * W + 2 * j] + conv[(f * H + 2 * i) * W + 2 * j + 1] +
                         conv[(f * H + 2 * i + 1) * W + 2 * j] + conv[(f * H + 2 * i + 1) * W + 2 * j + 1]) /
                        4.0;
        for (std::size_t cl = 0; cl < classes; ++cl) {
            double acc = fcb[cl];
            for (std::size_t d = 0; d < pooled.size(); ++d) acc += pooled[d] * fcw[d * classes + cl];
            out[n * classes + cl] = acc;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("single-block convnet matches a brute-force reference") {
    ModelArch arch;
    arch.depth = 1;
    arch.width = 3;
    arch.norm = NormKind::none;
    arch.classes = 4;
    arch.input = {2, 8, 8};
    Tensor p = init_params<float>(arch, 21);
    Rng rng(22);
    Tensor X = random_tensor<float>({2, 2, 8, 8}, rng);
    Tensor logits = forward_logits_value(arch, p, X);
    auto want = reference_single_block(arch, p, X);
    for (std::size_t i = 0; i < logits.numel(); ++i)
        REQUIRE_THAT(static_cast<double>(logits[i]), Catch::Matchers::WithinAbs(want[i], 1e-5));
}

TEST_CASE("uniform logits with a one-hot target give ln(classes)") {
    Tape<double> t;
    auto logits = t.leaf(Tensor64::zeros({1, 10}));
    Tensor64 y({1, 10});
    y[3] = 1.0;
    auto loss = soft_ce_loss(logits, t.leaf(y));
    CHECK_THAT(loss.value()[0], Catch::Matchers::WithinRel(std::log(10.0), 1e-12));
}

TEST_CASE("targets equal to softmax(logits) give the entropy") {
    Rng rng(33);
    Tape<double> t;
    Tensor64 lg = random_tensor<double>({4, 6}, rng, -2.0, 2.0);
    Tensor64 sm = k::softmax(lg);
    auto loss = soft_ce_loss(t.leaf(lg), t.leaf(sm));
    double want = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) want -= sm[i * 6 + j] * std::log(sm[i * 6 + j]);
    want /= 4.0;
    CHECK_THAT(loss.value()[0], Catch::Matchers::WithinRel(want, 1e-10));
}

TEST_CASE("soft_ce_loss against a 64-bit scalar loop") {
    Rng rng(35);
    Tensor lg = random_tensor<float>({5, 7}, rng, -3.0, 3.0);
    Tensor y = random_prob_rows<float>(5, 7, rng);
    Tape<float> t;
    auto loss = soft_ce_loss(t.leaf(lg), t.leaf(y));
    double want = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        double m = lg[i * 7];
        for (std::size_t j = 1; j < 7; ++j) m = std::max(m, static_cast<double>(lg[i * 7 + j]));
        double se = 0.0;
        for (std::size_t j = 0; j < 7; ++j) se += std::exp(static_cast<double>(lg[i * 7 + j]) - m);
        const double lse = m + std::log(se);
        for (std::size_t j = 0; j < 7; ++j)
            want -= static_cast<double>(y[i * 7 + j]) * (static_cast<double>(lg[i * 7 + j]) - lse);
    }
    want /= 5.0;
    CHECK_THAT(static_cast<double>(loss.value()[0]), Catch::Matchers::WithinAbs(want, 1e-6));
}

TEST_CASE("malformed target rows are rejected") {
    Tape<float> t;
    auto logits = t.leaf(Tensor::zeros({2, 3}));
    Tensor bad_sum({2, 3}, {0.5f, 0.2f, 0.2f, 0.3f, 0.3f, 0.4f});
    CHECK_THROWS_AS(soft_ce_loss(logits, t.leaf(bad_sum)), ShapeError);
    Tensor neg({2, 3}, {1.2f, -0.2f, 0.0f, 1.0f, 0.0f, 0.0f});
    CHECK_THROWS_AS(soft_ce_loss(logits, t.leaf(neg)), ShapeError);
}

TEST_CASE("gradient of soft CE in logits is (softmax - targets)/batch") {
    Rng rng(39);
    const std::size_t N = 4, C = 5;
    Tensor64 lg = random_tensor<double>({N, C}, rng, -2.0, 2.0);
    Tensor64 y = random_prob_rows<double>(N, C, rng);
    Tape<double> t;
    auto lv = t.leaf(lg);
    auto loss = soft_ce_loss(lv, t.leaf(y));
    auto g = t.backward(loss, {lv});
    Tensor64 sm = k::softmax(lg);
    for (std::size_t i = 0; i < N * C; ++i)
        REQUIRE_THAT(g[0][i], Catch::Matchers::WithinAbs((sm[i] - y[i]) / static_cast<double>(N), 1e-5));
}

TEST_CASE("parameter round trip across an arch grid") {
    for (ArchKind kind : {ArchKind::convnet, ArchKind::mlp})
        for (int depth : {1, 2, 3})
            for (NormKind norm : {NormKind::instance, NormKind::none}) {
                ModelArch arch;
                arch.kind = kind;
                arch.depth = depth;
                arch.width = 5;
                arch.norm = norm;
                arch.classes = 3;
                arch.input = {1, 8, 8};
                const ParamLayout lay = layout_of(arch);
                Tensor p = init_params<float>(arch, 77);
                auto parts = unflatten(lay, p);
                Tensor back = flatten(lay, parts);
                INFO(arch.descriptor());
                REQUIRE(checksum(back) == checksum(p));
            }
}

TEST_CASE("instance norm on constant spatial input yields zeros pre-affine") {
    Tape<float> t;
    Tensor x = Tensor::full({2, 3, 4, 4}, 2.5f);
    auto xv = t.leaf(x);
    const std::size_t H = 4, W = 4;
    auto mu = t.scale(t.sum_hw(xv), 1.0 / 16.0);
    auto d = t.sub(xv, t.bcast_hw(mu, H, W));
    auto var = t.scale(t.sum_hw(t.mul(d, d)), 1.0 / 16.0);
    auto rs = t.sqrt(t.add_scalar(var, kInstanceNormEps));
    auto y = t.div(d, t.bcast_hw(rs, H, W));
    for (std::size_t i = 0; i < y.value().numel(); ++i) CHECK(y.value()[i] == 0.0f);
    // plain kernel agrees
    Tensor yk = k::instance_normalize(x, kInstanceNormEps);
    for (std::size_t i = 0; i < yk.numel(); ++i) CHECK(yk[i] == 0.0f);
}

TEST_CASE("tape instance norm composite matches the plain kernel") {
    Rng rng(51);
    Tensor x = random_tensor<float>({2, 2, 4, 4}, rng, -2.0, 2.0);
    Tape<float> t;
    auto xv = t.leaf(x);
    auto mu = t.scale(t.sum_hw(xv), 1.0 / 16.0);
    auto d = t.sub(xv, t.bcast_hw(mu, 4, 4));
    auto var = t.scale(t.sum_hw(t.mul(d, d)), 1.0 / 16.0);
    auto rs = t.sqrt(t.add_scalar(var, 1e-5));
    auto y = t.div(d, t.bcast_hw(rs, 4, 4));
    Tensor yk = k::instance_normalize(x, 1e-5);
    for (std::size_t i = 0; i < yk.numel(); ++i)
        REQUIRE_THAT(y.value()[i], Catch::Matchers::WithinAbs(yk[i], 1e-5f));
}

TEST_CASE("arch descriptor round trip") {
    ModelArch a;
    a.kind = ArchKind::mlp;
    a.depth = 4;
    a.width = 64;
    a.norm = NormKind::none;
    a.classes = 17;
    a.input = {3, 16, 16};
    ModelArch b = ModelArch::parse(a.descriptor());
    CHECK(a == b);
    CHECK_THROWS_AS(ModelArch::parse("resnet;d=3"), ConfigError);
}

TEST_CASE("forward rejects shape mismatches") {
    ModelArch arch;
    arch.depth = 1;
    arch.width = 4;
    arch.classes = 3;
    arch.input = {1, 8, 8};
    Tensor p = init_params<float>(arch, 1);
    Tape<float> t;
    auto pv = t.leaf(p);
    auto bad = t.leaf(Tensor::zeros({2, 3, 8, 8}));
    CHECK_THROWS_AS(forward_logits(arch, pv, bad), ShapeError);
    auto short_p = t.leaf(Tensor::zeros({10}));
    auto good = t.leaf(Tensor::zeros({2, 1, 8, 8}));
    CHECK_THROWS_AS(forward_logits(arch, short_p, good), ShapeError);
}
