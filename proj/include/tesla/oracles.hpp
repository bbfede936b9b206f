// SPDX-License-Identifier: Apache-2.0
//
// Reference gradient routes for verifying the constant-memory engine, both
// built as one monolithic retained graph (memory grows with T, so tiny
// instances only).
//
//   detached_unroll_oracle: differentiates
//       [C + 2 beta D . sum_i g_i + beta^2 |sum_i g_i|^2] / C
//   with every g_i's parameter argument detached -- exactly the quantity the
//   per-batch decomposition computes, through a completely different path.
//
//   full_unroll_oracle: the true gradient of the matching loss through the
//   entire trajectory, with intermediate parameters kept differentiable so
//   the cross-step dependence is included.

#pragma once

#include <cstdint>
#include <vector>

#include "tesla/distill.hpp"

namespace tesla {

template <class Real>
struct OracleResult {
    TensorT<Real> image_grads;  // dL/dX for the whole synthetic set
    double loss = 0.0;
    std::size_t peak_nodes = 0;
    std::size_t peak_bytes = 0;
};

namespace detail {

template <class Real>
struct OracleStep {
    Var<Real> loss;
    Var<Real> logits_leaf;
    bool has_logits_leaf = false;
};

// One step's loss with the batch gathered on-tape from the full image
// variable, so gradients accumulate into per-image slots through the graph.
template <class Real>
OracleStep<Real> oracle_step(Tape<Real>& tape, const ModelArch& arch, Var<Real> images, Var<Real> theta,
                             const SyntheticDatasetT<Real>& synthetic, const std::vector<std::uint32_t>& row,
                             const AugPolicy& policy, std::uint64_t step_seed) {
    OracleStep<Real> os;
    Var<Real> batch = tape.gather_rows(images, row);
    Var<Real> xa = augment(batch, policy, step_seed);
    Var<Real> logits = forward_logits(arch, theta, xa);
    Var<Real> targets;
    if (synthetic.mode == LabelMode::learned_logits) {
        os.logits_leaf = tape.leaf(synthetic.logits);
        os.has_logits_leaf = true;
        targets = tape.gather_rows(softmax_rows(os.logits_leaf), row);
    } else {
        targets = tape.leaf(kernels::gather_rows(synthetic.labels, row));
    }
    os.loss = soft_ce_loss(logits, targets);
    return os;
}

}  // namespace detail

template <class Real>
OracleResult<Real> detached_unroll_oracle(const ModelArch& arch, const TensorT<Real>& theta_start,
                                          const TensorT<Real>& theta_target,
                                          const SyntheticDatasetT<Real>& synthetic, const BatchPlan& plan,
                                          double beta, const AugPolicy& policy, std::uint64_t seed) {
    const TensorT<Real> delta = kernels::sub(theta_target, theta_start);
    const double C = kernels::dot64(delta, delta);
    if (C < kDenominatorEps) throw DegenerateSegment("denominator " + std::to_string(C));

    Tape<Real> tape(Tape<Real>::Mode::grad_graph);
    Var<Real> images = tape.leaf(synthetic.images);
    Var<Real> delta_leaf = tape.leaf(delta);

    TensorT<Real> theta = theta_start;
    Var<Real> G;
    for (int i = 0; i < plan.T; ++i) {
        Var<Real> theta_leaf = tape.leaf(theta);  // detached parameter iterate
        auto os = detail::oracle_step(tape, arch, images, theta_leaf, synthetic, plan.row(i), policy,
                                      mix_seed(seed, static_cast<std::uint64_t>(i)));
        Var<Real> g = tape.gradient_as_graph(os.loss, {theta_leaf})[0];
        G = (i == 0) ? g : tape.add(G, g);
        const Real b = static_cast<Real>(beta);
        const TensorT<Real>& gv = g.value();
        for (std::size_t j = 0; j < theta.numel(); ++j) theta[j] -= b * gv[j];
    }

    Var<Real> loss = tape.scale(
        tape.add_scalar(
            tape.add(tape.scale(tape.dot(delta_leaf, G), 2.0 * beta), tape.scale(tape.dot(G, G), beta * beta)),
            C),
        1.0 / C);

    OracleResult<Real> out;
    out.loss = static_cast<double>(loss.value()[0]);
    out.image_grads = tape.backward(loss, {images})[0];
    out.peak_nodes = tape.peak_nodes();
    out.peak_bytes = tape.peak_bytes();
    return out;
}

template <class Real>
OracleResult<Real> full_unroll_oracle(const ModelArch& arch, const TensorT<Real>& theta_start,
                                      const TensorT<Real>& theta_target,
                                      const SyntheticDatasetT<Real>& synthetic, const BatchPlan& plan,
                                      double beta, const AugPolicy& policy, std::uint64_t seed) {
    const TensorT<Real> delta = kernels::sub(theta_target, theta_start);
    const double C = kernels::dot64(delta, delta);
    if (C < kDenominatorEps) throw DegenerateSegment("denominator " + std::to_string(C));

    Tape<Real> tape(Tape<Real>::Mode::grad_graph);
    Var<Real> images = tape.leaf(synthetic.images);

    Var<Real> theta = tape.leaf(theta_start);
    for (int i = 0; i < plan.T; ++i) {
        auto os = detail::oracle_step(tape, arch, images, theta, synthetic, plan.row(i), policy,
                                      mix_seed(seed, static_cast<std::uint64_t>(i)));
        Var<Real> g = tape.gradient_as_graph(os.loss, {theta})[0];
        theta = tape.sub(theta, tape.scale(g, beta));
    }

    Var<Real> diff = tape.sub(theta, tape.leaf(theta_target));
    Var<Real> loss = tape.scale(tape.dot(diff, diff), 1.0 / C);

    OracleResult<Real> out;
    out.loss = static_cast<double>(loss.value()[0]);
    out.image_grads = tape.backward(loss, {images})[0];
    out.peak_nodes = tape.peak_nodes();
    out.peak_bytes = tape.peak_bytes();
    return out;
}

}  // namespace tesla
