// SPDX-License-Identifier: Apache-2.0
//
// The distillation engine. The matching loss
//
//   L = |theta_hat_{t+T} - theta*_{t+M}|^2 / |theta*_t - theta*_{t+M}|^2
//
// decomposes as (C + 2 beta (theta*_{t+M}-theta*_t) . G + beta^2 |G|^2) / C
// with G the accumulated student gradient. Loop 1 runs the student unroll and
// accumulates G with every per-step graph released immediately; loop 2
// replays the same steps, rebuilds each step's gradient as a differentiable
// graph, forms the scalar (2 beta D + 2 beta^2 G) . g_i, differentiates it to
// the batch pixels, scatters into per-image slots, and releases the graph.
// At most one per-batch graph is ever alive, so peak memory is a function of
// the batch size and architecture only, not of T.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tesla/augment.hpp"
#include "tesla/autodiff.hpp"
#include "tesla/common.hpp"
#include "tesla/data.hpp"
#include "tesla/nn.hpp"
#include "tesla/tensor.hpp"
#include "tesla/trajectory.hpp"

namespace tesla {

constexpr double kDenominatorEps = 1e-12;

enum class LabelMode : std::uint8_t { hard, sla_target, sla_last_epoch, learned_logits };

inline const char* label_mode_name(LabelMode m) {
    switch (m) {
        case LabelMode::hard: return "hard";
        case LabelMode::sla_target: return "sla_target";
        case LabelMode::sla_last_epoch: return "sla_last_epoch";
        case LabelMode::learned_logits: return "learned_logits";
    }
    return "?";
}

inline LabelMode label_mode_from(const std::string& s) {
    if (s == "hard") return LabelMode::hard;
    if (s == "sla_target") return LabelMode::sla_target;
    if (s == "sla_last_epoch") return LabelMode::sla_last_epoch;
    if (s == "learned_logits") return LabelMode::learned_logits;
    throw ConfigError("unknown label mode '" + s + "'");
}

enum class InitMode : std::uint8_t { real_sample, noise };

template <class Real>
struct SyntheticDatasetT {
    TensorT<Real> images;  // (n, C, H, W)
    LabelMode mode = LabelMode::sla_target;
    TensorT<Real> labels;  // (n, classes) probability rows
    TensorT<Real> logits;  // (n, classes), learned_logits mode only
    std::vector<int> base_labels;  // class of each row
    double beta = 0.01;
    bool learn_beta = false;
    int classes = 0;
    int ipc = 0;
    std::string zca_ref;

    std::size_t size() const { return base_labels.size(); }

    template <class Other>
    SyntheticDatasetT<Other> cast() const {
        SyntheticDatasetT<Other> o;
        o.images = images.template cast<Other>();
        o.mode = mode;
        o.labels = labels.template cast<Other>();
        o.logits = logits.template cast<Other>();
        o.base_labels = base_labels;
        o.beta = beta;
        o.learn_beta = learn_beta;
        o.classes = classes;
        o.ipc = ipc;
        o.zca_ref = zca_ref;
        return o;
    }
};

using SyntheticDataset = SyntheticDatasetT<float>;

// ----------------------------- batch plan -----------------------------

struct BatchPlan {
    std::size_t n = 0;
    std::size_t B = 0;
    int T = 0;
    std::vector<std::uint32_t> pi;  // (T, B) row-major: step i, slot b -> image index

    std::uint32_t at(int i, std::size_t b) const { return pi[static_cast<std::size_t>(i) * B + b]; }
    std::vector<std::uint32_t> row(int i) const {
        return {pi.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i) * B),
                pi.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(i + 1) * B)};
    }
};

// Slots filled by cycling a reshuffled permutation of [0, n). Every image
// appears floor(TB/n) or ceil(TB/n) times.
inline BatchPlan make_batch_plan(std::size_t n, std::size_t B, int T, Rng& rng) {
    if (n < 1) throw ConfigError("make_batch_plan: empty synthetic set");
    BatchPlan plan;
    plan.n = n;
    plan.B = B;
    plan.T = T;
    plan.pi.reserve(static_cast<std::size_t>(T) * B);
    std::vector<std::uint32_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
    std::size_t pos = n;  // trigger reshuffle on first use
    for (std::size_t k = 0; k < static_cast<std::size_t>(T) * B; ++k) {
        if (pos == n) {
            rng.shuffle(perm.begin(), perm.end());
            pos = 0;
        }
        plan.pi.push_back(perm[pos++]);
    }
    return plan;
}

// ----------------------------- loss decomposition -----------------------------

template <class Real>
struct LossDecompositionT {
    double C = 0.0;          // |theta*_t - theta*_{t+M}|^2
    double linear = 0.0;     // 2 beta (theta*_{t+M} - theta*_t) . G
    double quadratic = 0.0;  // beta^2 |G|^2
    double denominator = 0.0;
    TensorT<Real> G;

    double reconstruction() const { return C + linear + quadratic; }
    double normalized_loss() const { return reconstruction() / denominator; }
};

template <class Real>
LossDecompositionT<Real> make_decomposition(const TensorT<Real>& theta_start, const TensorT<Real>& theta_target,
                                            const TensorT<Real>& G, double beta) {
    const TensorT<Real> delta = kernels::sub(theta_target, theta_start);
    LossDecompositionT<Real> d;
    d.C = kernels::dot64(delta, delta);
    d.denominator = d.C;
    d.linear = 2.0 * beta * kernels::dot64(delta, G);
    d.quadratic = beta * beta * kernels::dot64(G, G);
    d.G = G;
    return d;
}

// Relative residual of the decomposition identity against the directly
// computed endpoint distance.
template <class Real>
double decomposition_residual(const LossDecompositionT<Real>& d, const TensorT<Real>& theta_hat_T,
                              const TensorT<Real>& theta_target) {
    const TensorT<Real> diff = kernels::sub(theta_hat_T, theta_target);
    const double direct = kernels::dot64(diff, diff);
    return std::abs(d.reconstruction() - direct) / std::max(std::abs(direct), 1e-30);
}

// ----------------------------- soft label assignment -----------------------------

enum class SlaSource : std::uint8_t { target_step, last_epoch };

// Row-wise softmax of the teacher's logits on the synthetic images; no
// gradient is retained into the teacher.
template <class Real>
TensorT<Real> assign_soft_labels(const ModelArch& arch, const TensorT<Real>& teacher_params,
                                 const TensorT<Real>& images) {
    if (teacher_params.numel() != layout_of(arch).total)
        throw ShapeError("assign_soft_labels: teacher parameter count does not match arch");
    return kernels::softmax(forward_logits_value(arch, teacher_params, images));
}

// ----------------------------- synthetic init -----------------------------

template <class Real>
SyntheticDatasetT<Real> init_synthetic(const LabeledDataset& real, int ipc, InitMode mode, std::uint64_t seed) {
    if (ipc < 1) throw ConfigError("init_synthetic: ipc must be >= 1");
    const int classes = real.classes;
    const std::size_t C = real.images.dim(1), H = real.images.dim(2), W = real.images.dim(3);
    const std::size_t n = static_cast<std::size_t>(classes) * static_cast<std::size_t>(ipc);

    SyntheticDatasetT<Real> s;
    s.images = TensorT<Real>({n, C, H, W});
    s.classes = classes;
    s.ipc = ipc;
    s.base_labels.resize(n);

    const std::size_t d = C * H * W;
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c) {
        std::vector<std::uint32_t> pool;
        for (std::size_t i = 0; i < real.size(); ++i)
            if (real.labels[i] == c) pool.push_back(static_cast<std::uint32_t>(i));
        if (mode == InitMode::real_sample && pool.size() < static_cast<std::size_t>(ipc))
            throw ConfigError("init_synthetic: class " + std::to_string(c) + " has " +
                              std::to_string(pool.size()) + " images, need " + std::to_string(ipc));
        Rng rng(mix_seed(seed, fnv1a64("init-synthetic"), static_cast<std::uint64_t>(c)));
        rng.shuffle(pool.begin(), pool.end());
        for (int k = 0; k < ipc; ++k, ++row) {
            s.base_labels[row] = c;
            Real* dst = s.images.data() + row * d;
            if (mode == InitMode::real_sample) {
                const float* src = real.images.data() + pool[static_cast<std::size_t>(k)] * d;
                for (std::size_t i = 0; i < d; ++i) dst[i] = static_cast<Real>(src[i]);
            } else {
                for (std::size_t i = 0; i < d; ++i) dst[i] = static_cast<Real>(rng.normal());
            }
        }
    }
    s.labels = one_hot_rows<Real>(s.base_labels, classes);
    s.logits = TensorT<Real>({n, static_cast<std::size_t>(classes)});
    return s;
}

// Pre-softmax logits start at 10 on the class index and 0 elsewhere, so the
// initial probabilities are near one-hot.
template <class Real>
void init_learned_logits(SyntheticDatasetT<Real>& s) {
    s.logits = TensorT<Real>({s.size(), static_cast<std::size_t>(s.classes)});
    for (std::size_t i = 0; i < s.size(); ++i)
        s.logits[i * static_cast<std::size_t>(s.classes) + static_cast<std::size_t>(s.base_labels[i])] = Real(10);
    s.labels = kernels::softmax(s.logits);
}

template <class Real>
void learned_labels_step(SyntheticDatasetT<Real>& s, const TensorT<Real>& logit_grads, double lr) {
    if (s.mode != LabelMode::learned_logits) throw ConfigError("learned_labels_step: label mode is not learned");
    if (!logit_grads.same_shape(s.logits)) throw ShapeError("learned_labels_step: gradient shape mismatch");
    for (std::size_t i = 0; i < s.logits.numel(); ++i)
        s.logits[i] -= static_cast<Real>(lr) * logit_grads[i];
    s.labels = kernels::softmax(s.logits);
}

// ----------------------------- shared step graph -----------------------------

namespace detail {

template <class Real>
struct StepGraph {
    Var<Real> loss;
    Var<Real> theta_leaf;
    Var<Real> batch_leaf;   // pre-augmentation pixels of this batch
    Var<Real> logits_leaf;  // learned_logits mode only
    bool has_logits_leaf = false;
};

// One matching step's loss graph. Both unroll loops and both oracles go
// through here, so replayed values are bit-identical by construction.
template <class Real>
StepGraph<Real> build_step(Tape<Real>& tape, const ModelArch& arch, const TensorT<Real>& theta,
                           const SyntheticDatasetT<Real>& synthetic, const std::vector<std::uint32_t>& row,
                           const AugPolicy& policy, std::uint64_t step_seed) {
    StepGraph<Real> sg;
    sg.batch_leaf = tape.leaf(kernels::gather_rows(synthetic.images, row));
    Var<Real> xa = augment(sg.batch_leaf, policy, step_seed);
    sg.theta_leaf = tape.leaf(theta);
    Var<Real> logits = forward_logits(arch, sg.theta_leaf, xa);
    Var<Real> targets;
    if (synthetic.mode == LabelMode::learned_logits) {
        sg.logits_leaf = tape.leaf(synthetic.logits);
        sg.has_logits_leaf = true;
        targets = tape.gather_rows(softmax_rows(sg.logits_leaf), row);
    } else {
        targets = tape.leaf(kernels::gather_rows(synthetic.labels, row));
    }
    sg.loss = soft_ce_loss(logits, targets);
    return sg;
}

}  // namespace detail

// ----------------------------- loop 1: student unroll -----------------------------

template <class Real>
struct UnrollResult {
    TensorT<Real> theta_hat;  // theta_hat_{t+T}
    TensorT<Real> G;          // sum of per-step gradients
    std::vector<std::uint64_t> checksums;  // per-step g_i, for loop-2 replay verification
};

// Plain SGD on augmented synthetic batches. No computation graph survives a
// step; intermediate parameters are not stored (loop 2 recomputes them by
// deterministic replay).
template <class Real>
UnrollResult<Real> student_unroll(const ModelArch& arch, const TensorT<Real>& theta_start,
                                  const SyntheticDatasetT<Real>& synthetic, const BatchPlan& plan, double beta,
                                  const AugPolicy& policy, std::uint64_t seed) {
    UnrollResult<Real> out;
    out.theta_hat = theta_start;
    out.G = TensorT<Real>::zeros(theta_start.shape());
    out.checksums.reserve(static_cast<std::size_t>(plan.T));

    Tape<Real> tape;
    for (int i = 0; i < plan.T; ++i) {
        try {
            TapeScope<Real> scope(tape);
            auto sg = detail::build_step(tape, arch, out.theta_hat, synthetic, plan.row(i), policy,
                                         mix_seed(seed, static_cast<std::uint64_t>(i)));
            TensorT<Real> g = tape.backward(sg.loss, {sg.theta_leaf})[0];
            out.checksums.push_back(checksum(g));
            const Real b = static_cast<Real>(beta);
            for (std::size_t j = 0; j < g.numel(); ++j) {
                out.theta_hat[j] -= b * g[j];
                out.G[j] += g[j];
            }
        } catch (const NumericFault& e) {
            throw NumericFault("student_unroll step " + std::to_string(i) + " (" + e.op_name + ")");
        }
    }
    return out;
}

// ----------------------------- loop 2: constant-memory gradient -----------------------------

template <class Real>
struct TeslaGrad {
    TensorT<Real> image_grads;        // (n,C,H,W), normalized by the denominator
    TensorT<Real> label_logit_grads;  // (n,classes) in learned_logits mode
    double beta_grad = 0.0;
    double loss = 0.0;  // normalized matching loss
    LossDecompositionT<Real> decomposition;
    std::size_t peak_nodes = 0;
    std::size_t peak_bytes = 0;
};

// Replays the unroll under the same plan and seeds; each step recomputes g_i
// in gradient-as-graph mode, forms (2 beta D + 2 beta^2 G) . g_i,
// differentiates that scalar to the batch pixels, accumulates into per-image
// slots, and releases the step's graph.
template <class Real>
TeslaGrad<Real> tesla_grad(const ModelArch& arch, const TensorT<Real>& theta_start,
                           const TensorT<Real>& theta_target, const SyntheticDatasetT<Real>& synthetic,
                           const BatchPlan& plan, double beta, const AugPolicy& policy, std::uint64_t seed,
                           const UnrollResult<Real>& loop1) {
    if (loop1.checksums.size() != static_cast<std::size_t>(plan.T))
        throw ConfigError("tesla_grad: loop-1 result does not cover the plan");

    TeslaGrad<Real> out;
    out.decomposition = make_decomposition(theta_start, theta_target, loop1.G, beta);
    if (out.decomposition.denominator < kDenominatorEps)
        throw DegenerateSegment("denominator " + std::to_string(out.decomposition.denominator));
    const double C = out.decomposition.denominator;
    out.loss = out.decomposition.normalized_loss();

    const TensorT<Real> delta = kernels::sub(theta_target, theta_start);
    // v = (2 beta D + 2 beta^2 G) / C; the only cross-batch term, constant
    // here. Folding the normalizer in up front keeps the per-image slot
    // accumulation a pure sum of per-slot gradients.
    const TensorT<Real> v = kernels::add(kernels::scale(delta, 2.0 * beta / C),
                                         kernels::scale(loop1.G, 2.0 * beta * beta / C));

    out.image_grads = TensorT<Real>::zeros(synthetic.images.shape());
    const bool learned = synthetic.mode == LabelMode::learned_logits;
    if (learned) out.label_logit_grads = TensorT<Real>::zeros(synthetic.logits.shape());

    Tape<Real> tape(Tape<Real>::Mode::grad_graph);
    Var<Real> v_leaf = tape.leaf(v);
    TensorT<Real> theta = theta_start;
    const std::size_t stride = synthetic.images.numel() / synthetic.size();

    for (int i = 0; i < plan.T; ++i) {
        const auto row = plan.row(i);
        TapeScope<Real> scope(tape);
        auto sg = detail::build_step(tape, arch, theta, synthetic, row, policy,
                                     mix_seed(seed, static_cast<std::uint64_t>(i)));
        Var<Real> g_var = tape.gradient_as_graph(sg.loss, {sg.theta_leaf})[0];
        if (checksum(g_var.value()) != loop1.checksums[i])
            throw DeterminismFault("loop-2 gradient differs from loop-1 at step " + std::to_string(i));

        Var<Real> s = tape.dot(v_leaf, g_var);
        std::vector<Var<Real>> wrt{sg.batch_leaf};
        if (learned) wrt.push_back(sg.logits_leaf);
        auto grads = tape.backward(s, wrt);

        for (std::size_t b = 0; b < plan.B; ++b) {
            Real* dst = out.image_grads.data() + row[b] * stride;
            const Real* src = grads[0].data() + b * stride;
            for (std::size_t j = 0; j < stride; ++j) dst[j] += src[j];
        }
        if (learned)
            for (std::size_t j = 0; j < out.label_logit_grads.numel(); ++j)
                out.label_logit_grads[j] += grads[1][j];

        const Real b = static_cast<Real>(beta);
        const TensorT<Real>& g = g_var.value();
        for (std::size_t j = 0; j < theta.numel(); ++j) theta[j] -= b * g[j];
        scope.release();
    }

    if (synthetic.learn_beta)
        out.beta_grad =
            (2.0 * kernels::dot64(delta, loop1.G) + 2.0 * beta * kernels::dot64(loop1.G, loop1.G)) / C;
    out.peak_nodes = tape.peak_nodes();
    out.peak_bytes = tape.peak_bytes();
    return out;
}

// ----------------------------- outer loop -----------------------------

struct DistillConfig {
    int matching_steps = 10;  // T
    int segment_epochs = 2;   // M
    int iterations = 200;     // K
    std::size_t batch_size = 0;  // B; 0 means the whole synthetic set
    int max_start_epoch = 0;
    int ipc = 1;
    InitMode init = InitMode::real_sample;
    double image_lr = 100.0;  // alpha
    double image_momentum = 0.5;
    bool learn_beta = true;
    double beta_init = 0.01;
    double beta_lr = 1e-4;
    LabelMode label_mode = LabelMode::sla_target;
    double label_lr = 1.0;
    AugPolicy policy;
    std::uint64_t seed = 0;
    int eval_every = 0;  // 0: no snapshots

    void validate(std::size_t n_synthetic) const {
        if (matching_steps < 1) throw ConfigError("matching_steps must be >= 1");
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (segment_epochs < 1) throw ConfigError("segment_epochs must be >= 1");
        if (batch_size > n_synthetic)
            throw ConfigError("batch_size " + std::to_string(batch_size) + " exceeds synthetic set size " +
                              std::to_string(n_synthetic));
        if (beta_init <= 0.0) throw ConfigError("beta_init must be > 0");
        policy.validate();
    }
};

struct RunRecord {
    int iteration = 0;
    double loss = 0.0;
    double beta = 0.0;
    double grad_norm = 0.0;
    int segment_trajectory = 0;
    int segment_t = 0;
    std::size_t peak_nodes = 0;
    std::size_t peak_bytes = 0;
    double decomposition_residual = 0.0;
    bool degenerate = false;
};

template <class Real>
struct DistillResult {
    SyntheticDatasetT<Real> synthetic;
    std::vector<RunRecord> log;
    std::vector<double> beta_trace;
    int degenerate_count = 0;
};

template <class Real>
using EvalHook = std::function<void(int iteration, const SyntheticDatasetT<Real>&)>;

// K iterations of: sample segment -> assign labels -> batch plan -> student
// unroll -> constant-memory gradient -> momentum update of the images (and
// beta / label logits when learned).
template <class Real>
DistillResult<Real> distill(const DistillConfig& cfg, const TrajectoryStore& store,
                            const LabeledDataset& real, EvalHook<Real> hook = nullptr) {
    const ModelArch arch = ModelArch::parse(store.arch);
    if (arch.classes != real.classes) throw ConfigError("distill: store arch classes do not match dataset");

    DistillResult<Real> res;
    res.synthetic = init_synthetic<Real>(real, cfg.ipc, cfg.init, cfg.seed);
    res.synthetic.mode = cfg.label_mode;
    res.synthetic.beta = cfg.beta_init;
    res.synthetic.learn_beta = cfg.learn_beta;
    if (cfg.label_mode == LabelMode::learned_logits) init_learned_logits(res.synthetic);

    cfg.validate(res.synthetic.size());
    const std::size_t n = res.synthetic.size();
    const std::size_t B = cfg.batch_size == 0 ? n : cfg.batch_size;

    TensorT<Real> img_velocity = TensorT<Real>::zeros(res.synthetic.images.shape());

    for (int k = 0; k < cfg.iterations; ++k) {
        const std::uint64_t iter_seed = mix_seed(cfg.seed, fnv1a64("iteration"), static_cast<std::uint64_t>(k));
        Rng seg_rng(mix_seed(iter_seed, fnv1a64("segment")));
        const Segment seg = sample_segment(store, cfg.max_start_epoch, cfg.segment_epochs, seg_rng);

        // soft label assignment happens inside the loop, every iteration
        switch (cfg.label_mode) {
            case LabelMode::sla_target:
                res.synthetic.labels =
                    assign_soft_labels(arch, seg.target->template cast<Real>(), res.synthetic.images);
                break;
            case LabelMode::sla_last_epoch: {
                const Tensor& last = store.trajectories[static_cast<std::size_t>(seg.trajectory)]
                                         .checkpoints.back()
                                         .second;
                res.synthetic.labels = assign_soft_labels(arch, last.template cast<Real>(), res.synthetic.images);
                break;
            }
            case LabelMode::hard:
            case LabelMode::learned_logits:
                break;  // hard: fixed one-hot; learned: refreshed on update
        }

        Rng plan_rng(mix_seed(iter_seed, fnv1a64("plan")));
        const BatchPlan plan = make_batch_plan(n, B, cfg.matching_steps, plan_rng);
        const std::uint64_t step_seed = mix_seed(iter_seed, fnv1a64("steps"));

        RunRecord rec;
        rec.iteration = k;
        rec.beta = res.synthetic.beta;
        rec.segment_trajectory = seg.trajectory;
        rec.segment_t = seg.t;

        const TensorT<Real> theta_start = seg.start->template cast<Real>();
        const TensorT<Real> theta_target = seg.target->template cast<Real>();

        try {
            auto loop1 = student_unroll(arch, theta_start, res.synthetic, plan, res.synthetic.beta,
                                        cfg.policy, step_seed);
            auto grad = tesla_grad(arch, theta_start, theta_target, res.synthetic, plan, res.synthetic.beta,
                                   cfg.policy, step_seed, loop1);

            rec.decomposition_residual = decomposition_residual(grad.decomposition, loop1.theta_hat, theta_target);
            if (rec.decomposition_residual > 1e-5)
                throw NumericFault("decomposition identity residual " + std::to_string(rec.decomposition_residual) +
                                   " at iteration " + std::to_string(k));

            rec.loss = grad.loss;
            rec.grad_norm = std::sqrt(kernels::dot64(grad.image_grads, grad.image_grads));
            rec.peak_nodes = grad.peak_nodes;
            rec.peak_bytes = grad.peak_bytes;

            const Real mu = static_cast<Real>(cfg.image_momentum);
            const Real alpha = static_cast<Real>(cfg.image_lr);
            for (std::size_t j = 0; j < img_velocity.numel(); ++j) {
                img_velocity[j] = mu * img_velocity[j] + grad.image_grads[j];
                res.synthetic.images[j] -= alpha * img_velocity[j];
            }
            ensure_finite(res.synthetic.images, ("image update at iteration " + std::to_string(k)).c_str());

            if (cfg.learn_beta) {
                res.synthetic.beta -= cfg.beta_lr * grad.beta_grad;
                res.synthetic.beta = std::max(res.synthetic.beta, 1e-8);  // beta stays positive
            }
            if (cfg.label_mode == LabelMode::learned_logits)
                learned_labels_step(res.synthetic, grad.label_logit_grads, cfg.label_lr);
        } catch (const DegenerateSegment&) {
            rec.degenerate = true;
            ++res.degenerate_count;
            if (res.degenerate_count * 10 > cfg.iterations)
                throw DegenerateSegment("more than 10% of iterations degenerate (" +
                                        std::to_string(res.degenerate_count) + " of " + std::to_string(k + 1) +
                                        "); teacher segments carry no matching signal");
        }

        res.beta_trace.push_back(res.synthetic.beta);
        res.log.push_back(rec);
        if (hook && cfg.eval_every > 0 && (k + 1) % cfg.eval_every == 0) hook(k + 1, res.synthetic);
    }
    return res;
}

}  // namespace tesla
