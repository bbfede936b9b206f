// SPDX-License-Identifier: Apache-2.0
//
// Evaluation protocol (five randomly initialized models trained on the
// synthetic set, mean and std of real-test accuracy), cross-architecture
// transfer, and the memory/runtime benchmark comparing the constant-memory
// gradient against the fully unrolled one.

#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "tesla/distill.hpp"
#include "tesla/oracles.hpp"
#include "tesla/trajectory.hpp"

namespace tesla {

struct EvalConfig {
    int train_steps = 300;
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 256;
    AugPolicy policy;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

struct EvalReport {
    std::vector<double> accuracies;
    double mean = 0.0;
    double stddev = 0.0;
    std::string arch;
    int train_steps = 0;
    double lr = 0.0;
    std::uint64_t synthetic_hash = 0;

    void recompute() {
        mean = 0.0;
        for (double a : accuracies) mean += a;
        mean /= static_cast<double>(accuracies.size());
        double var = 0.0;
        for (double a : accuracies) var += (a - mean) * (a - mean);
        stddev = std::sqrt(var / static_cast<double>(accuracies.size()));
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["accuracies"] = accuracies;
        j["mean"] = mean;
        j["stddev"] = stddev;
        j["arch"] = arch;
        j["train_steps"] = train_steps;
        j["lr"] = lr;
        j["synthetic_hash"] = synthetic_hash;
        return j;
    }
};

template <class Real>
std::uint64_t synthetic_hash(const SyntheticDatasetT<Real>& s) {
    std::uint64_t h = fnv1a64(s.images.data(), s.images.bytes());
    h = fnv1a64(s.labels.data(), s.labels.bytes(), h);
    const double b = s.beta;
    return fnv1a64(&b, sizeof b, h);
}

// Train one model from scratch on (images, labels) and return its test accuracy.
inline double train_and_score(const SyntheticDataset& synthetic, const ModelArch& arch, const EvalConfig& cfg,
                              std::uint64_t seed, const LabeledDataset& test) {
    const std::size_t n = synthetic.size();
    const std::size_t B = std::min(cfg.batch_size, n);
    Tensor params = init_params<float>(arch, mix_seed(seed, fnv1a64("eval-init")));
    Tensor velocity = Tensor::zeros(params.shape());

    Rng rng(mix_seed(seed, fnv1a64("eval-plan")));
    const BatchPlan plan = make_batch_plan(n, B, cfg.train_steps, rng);

    Tape<float> tape;
    for (int step = 0; step < cfg.train_steps; ++step) {
        const auto row = plan.row(step);
        TapeScope<float> scope(tape);
        auto pv = tape.leaf(params);
        auto xv = tape.leaf(kernels::gather_rows(synthetic.images, row));
        auto xa = augment(xv, cfg.policy, mix_seed(seed, fnv1a64("eval-aug"), static_cast<std::uint64_t>(step)));
        auto yv = tape.leaf(kernels::gather_rows(synthetic.labels, row));
        try {
            auto loss = soft_ce_loss(forward_logits(arch, pv, xa), yv);
            auto g = tape.backward(loss, {pv});
            for (std::size_t j = 0; j < params.numel(); ++j) {
                velocity[j] = static_cast<float>(cfg.momentum) * velocity[j] + g[0][j];
                params[j] -= static_cast<float>(cfg.lr) * velocity[j];
            }
        } catch (const NumericFault&) {
            // divergence is recorded as the accuracy this model achieved
            break;
        }
    }
    return accuracy(arch, params, test);
}

// Five (or however many seeds) models trained concurrently on independent
// tapes; aggregation order is fixed by seed order.
inline EvalReport evaluate_synthetic(const SyntheticDataset& synthetic, const ModelArch& arch,
                                     const EvalConfig& cfg, const LabeledDataset& test) {
    if (synthetic.size() == 0) throw ConfigError("evaluate_synthetic: empty synthetic set");
    if (arch.input[0] != synthetic.images.dim(1) || arch.input[1] != synthetic.images.dim(2) ||
        arch.input[2] != synthetic.images.dim(3))
        throw ShapeError("evaluate_synthetic: arch input shape does not match synthetic images");
    if (arch.classes != synthetic.classes)
        throw ShapeError("evaluate_synthetic: arch classes do not match synthetic set");

    EvalReport rep;
    rep.arch = arch.descriptor();
    rep.train_steps = cfg.train_steps;
    rep.lr = cfg.lr;
    rep.synthetic_hash = synthetic_hash(synthetic);
    rep.accuracies.assign(cfg.seeds.size(), 0.0);

    const std::size_t workers = std::min(thread_cap(), cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= cfg.seeds.size()) return;
                    rep.accuracies[i] = train_and_score(synthetic, arch, cfg, cfg.seeds[i], test);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    rep.recompute();
    return rep;
}

inline std::vector<EvalReport> cross_arch_eval(const SyntheticDataset& synthetic,
                                               const std::vector<ModelArch>& archs, const EvalConfig& cfg,
                                               const LabeledDataset& test) {
    for (const auto& a : archs)
        if (a.input[0] != synthetic.images.dim(1) || a.input[1] != synthetic.images.dim(2) ||
            a.input[2] != synthetic.images.dim(3))
            throw ShapeError("cross_arch_eval: arch " + a.descriptor() + " rejected: input shape mismatch");
    std::vector<EvalReport> out;
    out.reserve(archs.size());
    for (const auto& a : archs) out.push_back(evaluate_synthetic(synthetic, a, cfg, test));
    return out;
}

// ----------------------------- memory/runtime bench -----------------------------

struct BenchRecord {
    std::string mode;  // "tesla" | "full_unroll"
    int T = 0;
    std::size_t B = 0;
    std::size_t peak_nodes = 0;
    std::size_t peak_bytes = 0;
    double ms_per_iter = 0.0;
};

struct BenchSummary {
    double full_slope = 0.0;  // nodes per matching step
    double full_r2 = 0.0;
    std::size_t tesla_node_spread = 0;  // max - min over the sweep
    std::size_t tesla_byte_spread = 0;
    bool full_truncated = false;
};

struct BenchFixture {
    ModelArch arch;
    SyntheticDataset synthetic;
    Tensor theta_start;
    Tensor theta_target;
    double beta = 0.01;
    AugPolicy policy;
    std::uint64_t seed = 0;
    std::size_t batch = 2;
};

// The tiny reference fixture: MLP 20 -> 8 -> 3, six synthetic images,
// batches of two, no normalization.
inline BenchFixture make_tiny_fixture(std::uint64_t seed, bool with_augmentation = false) {
    BenchFixture f;
    f.arch.kind = ArchKind::mlp;
    f.arch.depth = 1;
    f.arch.width = 8;
    f.arch.norm = NormKind::none;
    f.arch.classes = 3;
    f.arch.input = {1, 4, 5};
    f.seed = seed;
    f.batch = 2;
    f.beta = 0.01;

    Rng rng(mix_seed(seed, fnv1a64("tiny-fixture")));
    f.synthetic.images = Tensor({6, 1, 4, 5});
    for (std::size_t i = 0; i < f.synthetic.images.numel(); ++i)
        f.synthetic.images[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    f.synthetic.classes = 3;
    f.synthetic.ipc = 2;
    f.synthetic.base_labels = {0, 0, 1, 1, 2, 2};
    f.synthetic.mode = LabelMode::hard;
    f.synthetic.labels = Tensor({6, 3});
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = rng.uniform(0.05, 1.0);
            f.synthetic.labels[i * 3 + c] = static_cast<float>(v);
            sum += v;
        }
        for (std::size_t c = 0; c < 3; ++c)
            f.synthetic.labels[i * 3 + c] = static_cast<float>(f.synthetic.labels[i * 3 + c] / sum);
    }
    f.synthetic.logits = Tensor({6, 3});
    f.synthetic.beta = f.beta;

    f.theta_start = init_params<float>(f.arch, mix_seed(seed, fnv1a64("theta-start")));
    f.theta_target = init_params<float>(f.arch, mix_seed(seed, fnv1a64("theta-target")));
    if (with_augmentation)
        f.policy.transforms = {{AugKind::translate, 1.0}, {AugKind::brightness, 0.2}};
    return f;
}

inline std::vector<BenchRecord> bench_memory_runtime(const BenchFixture& fixture, const std::vector<int>& t_sweep,
                                                     const std::vector<std::string>& modes,
                                                     BenchSummary* summary = nullptr) {
    std::vector<BenchRecord> records;
    bool full_truncated = false;
    for (const auto& mode : modes) {
        if (mode != "tesla" && mode != "full_unroll") throw ConfigError("bench: unknown mode '" + mode + "'");
        for (int T : t_sweep) {
            Rng prng(mix_seed(fixture.seed, fnv1a64("bench-plan"), static_cast<std::uint64_t>(T)));
            const BatchPlan plan = make_batch_plan(fixture.synthetic.size(), fixture.batch, T, prng);
            BenchRecord rec;
            rec.mode = mode;
            rec.T = T;
            rec.B = fixture.batch;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (mode == "tesla") {
                    auto loop1 = student_unroll(fixture.arch, fixture.theta_start, fixture.synthetic, plan,
                                                fixture.beta, fixture.policy, fixture.seed);
                    auto grad = tesla_grad(fixture.arch, fixture.theta_start, fixture.theta_target,
                                           fixture.synthetic, plan, fixture.beta, fixture.policy, fixture.seed,
                                           loop1);
                    rec.peak_nodes = grad.peak_nodes;
                    rec.peak_bytes = grad.peak_bytes;
                } else {
                    auto res = full_unroll_oracle(fixture.arch, fixture.theta_start, fixture.theta_target,
                                                  fixture.synthetic, plan, fixture.beta, fixture.policy,
                                                  fixture.seed);
                    rec.peak_nodes = res.peak_nodes;
                    rec.peak_bytes = res.peak_bytes;
                }
            } catch (const std::bad_alloc&) {
                full_truncated = true;
                break;  // truncated sweep, not a crash
            }
            const auto t1 = std::chrono::steady_clock::now();
            rec.ms_per_iter = std::chrono::duration<double, std::milli>(t1 - t0).count();
            records.push_back(std::move(rec));
        }
    }

    if (summary != nullptr) {
        *summary = BenchSummary{};
        summary->full_truncated = full_truncated;
        std::vector<double> xs, ys;
        std::size_t tn_min = SIZE_MAX, tn_max = 0, tb_min = SIZE_MAX, tb_max = 0;
        bool any_tesla = false;
        for (const auto& r : records) {
            if (r.mode == "full_unroll") {
                xs.push_back(static_cast<double>(r.T));
                ys.push_back(static_cast<double>(r.peak_nodes));
            } else {
                any_tesla = true;
                tn_min = std::min(tn_min, r.peak_nodes);
                tn_max = std::max(tn_max, r.peak_nodes);
                tb_min = std::min(tb_min, r.peak_bytes);
                tb_max = std::max(tb_max, r.peak_bytes);
            }
        }
        if (any_tesla) {
            summary->tesla_node_spread = tn_max - tn_min;
            summary->tesla_byte_spread = tb_max - tb_min;
        }
        if (xs.size() >= 2) {
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            const double n = static_cast<double>(xs.size());
            for (std::size_t i = 0; i < xs.size(); ++i) {
                sx += xs[i];
                sy += ys[i];
                sxx += xs[i] * xs[i];
                sxy += xs[i] * ys[i];
            }
            const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            const double intercept = (sy - slope * sx) / n;
            double ss_res = 0, ss_tot = 0;
            const double ymean = sy / n;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                const double fit = slope * xs[i] + intercept;
                ss_res += (ys[i] - fit) * (ys[i] - fit);
                ss_tot += (ys[i] - ymean) * (ys[i] - ymean);
            }
            summary->full_slope = slope;
            summary->full_r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
        }
    }
    return records;
}

inline std::string bench_csv(const std::vector<BenchRecord>& records) {
    std::ostringstream os;
    os << "mode,T,B,peak_nodes,peak_bytes,ms_per_iter\n";
    for (const auto& r : records)
        os << r.mode << "," << r.T << "," << r.B << "," << r.peak_nodes << "," << r.peak_bytes << ","
           << r.ms_per_iter << "\n";
    return os.str();
}

}  // namespace tesla
