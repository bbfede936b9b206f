// SPDX-License-Identifier: Apache-2.0
//
// Teacher training on real data with epoch-granular checkpoints, the
// trajectory file format, the on-disk store, and matching-segment sampling.
//
// Trajectory file layout:
//   magic "TESLATRJ" | u32 version=1 | length-prefixed UTF-8 arch descriptor
//   | u32 checkpoint count | per checkpoint: u32 epoch, u64 param count,
//   raw little-endian f32 in canonical layer order | u64 FNV-1a checksum of
//   everything after the magic.
// Training configuration and final accuracy live in the store manifest, not
// in the binary file.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "tesla/augment.hpp"
#include "tesla/common.hpp"
#include "tesla/data.hpp"
#include "tesla/nn.hpp"
#include "tesla/serial.hpp"

namespace tesla {

struct TeacherConfig {
    int epochs = 5;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    AugPolicy policy;
};

struct Trajectory {
    std::string arch;  // descriptor string
    std::vector<std::pair<int, Tensor>> checkpoints;  // (epoch, flat params), epoch 0 first
    TeacherConfig config;                             // manifest metadata
    double final_test_accuracy = std::numeric_limits<double>::quiet_NaN();

    int epochs() const { return checkpoints.empty() ? 0 : checkpoints.back().first; }

    const Tensor& at_epoch(int e) const {
        for (const auto& [ep, p] : checkpoints)
            if (ep == e) return p;
        throw ConfigError("trajectory has no checkpoint for epoch " + std::to_string(e));
    }
};

// Classification accuracy of flat params on a dataset, evaluated in chunks.
inline double accuracy(const ModelArch& arch, const Tensor& params, const LabeledDataset& data) {
    const std::size_t n = data.size();
    const std::size_t chunk = 256;
    std::size_t hits = 0;
    for (std::size_t at = 0; at < n; at += chunk) {
        const std::size_t m = std::min(chunk, n - at);
        std::vector<std::uint32_t> idx(m);
        for (std::size_t i = 0; i < m; ++i) idx[i] = static_cast<std::uint32_t>(at + i);
        Tensor batch = kernels::gather_rows(data.images, idx);
        Tensor logits = forward_logits_value(arch, params, batch);
        const auto classes = static_cast<std::size_t>(data.classes);
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < classes; ++c)
                if (logits[i * classes + c] > logits[i * classes + best]) best = c;
            if (static_cast<int>(best) == data.labels[at + i]) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// Plain SGD (+momentum) with augmentation; one checkpoint per epoch boundary
// plus epoch 0. Deterministic per seed.
inline Trajectory train_teacher(const LabeledDataset& data, const ModelArch& arch, const TeacherConfig& cfg,
                                const LabeledDataset* test = nullptr) {
    if (cfg.epochs < 1) throw ConfigError("train_teacher: epochs must be >= 1");
    if (static_cast<std::size_t>(arch.classes) != static_cast<std::size_t>(data.classes))
        throw ConfigError("train_teacher: arch classes do not match dataset");

    Trajectory traj;
    traj.arch = arch.descriptor();
    traj.config = cfg;

    Tensor params = init_params<float>(arch, mix_seed(cfg.seed, fnv1a64("teacher-init")));
    Tensor velocity = Tensor::zeros(params.shape());
    traj.checkpoints.emplace_back(0, params);

    const std::size_t n = data.size();
    const std::size_t B = std::min(cfg.batch_size, n);
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);

    Tape<float> tape;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng(mix_seed(cfg.seed, fnv1a64("teacher-epoch"), static_cast<std::uint64_t>(epoch)));
        erng.shuffle(order.begin(), order.end());
        std::size_t batch_index = 0;
        for (std::size_t at = 0; at < n; at += B, ++batch_index) {
            const std::size_t m = std::min(B, n - at);
            std::vector<std::uint32_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                           order.begin() + static_cast<std::ptrdiff_t>(at + m));
            std::vector<int> yb(m);
            for (std::size_t i = 0; i < m; ++i) yb[i] = data.labels[idx[i]];
            try {
                TapeScope scope(tape);
                auto pv = tape.leaf(params);
                auto xv = tape.leaf(kernels::gather_rows(data.images, idx));
                auto xa = augment(xv, cfg.policy,
                                  mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), batch_index));
                auto yv = tape.leaf(one_hot_rows<float>(yb, arch.classes));
                auto loss = soft_ce_loss(forward_logits(arch, pv, xa), yv);
                auto g = tape.backward(loss, {pv});
                for (std::size_t i = 0; i < params.numel(); ++i) {
                    velocity[i] = static_cast<float>(cfg.momentum) * velocity[i] + g[0][i];
                    params[i] -= static_cast<float>(cfg.lr) * velocity[i];
                }
            } catch (const NumericFault& e) {
                throw NumericFault("teacher training diverged at epoch " + std::to_string(epoch) + " (" +
                                   e.op_name + ")");
            }
        }
        traj.checkpoints.emplace_back(epoch + 1, params);
    }
    if (test != nullptr) traj.final_test_accuracy = accuracy(arch, params, *test);
    return traj;
}

// ----------------------------- file io -----------------------------

inline void save_trajectory(const Trajectory& t, const std::string& path) {
    ByteWriter w;
    w.raw("TESLATRJ", 8);
    w.u32(1);
    w.str(t.arch);
    w.u32(static_cast<std::uint32_t>(t.checkpoints.size()));
    for (const auto& [epoch, params] : t.checkpoints) {
        w.u32(static_cast<std::uint32_t>(epoch));
        w.u64(params.numel());
        w.raw(params.data(), params.bytes());
    }
    const std::uint64_t sum = fnv1a64(w.bytes().data() + 8, w.size() - 8);
    w.u64(sum);
    write_file_bytes(path, w.bytes());
}

inline Trajectory load_trajectory(const std::string& path, const std::string& expected_arch = "") {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes, "trajectory file");
    char magic[8];
    r.raw(magic, 8);
    if (std::string(magic, 8) != "TESLATRJ") throw IoError("trajectory file: bad magic");
    if (r.u32() != 1) throw IoError("trajectory file: unsupported version");
    if (bytes.size() < 16) throw IoError("trajectory file: truncated payload");
    const std::uint64_t stored = [&] {
        ByteReader tail(bytes.data() + bytes.size() - 8, 8, "trajectory checksum");
        return tail.u64();
    }();
    const std::uint64_t computed = fnv1a64(bytes.data() + 8, bytes.size() - 16);
    if (stored != computed) throw IoError("trajectory file: checksum mismatch");

    Trajectory t;
    t.arch = r.str();
    if (!expected_arch.empty() && t.arch != expected_arch)
        throw IoError("trajectory file: arch '" + t.arch + "' does not match expected '" + expected_arch + "'");
    const std::uint32_t count = r.u32();
    std::size_t param_count = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t epoch = r.u32();
        const std::uint64_t len = r.u64();
        if (i == 0)
            param_count = len;
        else if (len != param_count)
            throw IoError("trajectory file: inconsistent parameter counts");
        Tensor params({len});
        r.raw(params.data(), params.bytes());
        t.checkpoints.emplace_back(static_cast<int>(epoch), std::move(params));
    }
    if (t.checkpoints.empty() || t.checkpoints.front().first != 0)
        throw IoError("trajectory file: missing epoch 0 checkpoint");
    for (std::size_t i = 1; i < t.checkpoints.size(); ++i)
        if (t.checkpoints[i].first <= t.checkpoints[i - 1].first)
            throw IoError("trajectory file: epochs not sorted");
    return t;
}

// ----------------------------- store -----------------------------

struct DegeneratePair {
    int trajectory = 0;
    int t0 = 0;
    int t1 = 0;
};

struct TrajectoryStore {
    std::string dir;
    std::string arch;
    std::uint64_t dataset_fingerprint = 0;
    std::vector<Trajectory> trajectories;
    std::vector<DegeneratePair> degenerate_pairs;

    int min_epochs() const {
        int e = trajectories.empty() ? 0 : trajectories.front().epochs();
        for (const auto& t : trajectories) e = std::min(e, t.epochs());
        return e;
    }
};

namespace detail {

inline nlohmann::json teacher_config_json(const TeacherConfig& c) {
    nlohmann::json j;
    j["epochs"] = c.epochs;
    j["lr"] = c.lr;
    j["momentum"] = c.momentum;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    return j;
}

inline void teacher_config_from_json(const nlohmann::json& j, TeacherConfig& c) {
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
}

inline void scan_degenerate_pairs(TrajectoryStore& store) {
    store.degenerate_pairs.clear();
    for (std::size_t ti = 0; ti < store.trajectories.size(); ++ti) {
        const auto& cps = store.trajectories[ti].checkpoints;
        for (std::size_t a = 0; a < cps.size(); ++a)
            for (std::size_t b = a + 1; b < cps.size(); ++b) {
                const Tensor diff = kernels::sub(cps[b].second, cps[a].second);
                if (kernels::dot64(diff, diff) <= 1e-12)
                    store.degenerate_pairs.push_back(
                        {static_cast<int>(ti), cps[a].first, cps[b].first});
            }
    }
}

}  // namespace detail

// Train `count` teachers (seeds base_seed..base_seed+count-1) in parallel and
// persist them with a manifest.
inline TrajectoryStore build_store(const std::string& dir, const LabeledDataset& data,
                                   const ModelArch& arch, int count, const TeacherConfig& base,
                                   const LabeledDataset* test = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    TrajectoryStore store;
    store.dir = dir;
    store.arch = arch.descriptor();
    store.dataset_fingerprint = data.fingerprint();
    store.trajectories.resize(static_cast<std::size_t>(count));

    const std::size_t workers = std::min<std::size_t>(thread_cap(), static_cast<std::size_t>(count));
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (;;) {
                    const int i = next.fetch_add(1);
                    if (i >= count) return;
                    TeacherConfig cfg = base;
                    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
                    store.trajectories[static_cast<std::size_t>(i)] = train_teacher(data, arch, cfg, test);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    detail::scan_degenerate_pairs(store);

    nlohmann::json manifest;
    manifest["arch"] = store.arch;
    manifest["dataset_fingerprint"] = store.dataset_fingerprint;
    manifest["count"] = count;
    manifest["files"] = nlohmann::json::array();
    for (int i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "traj_%03d.bin", i);
        save_trajectory(store.trajectories[static_cast<std::size_t>(i)], dir + "/" + name);
        nlohmann::json entry;
        entry["file"] = name;
        entry["config"] = detail::teacher_config_json(store.trajectories[static_cast<std::size_t>(i)].config);
        entry["final_test_accuracy"] = store.trajectories[static_cast<std::size_t>(i)].final_test_accuracy;
        manifest["files"].push_back(entry);
    }
    manifest["degenerate_pairs"] = nlohmann::json::array();
    for (const auto& d : store.degenerate_pairs)
        manifest["degenerate_pairs"].push_back({{"trajectory", d.trajectory}, {"t0", d.t0}, {"t1", d.t1}});

    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot write manifest in '" + dir + "'");
    mf << manifest.dump(2) << "\n";
    return store;
}

inline TrajectoryStore load_store(const std::string& dir, std::uint64_t expected_fingerprint = 0) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("no manifest in '" + dir + "'");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest parse failure: " + std::string(e.what()));
    }

    TrajectoryStore store;
    store.dir = dir;
    store.arch = manifest.at("arch").get<std::string>();
    store.dataset_fingerprint = manifest.at("dataset_fingerprint").get<std::uint64_t>();
    if (expected_fingerprint != 0 && store.dataset_fingerprint != expected_fingerprint)
        throw IoError("store dataset fingerprint mismatch");

    const auto& files = manifest.at("files");
    if (files.size() != manifest.at("count").get<std::size_t>())
        throw IoError("manifest count does not match file list");
    for (const auto& entry : files) {
        Trajectory t = load_trajectory(dir + "/" + entry.at("file").get<std::string>(), store.arch);
        detail::teacher_config_from_json(entry.at("config"), t.config);
        const auto& acc = entry.at("final_test_accuracy");
        t.final_test_accuracy =
            acc.is_number() ? acc.get<double>() : std::numeric_limits<double>::quiet_NaN();
        store.trajectories.push_back(std::move(t));
    }
    if (store.trajectories.empty()) throw IoError("store is empty");
    detail::scan_degenerate_pairs(store);
    return store;
}

// ----------------------------- segment sampling -----------------------------

struct Segment {
    const Tensor* start = nullptr;   // theta*_t
    const Tensor* target = nullptr;  // theta*_{t+M}
    int trajectory = 0;
    int t = 0;
};

// Uniform over (trajectory, start epoch t in [0, max_start_epoch]).
inline Segment sample_segment(const TrajectoryStore& store, int max_start_epoch, int M, Rng& rng) {
    if (store.trajectories.empty()) throw ConfigError("sample_segment: empty store");
    if (M < 1) throw ConfigError("sample_segment: M must be >= 1");
    if (max_start_epoch + M > store.min_epochs())
        throw ConfigError("sample_segment: max_start_epoch + M exceeds trajectory epochs (" +
                          std::to_string(max_start_epoch) + "+" + std::to_string(M) + " > " +
                          std::to_string(store.min_epochs()) + ")");
    const std::uint64_t span = static_cast<std::uint64_t>(max_start_epoch) + 1;
    const std::uint64_t pick = rng.below(store.trajectories.size() * span);
    const auto ti = static_cast<std::size_t>(pick / span);
    const int t = static_cast<int>(pick % span);
    Segment s;
    s.trajectory = static_cast<int>(ti);
    s.t = t;
    s.start = &store.trajectories[ti].at_epoch(t);
    s.target = &store.trajectories[ti].at_epoch(t + M);
    return s;
}

}  // namespace tesla
