// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion (IDX and CIFAR binary formats, byte-exact), a Gaussian
// blobs generator for desk-scale experiments, and ZCA whitening.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tesla/common.hpp"
#include "tesla/serial.hpp"
#include "tesla/tensor.hpp"

namespace tesla {

struct LabeledDataset {
    Tensor images;  // (N,C,H,W), values in [0,1] before preprocessing
    std::vector<int> labels;
    int classes = 0;
    std::string split;  // "train" | "test"
    std::string provenance;
    std::vector<std::size_t> class_counts;

    std::size_t size() const { return labels.size(); }

    void finalize() {
        if (labels.empty()) throw IoError(provenance + ": empty dataset");
        if (images.rank() != 4 || images.dim(0) != labels.size())
            throw ShapeError(provenance + ": image/label count mismatch");
        class_counts.assign(static_cast<std::size_t>(classes), 0);
        for (int l : labels) {
            if (l < 0 || l >= classes) throw IoError(provenance + ": label out of range");
            ++class_counts[static_cast<std::size_t>(l)];
        }
    }

    std::uint64_t fingerprint() const {
        std::uint64_t h = fnv1a64(images.data(), images.bytes());
        h = fnv1a64(labels.data(), labels.size() * sizeof(int), h);
        const auto c = static_cast<std::uint64_t>(classes);
        return fnv1a64(&c, sizeof c, h);
    }
};

// ----------------------------- IDX (MNIST family) -----------------------------

inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ibytes = read_file_bytes(images_path);
    const auto lbytes = read_file_bytes(labels_path);
    ByteReader ir(ibytes, "idx images");
    ByteReader lr(lbytes, "idx labels");

    if (ir.u32_be() != 0x00000803u) throw IoError("idx images: bad magic");
    const std::uint32_t n = ir.u32_be(), rows = ir.u32_be(), cols = ir.u32_be();
    if (lr.u32_be() != 0x00000801u) throw IoError("idx labels: bad magic");
    const std::uint32_t ln = lr.u32_be();
    if (n != ln) throw IoError("idx: image/label count mismatch");
    if (n == 0 || rows == 0 || cols == 0) throw IoError("idx images: empty dimensions");

    // validate sizes against the actual payload before allocating anything
    const std::uint64_t want = static_cast<std::uint64_t>(n) * rows * cols;
    if (ir.remaining() < want) throw IoError("idx images: truncated payload");
    if (ir.remaining() > want) throw IoError("idx images: trailing bytes");
    if (lr.remaining() < n) throw IoError("idx labels: truncated payload");
    if (lr.remaining() > n) throw IoError("idx labels: trailing bytes");

    LabeledDataset ds;
    ds.images = Tensor({n, 1, rows, cols});
    ds.labels.resize(n);
    ds.classes = 10;
    ds.provenance = "idx:" + images_path;

    std::vector<std::uint8_t> px(static_cast<std::size_t>(want));
    ir.raw(px.data(), px.size());
    for (std::size_t i = 0; i < px.size(); ++i)
        ds.images[i] = static_cast<float>(px[i]) / 255.0f;
    std::vector<std::uint8_t> lb(n);
    lr.raw(lb.data(), lb.size());
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(lb[i]);
    ds.finalize();
    return ds;
}

// ----------------------------- CIFAR-10 binary -----------------------------

inline LabeledDataset load_cifar_binary(const std::string& dir, const std::string& split = "train") {
    constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*1024 pixel bytes
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
        files.push_back(dir + "/test_batch.bin");
    }

    LabeledDataset ds;
    ds.classes = 10;
    ds.split = split;
    ds.provenance = "cifar10:" + dir;
    std::vector<float> pixels;
    for (const auto& f : files) {
        const auto bytes = read_file_bytes(f);
        if (bytes.empty() || bytes.size() % kRecord != 0)
            throw IoError("cifar: record size does not divide file length of '" + f + "'");
        const std::size_t count = bytes.size() / kRecord;
        for (std::size_t r = 0; r < count; ++r) {
            const std::uint8_t* rec = bytes.data() + r * kRecord;
            if (rec[0] >= 10) throw IoError("cifar: label out of range in '" + f + "'");
            ds.labels.push_back(static_cast<int>(rec[0]));
            for (std::size_t i = 0; i < 3072; ++i) pixels.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
        }
    }
    ds.images = Tensor({ds.labels.size(), 3, 32, 32}, std::move(pixels));
    ds.finalize();
    return ds;
}

// ----------------------------- synthetic blobs -----------------------------
//
// Class templates are rendered Gaussian bumps (smooth spatial structure, so
// small shifts keep class identity), scaled so the minimum pairwise template
// distance equals `separation` noise standard deviations, then everything is
// affinely mapped into [0,1] with fixed bounds shared across splits.

inline LabeledDataset make_blobs(int classes, int per_class, const std::array<std::size_t, 3>& shape,
                                 double separation, std::uint64_t seed, const std::string& split = "train") {
    // separation 0 collapses the templates: pure noise, no class signal
    if (separation < 0.0) throw ConfigError("make_blobs: separation must be >= 0");
    if (classes < 2 || per_class < 1) throw ConfigError("make_blobs: need >= 2 classes and >= 1 per class");
    const std::size_t C = shape[0], H = shape[1], W = shape[2];
    const std::size_t d = C * H * W;

    Rng trng(mix_seed(seed, fnv1a64("blob-templates")));
    std::vector<std::vector<double>> tmpl(static_cast<std::size_t>(classes), std::vector<double>(d, 0.0));
    constexpr int kBumps = 4;
    for (auto& t : tmpl)
        for (std::size_t c = 0; c < C; ++c)
            for (int k = 0; k < kBumps; ++k) {
                const double cx = trng.uniform(0.15, 0.85) * static_cast<double>(W);
                const double cy = trng.uniform(0.15, 0.85) * static_cast<double>(H);
                const double w = trng.uniform(0.10, 0.25) * static_cast<double>(std::min(H, W));
                const double amp = (trng.coin() ? 1.0 : -1.0) * trng.uniform(0.5, 1.0);
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                        t[c * H * W + y * W + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * w * w));
                    }
            }

    double min_dist = 1e300;
    for (int a = 0; a < classes; ++a)
        for (int b = a + 1; b < classes; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double diff = tmpl[static_cast<std::size_t>(a)][i] - tmpl[static_cast<std::size_t>(b)][i];
                s += diff * diff;
            }
            min_dist = std::min(min_dist, std::sqrt(s));
        }
    const double scale = separation / min_dist;  // noise sigma is 1
    for (auto& t : tmpl)
        for (auto& v : t) v *= scale;

    double tlo = 1e300, thi = -1e300;
    for (const auto& t : tmpl)
        for (double v : t) {
            tlo = std::min(tlo, v);
            thi = std::max(thi, v);
        }
    const double lo = tlo - 5.0, hi = thi + 5.0;  // +-5 sigma of pixel noise

    const std::size_t n = static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class);
    LabeledDataset ds;
    ds.images = Tensor({n, shape[0], shape[1], shape[2]});
    ds.labels.resize(n);
    ds.classes = classes;
    ds.split = split;
    ds.provenance = "blobs(classes=" + std::to_string(classes) + ",per_class=" + std::to_string(per_class) +
                    ",sep=" + std::to_string(separation) + ",seed=" + std::to_string(seed) + "," + split + ")";

    Rng nrng(mix_seed(seed, fnv1a64("blob-noise"), fnv1a64(split)));
    std::size_t row = 0;
    for (int c = 0; c < classes; ++c)
        for (int k = 0; k < per_class; ++k, ++row) {
            ds.labels[row] = c;
            float* img = ds.images.data() + row * d;
            for (std::size_t i = 0; i < d; ++i) {
                const double v = tmpl[static_cast<std::size_t>(c)][i] + nrng.normal();
                img[i] = static_cast<float>(std::clamp((v - lo) / (hi - lo), 0.0, 1.0));
            }
        }
    ds.finalize();
    return ds;
}

// ----------------------------- ZCA whitening -----------------------------

struct ZcaTransform {
    Tensor64 mean;  // (d,)
    Tensor64 W;     // (d,d), symmetric
    double epsilon = 0.0;

    std::size_t dim() const { return mean.numel(); }
};

namespace detail {

inline Eigen::MatrixXd dataset_matrix(const LabeledDataset& ds) {
    const std::size_t n = ds.size(), d = ds.images.numel() / n;
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(ds.images[i * d + j]);
    return X;
}

}  // namespace detail

inline LabeledDataset zca_apply(const ZcaTransform& z, const LabeledDataset& ds) {
    const std::size_t n = ds.size(), d = ds.images.numel() / n;
    if (d != z.dim()) throw ShapeError("zca_apply: dimension mismatch");
    Eigen::MatrixXd X = detail::dataset_matrix(ds);
    Eigen::Map<const Eigen::VectorXd> mu(z.mean.data(), static_cast<Eigen::Index>(d));
    Eigen::Map<const Eigen::MatrixXd> W(z.W.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    X.rowwise() -= mu.transpose();
    Eigen::MatrixXd Y = X * W;  // W symmetric, so right-multiplication matches W (x - mu)
    LabeledDataset out = ds;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            out.images[i * d + j] =
                static_cast<float>(Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out.provenance = ds.provenance + "+zca";
    return out;
}

inline std::pair<ZcaTransform, LabeledDataset> zca_fit_apply(const LabeledDataset& ds, double epsilon) {
    if (epsilon <= 0.0) throw ConfigError("zca: epsilon must be > 0");
    const std::size_t n = ds.size(), d = ds.images.numel() / n;
    Eigen::MatrixXd X = detail::dataset_matrix(ds);
    Eigen::VectorXd mu = X.colwise().mean();
    X.rowwise() -= mu.transpose();
    Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n > 1 ? n - 1 : 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericFault("zca eigendecomposition");
    Eigen::VectorXd lam = eig.eigenvalues();
    Eigen::MatrixXd E = eig.eigenvectors();
    Eigen::VectorXd inv_sqrt = (lam.array() + epsilon).rsqrt();
    Eigen::MatrixXd W = E * inv_sqrt.asDiagonal() * E.transpose();

    ZcaTransform z;
    z.epsilon = epsilon;
    z.mean = Tensor64({d});
    for (std::size_t j = 0; j < d; ++j) z.mean[j] = mu(static_cast<Eigen::Index>(j));
    z.W = Tensor64({d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            z.W[i * d + j] = W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return {z, zca_apply(z, ds)};
}

// Invert through the eigensystem of W itself (W = E diag(s) E^T with
// s = 1/sqrt(lambda+eps), so the inverse shares eigenvectors).
inline Tensor zca_decode(const ZcaTransform& z, const Tensor& images) {
    const std::size_t d = z.dim();
    if (images.numel() % d != 0) throw ShapeError("zca_decode: dimension mismatch");
    const std::size_t n = images.numel() / d;
    Eigen::Map<const Eigen::MatrixXd> W(z.W.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(W);
    if (eig.info() != Eigen::Success) throw NumericFault("zca decode eigendecomposition");
    Eigen::VectorXd s = eig.eigenvalues();
    Eigen::MatrixXd E = eig.eigenvectors();
    Eigen::MatrixXd Winv = E * s.cwiseInverse().asDiagonal() * E.transpose();

    Tensor out(images.shape());
    Eigen::Map<const Eigen::VectorXd> mu(z.mean.data(), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd row(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j) row(static_cast<Eigen::Index>(j)) = images[i * d + j];
        Eigen::VectorXd x = Winv * row + mu;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(x(static_cast<Eigen::Index>(j)));
    }
    return out;
}

inline void save_zca(const ZcaTransform& z, const std::string& path) {
    ByteWriter w;
    w.raw("TESLAZCA", 8);
    w.u32(1);
    w.u64(z.dim());
    w.f64(z.epsilon);
    for (std::size_t i = 0; i < z.mean.numel(); ++i) w.f64(z.mean[i]);
    for (std::size_t i = 0; i < z.W.numel(); ++i) w.f64(z.W[i]);
    const std::uint64_t sum = fnv1a64(w.bytes().data() + 8, w.size() - 8);
    w.u64(sum);
    write_file_bytes(path, w.bytes());
}

inline ZcaTransform load_zca(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes, "zca file");
    char magic[8];
    r.raw(magic, 8);
    if (std::string(magic, 8) != "TESLAZCA") throw IoError("zca file: bad magic");
    if (r.u32() != 1) throw IoError("zca file: unsupported version");
    const std::uint64_t d = r.u64();
    ZcaTransform z;
    z.epsilon = r.f64();
    z.mean = Tensor64({d});
    for (std::size_t i = 0; i < d; ++i) z.mean[i] = r.f64();
    z.W = Tensor64({d, d});
    for (std::size_t i = 0; i < d * d; ++i) z.W[i] = r.f64();
    const std::uint64_t want = r.u64();
    const std::uint64_t got = fnv1a64(bytes.data() + 8, bytes.size() - 16);
    if (want != got) throw IoError("zca file: checksum mismatch");
    return z;
}

}  // namespace tesla
