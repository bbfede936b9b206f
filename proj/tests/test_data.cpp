// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "helpers.hpp"
#include "tesla/data.hpp"

using namespace tesla;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("tesla_test_" + std::to_string(Catch::rngSeed()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> idx_fixture(std::uint32_t n) {
    std::vector<std::uint8_t> img, lbl;
    be32(img, 0x00000803u);
    be32(img, n);
    be32(img, 28);
    be32(img, 28);
    for (std::uint32_t i = 0; i < n * 28 * 28; ++i) img.push_back(static_cast<std::uint8_t>(i % 256));
    be32(lbl, 0x00000801u);
    be32(lbl, n);
    for (std::uint32_t i = 0; i < n; ++i) lbl.push_back(static_cast<std::uint8_t>(i % 10));
    return {img, lbl};
}

}  // namespace

TEST_CASE("idx loader on a hand-built fixture") {
    TempDir tmp;
    auto [img, lbl] = idx_fixture(4);
    // force a 0xFF pixel to check the scaling contract
    img[16] = 0xFF;
    write_file_bytes(tmp.file("img"), img);
    write_file_bytes(tmp.file("lbl"), lbl);
    LabeledDataset ds = load_idx(tmp.file("img"), tmp.file("lbl"));
    CHECK(ds.size() == 4);
    CHECK(ds.images.shape() == Shape{4, 1, 28, 28});
    CHECK(ds.images[0] == 1.0f);  // byte 0xFF -> exactly 1.0
    CHECK(ds.labels[3] == 3);
}

TEST_CASE("idx loader errors are typed and specific") {
    TempDir tmp;
    auto [img, lbl] = idx_fixture(4);
    write_file_bytes(tmp.file("lbl"), lbl);

    auto truncated = img;
    truncated.resize(truncated.size() - 100);
    write_file_bytes(tmp.file("img_trunc"), truncated);
    CHECK_THROWS_WITH(load_idx(tmp.file("img_trunc"), tmp.file("lbl")),
                      Catch::Matchers::ContainsSubstring("truncated payload"));

    auto badmagic = img;
    badmagic[3] = 0x99;
    write_file_bytes(tmp.file("img_magic"), badmagic);
    CHECK_THROWS_WITH(load_idx(tmp.file("img_magic"), tmp.file("lbl")),
                      Catch::Matchers::ContainsSubstring("bad magic"));

    auto [img5, lbl5] = idx_fixture(5);
    write_file_bytes(tmp.file("img5"), img5);
    CHECK_THROWS_WITH(load_idx(tmp.file("img5"), tmp.file("lbl")),
                      Catch::Matchers::ContainsSubstring("count mismatch"));
}

TEST_CASE("cifar loader on a hand-built record") {
    TempDir tmp;
    std::vector<std::uint8_t> rec(3073, 0);
    rec[0] = 7;  // label
    // R plane is a horizontal gradient, G and B stay zero
    for (std::size_t i = 0; i < 1024; ++i) rec[1 + i] = static_cast<std::uint8_t>(i % 32);
    write_file_bytes(tmp.file("test_batch.bin"), rec);
    LabeledDataset ds = load_cifar_binary(tmp.path.string(), "test");
    CHECK(ds.size() == 1);
    CHECK(ds.labels[0] == 7);
    CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
    // R plane, row 0, col 5 -> 5/255; G plane zero
    CHECK_THAT(ds.images[5], Catch::Matchers::WithinRel(5.0f / 255.0f, 1e-6f));
    CHECK(ds.images[1024 + 5] == 0.0f);

    std::vector<std::uint8_t> badlen(3072, 0);
    write_file_bytes(tmp.file("test_batch.bin"), badlen);
    CHECK_THROWS_WITH(load_cifar_binary(tmp.path.string(), "test"),
                      Catch::Matchers::ContainsSubstring("record size"));

    rec[0] = 11;  // label out of range
    write_file_bytes(tmp.file("test_batch.bin"), rec);
    CHECK_THROWS_WITH(load_cifar_binary(tmp.path.string(), "test"),
                      Catch::Matchers::ContainsSubstring("label out of range"));
}

TEST_CASE("full cifar train dir loads 50000 images when available") {
    const char* dir = std::getenv("CIFAR10_DIR");
    if (dir == nullptr) {
        SUCCEED("CIFAR10_DIR not set; skipping");
        return;
    }
    LabeledDataset ds = load_cifar_binary(dir, "train");
    CHECK(ds.size() == 50000);
}

TEST_CASE("corrupt files produce typed errors, never crashes") {
    TempDir tmp;
    auto [img, lbl] = idx_fixture(2);
    write_file_bytes(tmp.file("lbl"), lbl);
    Rng rng(7777);
    int errors = 0;
    for (int it = 0; it < 1000; ++it) {
        auto bad = img;
        const int mode = static_cast<int>(rng.below(3));
        if (mode == 0 && bad.size() > 4) {
            bad.resize(rng.below(bad.size()));
        } else if (mode == 1) {
            bad[rng.below(bad.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
        } else {
            const std::size_t extra = rng.below(64);
            for (std::size_t i = 0; i < extra; ++i) bad.push_back(static_cast<std::uint8_t>(rng.below(256)));
        }
        write_file_bytes(tmp.file("fuzz"), bad);
        try {
            LabeledDataset ds = load_idx(tmp.file("fuzz"), tmp.file("lbl"));
            CHECK(ds.size() >= 1);  // mutation can leave a valid file
        } catch (const IoError&) {
            ++errors;
        } catch (const ShapeError&) {
            ++errors;
        }
    }
    CHECK(errors > 0);
}

TEST_CASE("make_blobs basic contracts") {
    auto ds = make_blobs(3, 200, {1, 8, 8}, 5.0, 11, "train");
    CHECK(ds.size() == 600);
    CHECK(ds.classes == 3);
    CHECK(ds.class_counts == std::vector<std::size_t>{200, 200, 200});
    for (std::size_t i = 0; i < ds.images.numel(); ++i) {
        REQUIRE(ds.images[i] >= 0.0f);
        REQUIRE(ds.images[i] <= 1.0f);
    }
    auto again = make_blobs(3, 200, {1, 8, 8}, 5.0, 11, "train");
    CHECK(checksum(again.images) == checksum(ds.images));
    auto test = make_blobs(3, 200, {1, 8, 8}, 5.0, 11, "test");
    CHECK(checksum(test.images) != checksum(ds.images));
}

TEST_CASE("zca: whitened output has identity covariance and W is symmetric") {
    Rng rng(88);
    // correlated data: mix of two latent factors plus noise
    const std::size_t N = 400, d = 16;
    LabeledDataset ds;
    ds.images = Tensor({N, 1, 4, 4});
    ds.labels.assign(N, 0);
    ds.classes = 1;
    ds.provenance = "test";
    for (std::size_t i = 0; i < N; ++i) {
        const double a = rng.normal(), b = rng.normal();
        for (std::size_t j = 0; j < d; ++j)
            ds.images[i * d + j] = static_cast<float>(a * std::sin(0.3 * static_cast<double>(j)) +
                                                      b * std::cos(0.7 * static_cast<double>(j)) +
                                                      0.3 * rng.normal());
    }
    ds.finalize();
    auto [z, white] = zca_fit_apply(ds, 1e-6);

    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            REQUIRE_THAT(z.W[i * d + j], Catch::Matchers::WithinAbs(z.W[j * d + i], 1e-4));

    // covariance of the output, same estimator as the fit
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += white.images[i * d + j];
    for (auto& m : mean) m /= static_cast<double>(N);
    double fro = 0.0, fro_i = 0.0;
    for (std::size_t a2 = 0; a2 < d; ++a2)
        for (std::size_t b2 = 0; b2 < d; ++b2) {
            double cov = 0.0;
            for (std::size_t i = 0; i < N; ++i)
                cov += (white.images[i * d + a2] - mean[a2]) * (white.images[i * d + b2] - mean[b2]);
            cov /= static_cast<double>(N - 1);
            const double want = a2 == b2 ? 1.0 : 0.0;
            fro += (cov - want) * (cov - want);
            fro_i += want * want;
        }
    CHECK(std::sqrt(fro) / std::sqrt(fro_i) < 1e-2);
}

TEST_CASE("zca on already-white data is close to the identity") {
    Rng rng(89);
    const std::size_t N = 300, d = 16;
    LabeledDataset ds;
    ds.images = Tensor({N, 1, 4, 4});
    ds.labels.assign(N, 0);
    ds.classes = 1;
    ds.provenance = "test";
    for (std::size_t i = 0; i < ds.images.numel(); ++i) ds.images[i] = static_cast<float>(rng.normal());
    ds.finalize();
    auto [z1, white] = zca_fit_apply(ds, 1e-10);
    auto [z2, rewhite] = zca_fit_apply(white, 1e-10);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            REQUIRE_THAT(z2.W[i * d + j], Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-3));
}

TEST_CASE("zca decode inverts the transform") {
    Rng rng(90);
    const std::size_t N = 100, d = 16;
    LabeledDataset ds;
    ds.images = Tensor({N, 1, 4, 4});
    ds.labels.assign(N, 0);
    ds.classes = 1;
    ds.provenance = "test";
    for (std::size_t i = 0; i < ds.images.numel(); ++i)
        ds.images[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    ds.finalize();
    auto [z, white] = zca_fit_apply(ds, 0.1);
    Tensor back = zca_decode(z, white.images);
    for (std::size_t i = 0; i < back.numel(); ++i)
        REQUIRE_THAT(back[i], Catch::Matchers::WithinAbs(ds.images[i], 1e-3f));
}

TEST_CASE("zca transform round trips through its file format") {
    TempDir tmp;
    Rng rng(91);
    const std::size_t N = 60, d = 16;
    LabeledDataset ds;
    ds.images = Tensor({N, 1, 4, 4});
    ds.labels.assign(N, 0);
    ds.classes = 1;
    ds.provenance = "test";
    for (std::size_t i = 0; i < ds.images.numel(); ++i) ds.images[i] = static_cast<float>(rng.normal());
    ds.finalize();
    auto [z, _] = zca_fit_apply(ds, 0.1);
    save_zca(z, tmp.file("t.zca"));
    ZcaTransform z2 = load_zca(tmp.file("t.zca"));
    CHECK(checksum(z2.W) == checksum(z.W));
    CHECK(checksum(z2.mean) == checksum(z.mean));
    CHECK(z2.epsilon == z.epsilon);

    auto bytes = read_file_bytes(tmp.file("t.zca"));
    bytes[bytes.size() / 2] ^= 0x40;
    write_file_bytes(tmp.file("bad.zca"), bytes);
    CHECK_THROWS_AS(load_zca(tmp.file("bad.zca")), IoError);
}

TEST_CASE("blobs with zero separation carry no class signal") {
    // probe: a small model trained on sep=0 blobs stays at chance level
    auto train = make_blobs(4, 100, {1, 4, 4}, 0.0, 5, "train");
    auto test = make_blobs(4, 100, {1, 4, 4}, 0.0, 5, "test");
    // nearest-class-mean probe
    const std::size_t d = 16;
    std::vector<std::vector<double>> means(4, std::vector<double>(d, 0.0));
    std::vector<int> counts(4, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const int c = train.labels[i];
        ++counts[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < d; ++j)
            means[static_cast<std::size_t>(c)][j] += train.images[i * d + j];
    }
    for (int c = 0; c < 4; ++c)
        for (std::size_t j = 0; j < d; ++j) means[static_cast<std::size_t>(c)][j] /= counts[static_cast<std::size_t>(c)];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        double best = 1e300;
        int arg = 0;
        for (int c = 0; c < 4; ++c) {
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = test.images[i * d + j] - means[static_cast<std::size_t>(c)][j];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        if (arg == test.labels[i]) ++hits;
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(test.size());
    CHECK(std::abs(acc - 0.25) < 0.05);
}
