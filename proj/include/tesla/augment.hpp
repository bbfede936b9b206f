// SPDX-License-Identifier: Apache-2.0
//
// Differentiable siamese augmentation: one random draw per batch, gradients
// flow to the pixels. Each enabled transform always emits the same nodes and
// consumes the same number of random draws whatever the draw outcome, so a
// step's graph size is a function of the policy alone and replays under the
// same seed are bit-identical.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tesla/autodiff.hpp"
#include "tesla/common.hpp"
#include "tesla/tensor.hpp"

namespace tesla {

enum class AugKind : std::uint8_t { flip, translate, cutout, brightness, saturation, contrast };

inline const char* aug_name(AugKind k) {
    switch (k) {
        case AugKind::flip: return "flip";
        case AugKind::translate: return "translate";
        case AugKind::cutout: return "cutout";
        case AugKind::brightness: return "brightness";
        case AugKind::saturation: return "saturation";
        case AugKind::contrast: return "contrast";
    }
    return "?";
}

inline AugKind aug_kind_from(const std::string& s) {
    if (s == "flip") return AugKind::flip;
    if (s == "translate") return AugKind::translate;
    if (s == "cutout") return AugKind::cutout;
    if (s == "brightness") return AugKind::brightness;
    if (s == "saturation") return AugKind::saturation;
    if (s == "contrast") return AugKind::contrast;
    throw ConfigError("unknown augmentation '" + s + "'");
}

struct AugTransform {
    AugKind kind = AugKind::flip;
    // flip: unused; translate: max shift in pixels; cutout: side ratio;
    // brightness/saturation/contrast: +-delta around identity
    double param = 0.0;
};

struct AugPolicy {
    std::vector<AugTransform> transforms;

    bool empty() const { return transforms.empty(); }

    void validate() const {
        for (const auto& t : transforms) {
            switch (t.kind) {
                case AugKind::flip:
                    break;
                case AugKind::translate:
                    if (t.param < 0.0) throw ConfigError("translate shift must be >= 0");
                    break;
                case AugKind::cutout:
                    if (t.param < 0.0 || t.param > 1.0) throw ConfigError("cutout ratio must be in [0,1]");
                    break;
                case AugKind::brightness:
                    if (t.param < 0.0) throw ConfigError("brightness delta must be >= 0");
                    break;
                case AugKind::saturation:
                case AugKind::contrast:
                    if (t.param < 0.0 || t.param >= 1.0)
                        throw ConfigError(std::string(aug_name(t.kind)) + " delta must be in [0,1)");
                    break;
            }
        }
    }
};

// Apply the policy to a whole batch under a fully deterministic seed.
template <class Real>
Var<Real> augment(Var<Real> X, const AugPolicy& policy, std::uint64_t step_seed) {
    policy.validate();
    Tape<Real>& t = *X.tape;
    const Shape& s = X.shape();
    if (s.size() != 4) throw ShapeError("augment: expected (N,C,H,W), got " + shape_str(s));
    const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];

    Rng rng(mix_seed(step_seed, fnv1a64("augment")));
    Var<Real> h = X;
    for (const auto& tr : policy.transforms) {
        switch (tr.kind) {
            case AugKind::flip: {
                const bool apply = rng.coin();
                h = t.flip_h(h, apply);
                break;
            }
            case AugKind::translate: {
                const auto m = static_cast<std::uint64_t>(tr.param);
                const std::ptrdiff_t dy =
                    static_cast<std::ptrdiff_t>(rng.below(2 * m + 1)) - static_cast<std::ptrdiff_t>(m);
                const std::ptrdiff_t dx =
                    static_cast<std::ptrdiff_t>(rng.below(2 * m + 1)) - static_cast<std::ptrdiff_t>(m);
                h = t.translate(h, dy, dx);
                break;
            }
            case AugKind::cutout: {
                const auto side = static_cast<std::size_t>(tr.param * static_cast<double>(std::min(H, W)));
                const std::size_t ci = rng.below(H), cj = rng.below(W);
                TensorT<Real> mask = TensorT<Real>::full({N, C, H, W}, Real(1));
                if (side > 0) {
                    const std::size_t i0 = ci >= side / 2 ? ci - side / 2 : 0;
                    const std::size_t j0 = cj >= side / 2 ? cj - side / 2 : 0;
                    const std::size_t i1 = std::min(H, i0 + side), j1 = std::min(W, j0 + side);
                    for (std::size_t nc = 0; nc < N * C; ++nc)
                        for (std::size_t i = i0; i < i1; ++i)
                            for (std::size_t j = j0; j < j1; ++j) mask[nc * H * W + i * W + j] = Real(0);
                }
                h = t.mul_mask(h, std::move(mask));
                break;
            }
            case AugKind::brightness: {
                const double delta = tr.param * rng.uniform(-1.0, 1.0);
                h = t.add_scalar(h, delta);
                break;
            }
            case AugKind::saturation: {
                const double f = 1.0 + tr.param * rng.uniform(-1.0, 1.0);
                Var<Real> gray = t.bcast_chan_pix(t.scale(t.sum_chan_pix(h), 1.0 / static_cast<double>(C)), C);
                h = t.add(t.scale(t.sub(h, gray), f), gray);
                break;
            }
            case AugKind::contrast: {
                const double f = 1.0 + tr.param * rng.uniform(-1.0, 1.0);
                const double inv = 1.0 / static_cast<double>(C * H * W);
                Var<Real> mean = t.bcast_image(t.scale(t.sum_chw(h), inv), C, H, W);
                h = t.add(t.scale(t.sub(h, mean), f), mean);
                break;
            }
        }
    }
    return h;
}

// Value-only convenience on a scratch tape.
template <class Real>
TensorT<Real> augment_value(const TensorT<Real>& X, const AugPolicy& policy, std::uint64_t step_seed) {
    Tape<Real> tape;
    return augment(tape.leaf(X), policy, step_seed).value();
}

}  // namespace tesla
