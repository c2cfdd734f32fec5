#pragma once

// Dense annotation heads on internal UNet features, coarse to fine:
// landmark heatmaps at 16x16, face mask at 32x32 (upsampled to 64), depth
// at 64x64, plus the annotation loss and its ground-truth encodings.

#include <array>
#include <string>
#include <vector>

#include "denseface/attention.hpp"
#include "denseface/conv_ops.hpp"
#include "denseface/nn.hpp"
#include "denseface/synthfaces.hpp"

namespace df {

inline constexpr int kHeatmapSize = 16;
inline constexpr double kHeatmapSigma = 1.0;

struct AnnotationLossWeights {
    double w_lmk = 1.0, w_mask = 1.0, w_depth = 0.5;
};

template <class S>
struct DenseHeadWeights {
    Conv<S> lmk1, lmk2;      // coarse feats -> 32 -> 5 heatmaps
    Conv<S> mask1, mask2;    // mid feats -> 16 -> 1 logit map
    Conv<S> depth1, depth2;  // fine feats -> 16 -> 1

    static DenseHeadWeights init(int ch_coarse, int ch_mid, int ch_fine, Rng& rng) {
        DenseHeadWeights h;
        h.lmk1 = Conv<S>::init(32, ch_coarse, 3, 1, 1, rng);
        h.lmk2 = Conv<S>::init(kNumLandmarks, 32, 3, 1, 1, rng);
        h.mask1 = Conv<S>::init(16, ch_mid, 3, 1, 1, rng);
        h.mask2 = Conv<S>::init(1, 16, 3, 1, 1, rng);
        h.depth1 = Conv<S>::init(16, ch_fine, 3, 1, 1, rng);
        h.depth2 = Conv<S>::init(1, 16, 3, 1, 1, rng);
        return h;
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        lmk1.visit(p + ".lmk1", f);
        lmk2.visit(p + ".lmk2", f);
        mask1.visit(p + ".mask1", f);
        mask2.visit(p + ".mask2", f);
        depth1.visit(p + ".depth1", f);
        depth2.visit(p + ".depth2", f);
    }
};

// raw (pre-decoding) head outputs, the quantities the loss sees
template <class S>
struct DenseRaw {
    Tensor<S> heatmaps;       // [1,5,16,16], sigmoid
    Tensor<S> mask_logits;    // [1,1,64,64] (nearest-upsampled 32->64 logits)
    Tensor<S> depth;          // [1,1,64,64], sigmoid
};

template <class S>
DenseRaw<S> dense_forward(const std::vector<Tensor<S>>& feats, const DenseHeadWeights<S>& dh,
                          GenMode mode) {
    if (mode != GenMode::face_generation)
        throw ContractError("dense heads require face_generation-mode features");
    if (feats.size() != 3)
        throw ShapeError("dense heads expect 3 feature levels, got " + std::to_string(feats.size()));
    if (feats[0].dim(2) != kHeatmapSize || feats[1].dim(2) != 32 || feats[2].dim(2) != 64)
        throw ShapeError("dense-head feature resolutions must be 16/32/64");
    DenseRaw<S> r;
    r.heatmaps = sigmoid(dh.lmk2(silu(dh.lmk1(feats[0]))));
    r.mask_logits = nearest_upsample2(dh.mask2(silu(dh.mask1(feats[1]))));
    r.depth = sigmoid(dh.depth2(silu(dh.depth1(feats[2]))));
    return r;
}

// Sum-normalized soft-argmax of one [H,H] heatmap, pixel-center convention,
// scaled into 64-space.
template <class S>
std::array<double, 2> soft_argmax(const Tensor<S>& heat, int grid, double px_scale) {
    if (heat.numel() != static_cast<int64_t>(grid) * grid)
        throw ShapeError("soft_argmax grid mismatch");
    double total = 0, sx = 0, sy = 0;
    for (int y = 0; y < grid; ++y)
        for (int x = 0; x < grid; ++x) {
            const double v = static_cast<double>(heat.at(y * grid + x));
            total += v;
            sx += v * (x + 0.5);
            sy += v * (y + 0.5);
        }
    if (total <= 0) throw NumericError("soft_argmax over a non-positive heatmap");
    return {sx / total * px_scale, sy / total * px_scale};
}

template <class S>
AnnotationSet predict_annotations(const std::vector<Tensor<S>>& feats,
                                  const DenseHeadWeights<S>& dh, GenMode mode) {
    auto raw = dense_forward(feats, dh, mode);
    AnnotationSet a;
    const double scale = 64.0 / kHeatmapSize;
    for (int i = 0; i < kNumLandmarks; ++i) {
        auto h = slice(raw.heatmaps, 1, i, 1);
        a.landmarks[static_cast<size_t>(i)] = soft_argmax(h, kHeatmapSize, scale);
    }
    auto mask = sigmoid(raw.mask_logits);
    a.mask = TensorF({64, 64});
    a.depth = TensorF({64, 64});
    for (int64_t i = 0; i < 64 * 64; ++i) {
        a.mask.mutable_values()[static_cast<size_t>(i)] = static_cast<float>(mask.at(i));
        a.depth.mutable_values()[static_cast<size_t>(i)] = static_cast<float>(raw.depth.at(i));
    }
    return a;
}

// ground-truth encodings -------------------------------------------------

// landmarks (64-space) -> gaussian heatmaps in 16x16, peak 1, sigma in
// 16-space cells
template <class S>
Tensor<S> gt_heatmaps(const std::array<std::array<double, 2>, kNumLandmarks>& lms) {
    Tensor<S> out({1, kNumLandmarks, kHeatmapSize, kHeatmapSize});
    auto& v = out.mutable_values();
    const double scale = 64.0 / kHeatmapSize;
    for (int i = 0; i < kNumLandmarks; ++i) {
        const double cx = lms[static_cast<size_t>(i)][0] / scale - 0.5;
        const double cy = lms[static_cast<size_t>(i)][1] / scale - 0.5;
        for (int y = 0; y < kHeatmapSize; ++y)
            for (int x = 0; x < kHeatmapSize; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                v[static_cast<size_t>(((i * kHeatmapSize) + y) * kHeatmapSize + x)] =
                    static_cast<S>(std::exp(-d2 / (2.0 * kHeatmapSigma * kHeatmapSigma)));
            }
    }
    return out;
}

template <class S>
Tensor<S> gt_map(const TensorF& hw) {  // [64,64] float -> [1,1,64,64] S
    Tensor<S> out({1, 1, 64, 64});
    for (int64_t i = 0; i < hw.numel(); ++i)
        out.mutable_values()[static_cast<size_t>(i)] = static_cast<S>(hw.at(i));
    return out;
}

// loss = w_lmk*MSE(heatmaps) + w_mask*BCE(mask logits) + w_depth*L1(depth)
template <class S>
Tensor<S> annotation_loss(const DenseRaw<S>& raw, const AnnotationSet& gt,
                          const AnnotationLossWeights& w) {
    auto l = scale(mse(raw.heatmaps, gt_heatmaps<S>(gt.landmarks)), w.w_lmk);
    l = add(l, scale(bce_logits(raw.mask_logits, gt_map<S>(gt.mask)), w.w_mask));
    l = add(l, scale(l1(raw.depth, gt_map<S>(gt.depth)), w.w_depth));
    return l;
}

}  // namespace df
