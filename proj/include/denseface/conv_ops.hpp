#pragma once

// Spatial ops for the UNet: conv2d (cross-correlation, im2col + gemm),
// 2x average pooling and 2x nearest upsampling.

#include <vector>

#include "denseface/tensor.hpp"

namespace df {

namespace detail {

template <class S>
void im2col(const S* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, S* cols) {
    // cols: [C*kh*kw, OH*OW]
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
                S* row = cols + ((c * kh + ky) * kw + kx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(row + oy * OW, row + (oy + 1) * OW, S(0));
                        continue;
                    }
                    const S* src = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * stride - pad + kx;
                        row[oy * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : S(0);
                    }
                }
            }
}

template <class S>
void col2im_accum(const S* cols, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t OH, int64_t OW, S* x) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
                const S* row = cols + ((c * kh + ky) * kw + kx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    const int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    S* dst = x + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        const int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += row[oy * OW + ox];
                    }
                }
            }
}

}  // namespace detail

// x [B,C,H,W] * w [O,C,kh,kw] -> [B,O,OH,OW], cross-correlation semantics.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, int stride = 1, int pad = 0) {
    if (x.ndim() != 4 || w.ndim() != 4)
        throw ShapeError("conv2d expects x [B,C,H,W], w [O,C,kh,kw]: got " + shape_str(x.shape()) +
                         ", " + shape_str(w.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = w.dim(0), Cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (C != Cw)
        throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) + " vs w " +
                         shape_str(w.shape()));
    if (stride < 1) throw ConfigError("conv2d stride must be >= 1");
    if (kh > H + 2 * pad || kw > W + 2 * pad)
        throw ShapeError("conv2d kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()) + " with pad " + std::to_string(pad));
    const int64_t OH = (H + 2 * pad - kh) / stride + 1;
    const int64_t OW = (W + 2 * pad - kw) / stride + 1;
    const int64_t K = C * kh * kw;
    Tensor<S> out({B, O, OH, OW});
    std::vector<S> cols(static_cast<size_t>(K * OH * OW));
    const S* xv = x.values().data();
    const S* wv = w.values().data();
    S* ov = out.mutable_values().data();
    for (int64_t b = 0; b < B; ++b) {
        detail::im2col(xv + b * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, cols.data());
        detail::gemm_nn(O, OH * OW, K, wv, cols.data(), ov + b * O * OH * OW, false);
    }
    if (detail::grad_wanted<S>({&x, &w})) {
        out.set_requires_grad(true);
        auto xd = x.data(), wd = w.data(), od = out.data();
        Tape<S>::current()->record([xd, wd, od, B, C, H, W, O, kh, kw, OH, OW, K, stride, pad] {
            if (od->g.empty()) return;
            std::vector<S> cols(static_cast<size_t>(K * OH * OW));
            std::vector<S> dcols(static_cast<size_t>(K * OH * OW));
            if (wd->requires_grad) ensure_grad(wd.get());
            if (xd->requires_grad) ensure_grad(xd.get());
            for (int64_t b = 0; b < B; ++b) {
                const S* dy = od->g.data() + b * O * OH * OW;
                if (wd->requires_grad) {
                    detail::im2col(xd->v.data() + b * C * H * W, C, H, W, kh, kw, stride, pad, OH,
                                   OW, cols.data());
                    // dW[O,K] += dY[O,M] * cols[K,M]^T
                    detail::gemm_nt(O, K, OH * OW, dy, cols.data(), wd->g.data(), true);
                }
                if (xd->requires_grad) {
                    // dcols[K,M] = W[O,K]^T * dY[O,M]
                    detail::gemm_tn(K, OH * OW, O, wd->v.data(), dy, dcols.data(), false);
                    detail::col2im_accum(dcols.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                                         xd->g.data() + b * C * H * W);
                }
            }
        });
    }
    return out;
}

// average over disjoint 2x2 blocks; requires even H, W
template <class S>
Tensor<S> avg_pool2(const Tensor<S>& x) {
    if (x.ndim() != 4) throw ShapeError("avg_pool2 expects [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("avg_pool2 requires even spatial dims, got " + shape_str(x.shape()));
    const int64_t OH = H / 2, OW = W / 2;
    Tensor<S> out({B, C, OH, OW});
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* src = xv.data() + bc * H * W;
        S* dst = ov.data() + bc * OH * OW;
        for (int64_t y = 0; y < OH; ++y)
            for (int64_t x2 = 0; x2 < OW; ++x2)
                dst[y * OW + x2] = (src[(2 * y) * W + 2 * x2] + src[(2 * y) * W + 2 * x2 + 1] +
                                    src[(2 * y + 1) * W + 2 * x2] + src[(2 * y + 1) * W + 2 * x2 + 1]) *
                                   S(0.25);
    }
    if (detail::grad_wanted<S>({&x})) {
        out.set_requires_grad(true);
        auto xd = x.data(), od = out.data();
        Tape<S>::current()->record([xd, od, B, C, H, W, OH, OW] {
            if (od->g.empty()) return;
            ensure_grad(xd.get());
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const S* dy = od->g.data() + bc * OH * OW;
                S* dx = xd->g.data() + bc * H * W;
                for (int64_t y = 0; y < OH; ++y)
                    for (int64_t x2 = 0; x2 < OW; ++x2) {
                        const S v = dy[y * OW + x2] * S(0.25);
                        dx[(2 * y) * W + 2 * x2] += v;
                        dx[(2 * y) * W + 2 * x2 + 1] += v;
                        dx[(2 * y + 1) * W + 2 * x2] += v;
                        dx[(2 * y + 1) * W + 2 * x2 + 1] += v;
                    }
            }
        });
    }
    return out;
}

// replicate each pixel into a 2x2 block
template <class S>
Tensor<S> nearest_upsample2(const Tensor<S>& x) {
    if (x.ndim() != 4) throw ShapeError("nearest_upsample2 expects [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t OH = H * 2, OW = W * 2;
    Tensor<S> out({B, C, OH, OW});
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const S* src = xv.data() + bc * H * W;
        S* dst = ov.data() + bc * OH * OW;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x2 = 0; x2 < W; ++x2) {
                const S v = src[y * W + x2];
                dst[(2 * y) * OW + 2 * x2] = v;
                dst[(2 * y) * OW + 2 * x2 + 1] = v;
                dst[(2 * y + 1) * OW + 2 * x2] = v;
                dst[(2 * y + 1) * OW + 2 * x2 + 1] = v;
            }
    }
    if (detail::grad_wanted<S>({&x})) {
        out.set_requires_grad(true);
        auto xd = x.data(), od = out.data();
        Tape<S>::current()->record([xd, od, B, C, H, W, OH, OW] {
            if (od->g.empty()) return;
            ensure_grad(xd.get());
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const S* dy = od->g.data() + bc * OH * OW;
                S* dx = xd->g.data() + bc * H * W;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x2 = 0; x2 < W; ++x2)
                        dx[y * W + x2] += dy[(2 * y) * OW + 2 * x2] + dy[(2 * y) * OW + 2 * x2 + 1] +
                                          dy[(2 * y + 1) * OW + 2 * x2] +
                                          dy[(2 * y + 1) * OW + 2 * x2 + 1];
            }
        });
    }
    return out;
}

}  // namespace df
