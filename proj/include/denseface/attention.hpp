#pragma once

// Multi-head cross-attention and the adapter variant that adds residual
// projection matrices (w'q/w'k/w'v) to the frozen base projections. The
// output projection and the residual add around each site live in the UNet
// blocks; these functions compute the attention itself.

#include <string>
#include <vector>

#include "denseface/nn.hpp"
#include "denseface/tensor.hpp"

namespace df {

enum class GenMode { text_editing, face_generation };

inline GenMode mode_from_string(const std::string& s) {
    if (s == "text" || s == "text_editing") return GenMode::text_editing;
    if (s == "face" || s == "face_generation") return GenMode::face_generation;
    throw ConfigError("unknown generation mode '" + s + "'");
}

inline std::string to_string(GenMode m) {
    return m == GenMode::text_editing ? "text_editing" : "face_generation";
}

template <class S>
struct CrossAttentionWeights {
    Tensor<S> w_q;    // [c_f, h*d_k]
    Tensor<S> w_k;    // [k, h*d_k]
    Tensor<S> w_v;    // [k, h*d_k]
    Tensor<S> w_out;  // [h*d_k, c_f]
    int heads = 4;

    static CrossAttentionWeights init(int64_t c_f, int64_t k, int heads, int64_t head_dim,
                                      Rng& rng) {
        const int64_t inner = heads * head_dim;
        return {kaiming<S>({c_f, inner}, c_f, rng), kaiming<S>({k, inner}, k, rng),
                kaiming<S>({k, inner}, k, rng), kaiming<S>({inner, c_f}, inner, rng), heads};
    }

    int64_t head_dim() const { return w_q.dim(1) / heads; }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w_q", w_q);
        f(p + ".w_k", w_k);
        f(p + ".w_v", w_v);
        f(p + ".w_out", w_out);
    }
};

// Residual projections; shapes mirror the base w_q/w_k/w_v.
template <class S>
struct AdapterWeights {
    Tensor<S> w_q_prime, w_k_prime, w_v_prime;

    static AdapterWeights zeros_like(const CrossAttentionWeights<S>& base) {
        return {Tensor<S>::zeros(base.w_q.shape()), Tensor<S>::zeros(base.w_k.shape()),
                Tensor<S>::zeros(base.w_v.shape())};
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w_q", w_q_prime);
        f(p + ".w_k", w_k_prime);
        f(p + ".w_v", w_v_prime);
    }
};

namespace detail {

// Core attention: queries from f [N,c_f], keys/values from ctx [Lc,k] using
// explicit projection matrices. keep masks ctx rows (empty = all active).
template <class S>
Tensor<S> attention_core(const Tensor<S>& f, const Tensor<S>& ctx, const std::vector<char>& keep,
                         const Tensor<S>& w_q, const Tensor<S>& w_k, const Tensor<S>& w_v,
                         const Tensor<S>& w_out, int heads) {
    if (f.ndim() != 2 || ctx.ndim() != 2)
        throw ShapeError("attention expects 2-D f and ctx, got " + shape_str(f.shape()) + " and " +
                         shape_str(ctx.shape()));
    if (f.dim(1) != w_q.dim(0))
        throw ShapeError("query input dim " + std::to_string(f.dim(1)) + " vs w_q " +
                         shape_str(w_q.shape()));
    if (ctx.dim(1) != w_k.dim(0))
        throw ShapeError("context dim " + std::to_string(ctx.dim(1)) + " vs w_k " +
                         shape_str(w_k.shape()));
    if (!keep.empty() && static_cast<int64_t>(keep.size()) != ctx.dim(0))
        throw ShapeError("mask length " + std::to_string(keep.size()) + " vs context rows " +
                         std::to_string(ctx.dim(0)));
    const int64_t inner = w_q.dim(1);
    if (inner % heads != 0) throw ConfigError("attention inner dim not divisible by head count");
    const int64_t dk = inner / heads;

    auto q = matmul(f, w_q);    // [N, inner]
    auto k = matmul(ctx, w_k);  // [Lc, inner]
    auto v = matmul(ctx, w_v);  // [Lc, inner]

    std::vector<Tensor<S>> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = slice(q, 1, h * dk, dk);
        auto kh = slice(k, 1, h * dk, dk);
        auto vh = slice(v, 1, h * dk, dk);
        auto logits = scale(matmul(qh, permute(kh, {1, 0})), 1.0 / std::sqrt(static_cast<double>(dk)));
        auto attn = keep.empty() ? softmax(logits, 1) : masked_softmax_lastdim(logits, keep);
        outs.push_back(matmul(attn, vh));  // [N, dk]
    }
    return matmul(heads == 1 ? outs[0] : concat<S>(outs, 1), w_out);  // [N, c_f]
}

}  // namespace detail

// Eq. 2: q = w^q f, k = w^k c, v = w^v c.
template <class S>
Tensor<S> cross_attention(const Tensor<S>& f, const Tensor<S>& ctx, const std::vector<char>& keep,
                          const CrossAttentionWeights<S>& w) {
    return detail::attention_core(f, ctx, keep, w.w_q, w.w_k, w.w_v, w.w_out, w.heads);
}

// Eq. 3: q' = (w^q + w'^q) f, k' = (w^k + w'^k) c', v' = (w^v + w'^v) c'.
template <class S>
Tensor<S> adapted_cross_attention(const Tensor<S>& f, const Tensor<S>& ctx,
                                  const std::vector<char>& keep, const CrossAttentionWeights<S>& w,
                                  const AdapterWeights<S>& a) {
    return detail::attention_core(f, ctx, keep, add(w.w_q, a.w_q_prime), add(w.w_k, a.w_k_prime),
                                  add(w.w_v, a.w_v_prime), w.w_out, w.heads);
}

// Self-attention reuses the same core with ctx = f.
template <class S>
struct SelfAttentionWeights {
    Tensor<S> w_q, w_k, w_v, w_out;  // all square in the feature dim
    int heads = 4;

    static SelfAttentionWeights init(int64_t c, int heads, Rng& rng) {
        return {kaiming<S>({c, c}, c, rng), kaiming<S>({c, c}, c, rng), kaiming<S>({c, c}, c, rng),
                kaiming<S>({c, c}, c, rng), heads};
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w_q", w_q);
        f(p + ".w_k", w_k);
        f(p + ".w_v", w_v);
        f(p + ".w_out", w_out);
    }
};

template <class S>
Tensor<S> self_attention(const Tensor<S>& f, const std::vector<char>& keep,
                         const SelfAttentionWeights<S>& w) {
    return detail::attention_core(f, f, keep, w.w_q, w.w_k, w.w_v, w.w_out, w.heads);
}

}  // namespace df
