#pragma once

// Small parameter-holding building blocks shared by the encoders and the
// UNet: linear layers, two-layer MLPs, and the name->tensor visitation
// convention used for checkpointing, freezing, and optimizer wiring.

#include <string>

#include "denseface/conv_ops.hpp"
#include "denseface/init.hpp"
#include "denseface/tensor.hpp"

namespace df {

// Visitors are callables f(const std::string& name, Tensor<S>& param).
// Names are '.'-joined paths; the path prefix identifies the parameter group.

template <class S>
struct LinearW {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out]

    static LinearW init(int64_t in, int64_t out, Rng& rng) {
        return {kaiming<S>({in, out}, in, rng), Tensor<S>::zeros({out})};
    }

    // x: [N, in] -> [N, out]
    Tensor<S> operator()(const Tensor<S>& x) const { return add_row(matmul(x, w), b); }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w", w);
        f(p + ".b", b);
    }
};

// in -> hidden -> out with SiLU between
template <class S>
struct Mlp {
    LinearW<S> l1, l2;

    static Mlp init(int64_t in, int64_t hidden, int64_t out, Rng& rng) {
        return {LinearW<S>::init(in, hidden, rng), LinearW<S>::init(hidden, out, rng)};
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return l2(silu(l1(x))); }

    template <class F>
    void visit(const std::string& p, F&& f) {
        l1.visit(p + ".l1", f);
        l2.visit(p + ".l2", f);
    }
};

template <class S>
struct Conv {
    Tensor<S> w;  // [out, in, k, k]
    Tensor<S> b;  // [out]
    int stride = 1, pad = 0;

    static Conv init(int64_t out, int64_t in, int64_t k, int stride, int pad, Rng& rng) {
        return {kaiming<S>({out, in, k, k}, in * k * k, rng), Tensor<S>::zeros({out}), stride, pad};
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return add_chan(conv2d(x, w, stride, pad), b);
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w", w);
        f(p + ".b", b);
    }
};

// affine norm parameters (for group_norm / layer_norm call sites)
template <class S>
struct NormW {
    Tensor<S> g, b;

    static NormW init(int64_t n) { return {Tensor<S>::full({n}, S(1)), Tensor<S>::zeros({n})}; }

    template <class F>
    void visit(const std::string& p, F&& f) {
        f(p + ".g", g);
        f(p + ".b", b);
    }
};

// largest group count <= want that divides ch
inline int gn_groups_for(int64_t ch, int want = 8) {
    int g = want;
    while (g > 1 && ch % g != 0) --g;
    return g;
}

}  // namespace df
