#pragma once

// Dense row-major tensors with define-by-run reverse-mode autodiff.
// Gradients are recorded on a thread-confined Tape; tensors without grad
// tracking are immutable after construction and shareable across threads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "denseface/error.hpp"

namespace df {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class S>
struct TensorData {
    Shape shape;
    std::vector<S> v;  // values, row-major
    std::vector<S> g;  // gradient, empty until touched by backward
    bool requires_grad = false;
};

template <class S>
void ensure_grad(TensorData<S>* d) {
    if (d->g.empty()) d->g.assign(d->v.size(), S(0));
}

template <class S>
class Tensor;

// Thread-confined operation tape. Constructing a Tape makes it the active
// recorder on this thread; destruction restores the previous one.
template <class S>
class Tape {
public:
    Tape() : prev_(current_) { current_ = this; }
    ~Tape() { current_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_; }
    static Tape* swap_current(Tape* t) {
        Tape* old = current_;
        current_ = t;
        return old;
    }

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    size_t size() const { return nodes_.size(); }

    void backward(const Tensor<S>& loss);

private:
    std::vector<std::function<void()>> nodes_;
    Tape* prev_;
    bool consumed_ = false;
    static inline thread_local Tape* current_ = nullptr;
};

// Temporarily disables gradient recording on this thread.
template <class S>
class NoGradGuard {
public:
    NoGradGuard() : saved_(Tape<S>::swap_current(nullptr)) {}
    ~NoGradGuard() { Tape<S>::swap_current(saved_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape<S>* saved_;
};

template <class S>
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData<S>>()) {}

    explicit Tensor(Shape shape) : d_(std::make_shared<TensorData<S>>()) {
        for (int64_t x : shape)
            if (x <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->v.assign(numel_of(d_->shape), S(0));
    }

    Tensor(Shape shape, std::vector<S> values) : d_(std::make_shared<TensorData<S>>()) {
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        d_->shape = std::move(shape);
        d_->v = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, S value) {
        Tensor t(std::move(shape));
        std::fill(t.d_->v.begin(), t.d_->v.end(), value);
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return d_->shape; }
    int64_t numel() const { return static_cast<int64_t>(d_->v.size()); }
    int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(d_->shape.size()); }

    const std::vector<S>& values() const { return d_->v; }
    std::vector<S>& mutable_values() { return d_->v; }
    S item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return d_->v[0];
    }
    S at(int64_t i) const { return d_->v[static_cast<size_t>(i)]; }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        d_->requires_grad = rg;
        return *this;
    }
    bool has_grad() const { return !d_->g.empty(); }
    const std::vector<S>& grad() const {
        if (d_->g.empty()) throw StateError("grad not populated");
        return d_->g;
    }
    void zero_grad() { d_->g.clear(); }

    Tensor detach() const {
        Tensor t;
        t.d_->shape = d_->shape;
        t.d_->v = d_->v;
        return t;
    }

    Tensor clone() const {
        Tensor t = detach();
        t.d_->requires_grad = d_->requires_grad;
        return t;
    }

    bool all_finite() const {
        for (S x : d_->v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    std::shared_ptr<TensorData<S>> data() const { return d_; }

private:
    std::shared_ptr<TensorData<S>> d_;
};

namespace detail {

template <class S>
bool grad_wanted(std::initializer_list<const Tensor<S>*> ins) {
    if (!Tape<S>::current()) return false;
    for (const Tensor<S>* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

template <class S>
void same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void axis_decomp(const Shape& s, int axis, int64_t& outer, int64_t& n, int64_t& inner) {
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    n = s[static_cast<size_t>(axis)];
    inner = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

// --- tiny gemm kernels (row-major) ---

template <class S>
void gemm_nn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, S(0));
    for (int64_t i = 0; i < M; ++i) {
        const S* a = A + i * K;
        S* c = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            const S aik = a[k];
            const S* b = B + k * N;
            for (int64_t j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class S>
void gemm_nt(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accumulate) {
    for (int64_t i = 0; i < M; ++i) {
        const S* a = A + i * K;
        S* c = C + i * N;
        for (int64_t j = 0; j < N; ++j) {
            const S* b = B + j * K;
            S acc = accumulate ? c[j] : S(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] = acc;
        }
    }
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class S>
void gemm_tn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, S(0));
    for (int64_t k = 0; k < K; ++k) {
        const S* a = A + k * M;
        const S* b = B + k * N;
        for (int64_t i = 0; i < M; ++i) {
            const S aki = a[i];
            S* c = C + i * N;
            for (int64_t j = 0; j < N; ++j) c[j] += aki * b[j];
        }
    }
}

}  // namespace detail

template <class S>
void Tape<S>::backward(const Tensor<S>& loss) {
    if (consumed_) throw StateError("backward called twice on the same tape");
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (nodes_.empty()) throw StateError("backward on an empty tape");
    consumed_ = true;
    auto d = loss.data();
    ensure_grad(d.get());
    d->g[0] = S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
}

// ---------------- elementwise ----------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::same_shape(a, b, "add");
    Tensor<S> out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (detail::grad_wanted<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([ad, bd, od] {
            if (od->g.empty()) return;
            for (auto* d : {ad.get(), bd.get()}) {
                if (!d->requires_grad) continue;
                ensure_grad(d);
                for (size_t i = 0; i < od->g.size(); ++i) d->g[i] += od->g[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::same_shape(a, b, "sub");
    Tensor<S> out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (detail::grad_wanted<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([ad, bd, od] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                ensure_grad(ad.get());
                for (size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
            }
            if (bd->requires_grad) {
                ensure_grad(bd.get());
                for (size_t i = 0; i < od->g.size(); ++i) bd->g[i] -= od->g[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::same_shape(a, b, "mul");
    Tensor<S> out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (detail::grad_wanted<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([ad, bd, od] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                ensure_grad(ad.get());
                for (size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i] * bd->v[i];
            }
            if (bd->requires_grad) {
                ensure_grad(bd.get());
                for (size_t i = 0; i < od->g.size(); ++i) bd->g[i] += od->g[i] * ad->v[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double s) {
    Tensor<S> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * static_cast<S>(s);
    if (detail::grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape<S>::current()->record([ad, od, s] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i] * static_cast<S>(s);
        });
    }
    return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, double s) {
    Tensor<S> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + static_cast<S>(s);
    if (detail::grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape<S>::current()->record([ad, od] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
        });
    }
    return out;
}

namespace detail {

// unary op with elementwise derivative computed from (x, y)
template <class S, class F, class D>
Tensor<S> unary(const Tensor<S>& a, F fwd, D dydx) {
    Tensor<S> out(a.shape());
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
    if (grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape<S>::current()->record([ad, od, dydx] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (size_t i = 0; i < od->g.size(); ++i)
                ad->g[i] += od->g[i] * dydx(ad->v[i], od->v[i]);
        });
    }
    return out;
}

}  // namespace detail

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
    return scale(a, -1.0);
}

template <class S>
Tensor<S> exp_(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Tensor<S> log_(const Tensor<S>& a) {
    for (S x : a.values())
        if (!(x > S(0))) throw NumericError("log of non-positive value");
    return detail::unary(
        a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Tensor<S> sqrt_(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <class S>
Tensor<S> tanh_(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return detail::unary(
        a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
        [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> silu(const Tensor<S>& a) {
    return detail::unary(
        a,
        [](S x) {
            const S sg = S(1) / (S(1) + std::exp(-x));
            return x * sg;
        },
        [](S x, S) {
            const S sg = S(1) / (S(1) + std::exp(-x));
            return sg * (S(1) + x * (S(1) - sg));
        });
}

// clamp: zero grad outside the active range (standard subgradient choice)
template <class S>
Tensor<S> clamp(const Tensor<S>& a, double lo, double hi) {
    return detail::unary(
        a,
        [lo, hi](S x) { return std::min(std::max(x, static_cast<S>(lo)), static_cast<S>(hi)); },
        [lo, hi](S x, S) {
            return (x > static_cast<S>(lo) && x < static_cast<S>(hi)) ? S(1) : S(0);
        });
}

// ---------------- reductions & losses ----------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
    S acc = 0;
    for (S x : a.values()) acc += x;
    Tensor<S> out = Tensor<S>::scalar(acc);
    if (detail::grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape<S>::current()->record([ad, od] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (auto& gi : ad->g) gi += od->g[0];
        });
    }
    return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

template <class S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
    detail::same_shape(a, b, "mse");
    const auto& av = a.values();
    const auto& bv = b.values();
    S acc = 0;
    for (size_t i = 0; i < av.size(); ++i) {
        const S d = av[i] - bv[i];
        acc += d * d;
    }
    const S n = static_cast<S>(av.size());
    Tensor<S> out = Tensor<S>::scalar(acc / n);
    if (detail::grad_wanted<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([ad, bd, od, n] {
            if (od->g.empty()) return;
            const S go = od->g[0];
            if (ad->requires_grad) {
                ensure_grad(ad.get());
                for (size_t i = 0; i < ad->v.size(); ++i)
                    ad->g[i] += go * S(2) * (ad->v[i] - bd->v[i]) / n;
            }
            if (bd->requires_grad) {
                ensure_grad(bd.get());
                for (size_t i = 0; i < bd->v.size(); ++i)
                    bd->g[i] += go * S(2) * (bd->v[i] - ad->v[i]) / n;
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> l1(const Tensor<S>& a, const Tensor<S>& b) {
    detail::same_shape(a, b, "l1");
    const auto& av = a.values();
    const auto& bv = b.values();
    S acc = 0;
    for (size_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - bv[i]);
    const S n = static_cast<S>(av.size());
    Tensor<S> out = Tensor<S>::scalar(acc / n);
    if (detail::grad_wanted<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([ad, bd, od, n] {
            if (od->g.empty()) return;
            const S go = od->g[0];
            for (size_t i = 0; i < ad->v.size(); ++i) {
                const S d = ad->v[i] - bd->v[i];
                const S sg = (d > 0) ? S(1) : (d < 0 ? S(-1) : S(0));
                if (ad->requires_grad) {
                    ensure_grad(ad.get());
                    ad->g[i] += go * sg / n;
                }
                if (bd->requires_grad) {
                    ensure_grad(bd.get());
                    bd->g[i] -= go * sg / n;
                }
            }
        });
    }
    return out;
}

// bce over probabilities: callers clamp to [1e-7, 1-1e-7] first.
template <class S>
Tensor<S> bce(const Tensor<S>& p, const Tensor<S>& t) {
    detail::same_shape(p, t, "bce");
    const auto& pv = p.values();
    const auto& tv = t.values();
    for (S x : pv)
        if (!(x > S(0) && x < S(1))) throw NumericError("bce probability outside (0,1)");
    S acc = 0;
    for (size_t i = 0; i < pv.size(); ++i)
        acc += -(tv[i] * std::log(pv[i]) + (S(1) - tv[i]) * std::log(S(1) - pv[i]));
    const S n = static_cast<S>(pv.size());
    Tensor<S> out = Tensor<S>::scalar(acc / n);
    if (detail::grad_wanted<S>({&p})) {
        out.set_requires_grad(true);
        auto pd = p.data(), td = t.data(), od = out.data();
        Tape<S>::current()->record([pd, td, od, n] {
            if (od->g.empty()) return;
            const S go = od->g[0];
            ensure_grad(pd.get());
            for (size_t i = 0; i < pd->v.size(); ++i)
                pd->g[i] += go * (pd->v[i] - td->v[i]) / (pd->v[i] * (S(1) - pd->v[i])) / n;
        });
    }
    return out;
}

// numerically stable bce on raw logits
template <class S>
Tensor<S> bce_logits(const Tensor<S>& z, const Tensor<S>& t) {
    detail::same_shape(z, t, "bce_logits");
    const auto& zv = z.values();
    const auto& tv = t.values();
    S acc = 0;
    for (size_t i = 0; i < zv.size(); ++i) {
        const S x = zv[i];
        acc += std::max(x, S(0)) - x * tv[i] + std::log1p(std::exp(-std::abs(x)));
    }
    const S n = static_cast<S>(zv.size());
    Tensor<S> out = Tensor<S>::scalar(acc / n);
    if (detail::grad_wanted<S>({&z})) {
        out.set_requires_grad(true);
        auto zd = z.data(), td = t.data(), od = out.data();
        Tape<S>::current()->record([zd, td, od, n] {
            if (od->g.empty()) return;
            const S go = od->g[0];
            ensure_grad(zd.get());
            for (size_t i = 0; i < zd->v.size(); ++i) {
                const S sg = S(1) / (S(1) + std::exp(-zd->v[i]));
                zd->g[i] += go * (sg - td->v[i]) / n;
            }
        });
    }
    return out;
}

// ---------------- shape ops ----------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor<S> out(std::move(shape), a.values());
    if (detail::grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape<S>::current()->record([ad, od] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (size_t i = 0; i < od->g.size(); ++i) ad->g[i] += od->g[i];
        });
    }
    return out;
}

template <class S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& perm) {
    const int nd = a.ndim();
    if (static_cast<int>(perm.size()) != nd) throw ShapeError("permute rank mismatch");
    Shape in = a.shape(), out_shape(static_cast<size_t>(nd));
    std::vector<int64_t> in_strides(static_cast<size_t>(nd)), out_strides(static_cast<size_t>(nd));
    int64_t st = 1;
    for (int i = nd - 1; i >= 0; --i) {
        in_strides[static_cast<size_t>(i)] = st;
        st *= in[static_cast<size_t>(i)];
    }
    for (int i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = in[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    st = 1;
    for (int i = nd - 1; i >= 0; --i) {
        out_strides[static_cast<size_t>(i)] = st;
        st *= out_shape[static_cast<size_t>(i)];
    }
    Tensor<S> out(out_shape);
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    const int64_t n = a.numel();
    std::vector<int64_t> idx(static_cast<size_t>(nd));
    for (int64_t lin = 0; lin < n; ++lin) {
        int64_t rem = lin, src = 0;
        for (int i = 0; i < nd; ++i) {
            idx[static_cast<size_t>(i)] = rem / out_strides[static_cast<size_t>(i)];
            rem %= out_strides[static_cast<size_t>(i)];
            src += idx[static_cast<size_t>(i)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
        }
        ov[static_cast<size_t>(lin)] = av[static_cast<size_t>(src)];
    }
    if (detail::grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        auto perm_c = perm;
        auto out_strides_c = out_strides;
        auto in_strides_c = in_strides;
        Tape<S>::current()->record([ad, od, perm_c, out_strides_c, in_strides_c, nd, n] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (int64_t lin = 0; lin < n; ++lin) {
                int64_t rem = lin, src = 0;
                for (int i = 0; i < nd; ++i) {
                    const int64_t id = rem / out_strides_c[static_cast<size_t>(i)];
                    rem %= out_strides_c[static_cast<size_t>(i)];
                    src += id * in_strides_c[static_cast<size_t>(perm_c[static_cast<size_t>(i)])];
                }
                ad->g[static_cast<size_t>(src)] += od->g[static_cast<size_t>(lin)];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    Shape s0 = parts[0].shape();
    int64_t outer, n0, inner;
    detail::axis_decomp(s0, axis, outer, n0, inner);
    if (axis < 0) axis += parts[0].ndim();
    int64_t total = 0;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        if (static_cast<int>(ps.size()) != static_cast<int>(s0.size()))
            throw ShapeError("concat rank mismatch");
        for (size_t i = 0; i < ps.size(); ++i)
            if (static_cast<int>(i) != axis && ps[i] != s0[i])
                throw ShapeError("concat shape mismatch: " + shape_str(ps) + " vs " + shape_str(s0));
        total += ps[static_cast<size_t>(axis)];
    }
    Shape out_shape = s0;
    out_shape[static_cast<size_t>(axis)] = total;
    Tensor<S> out(out_shape);
    auto& ov = out.mutable_values();
    int64_t off = 0;
    std::vector<int64_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const int64_t np = p.shape()[static_cast<size_t>(axis)];
        const auto& pv = p.values();
        for (int64_t o = 0; o < outer; ++o)
            std::copy(pv.begin() + o * np * inner, pv.begin() + (o + 1) * np * inner,
                      ov.begin() + (o * total + off) * inner);
        off += np;
    }
    bool want = false;
    for (const auto& p : parts)
        if (p.requires_grad()) want = true;
    if (want && Tape<S>::current()) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorData<S>>> pds;
        std::vector<int64_t> ns;
        for (const auto& p : parts) {
            pds.push_back(p.data());
            ns.push_back(p.shape()[static_cast<size_t>(axis)]);
        }
        auto od = out.data();
        Tape<S>::current()->record([pds, ns, offsets, od, outer, inner, total] {
            if (od->g.empty()) return;
            for (size_t pi = 0; pi < pds.size(); ++pi) {
                auto* d = pds[pi].get();
                if (!d->requires_grad) continue;
                ensure_grad(d);
                const int64_t np = ns[pi];
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < np * inner; ++i)
                        d->g[static_cast<size_t>(o * np * inner + i)] +=
                            od->g[static_cast<size_t>((o * total + offsets[pi]) * inner + i)];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, int64_t start, int64_t len) {
    int64_t outer, n, inner;
    detail::axis_decomp(a.shape(), axis, outer, n, inner);
    if (axis < 0) axis += a.ndim();
    if (start < 0 || len <= 0 || start + len > n)
        throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for axis size " + std::to_string(n));
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor<S> out(out_shape);
    const auto& av = a.values();
    auto& ov = out.mutable_values();
    for (int64_t o = 0; o < outer; ++o)
        std::copy(av.begin() + (o * n + start) * inner, av.begin() + (o * n + start + len) * inner,
                  ov.begin() + o * len * inner);
    if (detail::grad_wanted<S>({&a})) {
        out.set_requires_grad(true);
        auto ad = a.data(), od = out.data();
        Tape<S>::current()->record([ad, od, outer, n, inner, start, len] {
            if (od->g.empty()) return;
            ensure_grad(ad.get());
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < len * inner; ++i)
                    ad->g[static_cast<size_t>((o * n + start) * inner + i)] +=
                        od->g[static_cast<size_t>(o * len * inner + i)];
        });
    }
    return out;
}

// ---------------- structured adds ----------------

// x [N,K] + b [K]
template <class S>
Tensor<S> add_row(const Tensor<S>& x, const Tensor<S>& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw ShapeError("add_row: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const int64_t N = x.dim(0), K = x.dim(1);
    Tensor<S> out(x.shape());
    const auto& xv = x.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < K; ++j) ov[static_cast<size_t>(i * K + j)] = xv[static_cast<size_t>(i * K + j)] + bv[static_cast<size_t>(j)];
    if (detail::grad_wanted<S>({&x, &b})) {
        out.set_requires_grad(true);
        auto xd = x.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([xd, bd, od, N, K] {
            if (od->g.empty()) return;
            if (xd->requires_grad) {
                ensure_grad(xd.get());
                for (size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i];
            }
            if (bd->requires_grad) {
                ensure_grad(bd.get());
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < K; ++j) bd->g[static_cast<size_t>(j)] += od->g[static_cast<size_t>(i * K + j)];
            }
        });
    }
    return out;
}

// x [B,C,H,W] + b [C] (per-channel bias / time-embedding injection)
template <class S>
Tensor<S> add_chan(const Tensor<S>& x, const Tensor<S>& b) {
    if (x.ndim() != 4 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw ShapeError("add_chan: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<S> out(x.shape());
    const auto& xv = x.values();
    const auto& bv = b.values();
    auto& ov = out.mutable_values();
    for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const S bc = bv[static_cast<size_t>(c)];
            const int64_t base = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) ov[static_cast<size_t>(base + i)] = xv[static_cast<size_t>(base + i)] + bc;
        }
    if (detail::grad_wanted<S>({&x, &b})) {
        out.set_requires_grad(true);
        auto xd = x.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([xd, bd, od, B, C, HW] {
            if (od->g.empty()) return;
            if (xd->requires_grad) {
                ensure_grad(xd.get());
                for (size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i];
            }
            if (bd->requires_grad) {
                ensure_grad(bd.get());
                for (int64_t n = 0; n < B; ++n)
                    for (int64_t c = 0; c < C; ++c) {
                        const int64_t base = (n * C + c) * HW;
                        S acc = 0;
                        for (int64_t i = 0; i < HW; ++i) acc += od->g[static_cast<size_t>(base + i)];
                        bd->g[static_cast<size_t>(c)] += acc;
                    }
            }
        });
    }
    return out;
}

// ---------------- matmul ----------------

// a [.., m, p] x b [.., p, n]; batch dims must match, or b may be 2-D
// (broadcast over a's batch).
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul needs rank >= 2: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t m = a.dim(a.ndim() - 2), p = a.dim(a.ndim() - 1);
    const int64_t p2 = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
    if (p != p2)
        throw ShapeError("matmul inner dims disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    const bool b_bcast = bbatch.empty() && !abatch.empty();
    if (!b_bcast && abatch != bbatch)
        throw ShapeError("matmul batch dims disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t nb = numel_of(abatch);
    Shape out_shape = abatch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<S> out(out_shape);
    const S* av = a.values().data();
    const S* bv = b.values().data();
    S* ov = out.mutable_values().data();
    for (int64_t i = 0; i < nb; ++i)
        detail::gemm_nn(m, n, p, av + i * m * p, b_bcast ? bv : bv + i * p * n, ov + i * m * n,
                        false);
    if (detail::grad_wanted<S>({&a, &b})) {
        out.set_requires_grad(true);
        auto ad = a.data(), bd = b.data(), od = out.data();
        Tape<S>::current()->record([ad, bd, od, m, n, p, nb, b_bcast] {
            if (od->g.empty()) return;
            if (ad->requires_grad) {
                ensure_grad(ad.get());
                for (int64_t i = 0; i < nb; ++i)
                    detail::gemm_nt(m, p, n, od->g.data() + i * m * n,
                                    b_bcast ? bd->v.data() : bd->v.data() + i * p * n,
                                    ad->g.data() + i * m * p, true);
            }
            if (bd->requires_grad) {
                ensure_grad(bd.get());
                for (int64_t i = 0; i < nb; ++i)
                    detail::gemm_tn(p, n, m, ad->v.data() + i * m * p, od->g.data() + i * m * n,
                                    b_bcast ? bd->g.data() : bd->g.data() + i * p * n, true);
            }
        });
    }
    return out;
}

// ---------------- softmax ----------------

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
    for (S v : x.values())
        if (std::isnan(static_cast<double>(v))) throw NumericError("softmax input contains NaN");
    int64_t outer, n, inner;
    detail::axis_decomp(x.shape(), axis, outer, n, inner);
    Tensor<S> out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            S mx = xv[static_cast<size_t>(base)];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xv[static_cast<size_t>(base + i * inner)]);
            S denom = 0;
            for (int64_t i = 0; i < n; ++i) {
                const S e = std::exp(xv[static_cast<size_t>(base + i * inner)] - mx);
                ov[static_cast<size_t>(base + i * inner)] = e;
                denom += e;
            }
            for (int64_t i = 0; i < n; ++i) ov[static_cast<size_t>(base + i * inner)] /= denom;
        }
    if (detail::grad_wanted<S>({&x})) {
        out.set_requires_grad(true);
        auto xd = x.data(), od = out.data();
        Tape<S>::current()->record([xd, od, outer, n, inner] {
            if (od->g.empty()) return;
            ensure_grad(xd.get());
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * n * inner + in;
                    S dot = 0;
                    for (int64_t i = 0; i < n; ++i)
                        dot += od->g[static_cast<size_t>(base + i * inner)] * od->v[static_cast<size_t>(base + i * inner)];
                    for (int64_t i = 0; i < n; ++i)
                        xd->g[static_cast<size_t>(base + i * inner)] +=
                            od->v[static_cast<size_t>(base + i * inner)] *
                            (od->g[static_cast<size_t>(base + i * inner)] - dot);
                }
        });
    }
    return out;
}

// softmax over the last dim with a key mask: masked positions get -inf
// logits, i.e. exactly zero weight. A fully masked row is a contract error.
template <class S>
Tensor<S> masked_softmax_lastdim(const Tensor<S>& x, const std::vector<char>& keep) {
    const int64_t n = x.dim(x.ndim() - 1);
    if (static_cast<int64_t>(keep.size()) != n)
        throw ShapeError("mask length " + std::to_string(keep.size()) + " vs last dim " +
                         std::to_string(n));
    bool any = false;
    for (char c : keep) any = any || c;
    if (!any) throw ContractError("masked softmax with all positions masked");
    for (S v : x.values())
        if (std::isnan(static_cast<double>(v))) throw NumericError("softmax input contains NaN");
    const int64_t rows = x.numel() / n;
    Tensor<S> out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * n;
        S mx = -std::numeric_limits<S>::infinity();
        for (int64_t i = 0; i < n; ++i)
            if (keep[static_cast<size_t>(i)]) mx = std::max(mx, xv[static_cast<size_t>(base + i)]);
        S denom = 0;
        for (int64_t i = 0; i < n; ++i) {
            if (!keep[static_cast<size_t>(i)]) {
                ov[static_cast<size_t>(base + i)] = 0;
                continue;
            }
            const S e = std::exp(xv[static_cast<size_t>(base + i)] - mx);
            ov[static_cast<size_t>(base + i)] = e;
            denom += e;
        }
        for (int64_t i = 0; i < n; ++i) ov[static_cast<size_t>(base + i)] /= denom;
    }
    if (detail::grad_wanted<S>({&x})) {
        out.set_requires_grad(true);
        auto xd = x.data(), od = out.data();
        auto keep_c = keep;
        Tape<S>::current()->record([xd, od, keep_c, rows, n] {
            if (od->g.empty()) return;
            ensure_grad(xd.get());
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t base = r * n;
                S dot = 0;
                for (int64_t i = 0; i < n; ++i)
                    dot += od->g[static_cast<size_t>(base + i)] * od->v[static_cast<size_t>(base + i)];
                for (int64_t i = 0; i < n; ++i) {
                    if (!keep_c[static_cast<size_t>(i)]) continue;
                    xd->g[static_cast<size_t>(base + i)] +=
                        od->v[static_cast<size_t>(base + i)] * (od->g[static_cast<size_t>(base + i)] - dot);
                }
            }
        });
    }
    return out;
}

// ---------------- normalizations ----------------

// layer norm over the last dimension
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = 1e-5) {
    const int64_t K = x.dim(x.ndim() - 1);
    if (gamma.numel() != K || beta.numel() != K)
        throw ShapeError("layer_norm affine params must have length " + std::to_string(K));
    const int64_t rows = x.numel() / K;
    Tensor<S> out(x.shape());
    std::vector<S> mu(static_cast<size_t>(rows)), rstd(static_cast<size_t>(rows));
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto& ov = out.mutable_values();
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * K;
        S m = 0;
        for (int64_t i = 0; i < K; ++i) m += xv[static_cast<size_t>(base + i)];
        m /= static_cast<S>(K);
        S var = 0;
        for (int64_t i = 0; i < K; ++i) {
            const S d = xv[static_cast<size_t>(base + i)] - m;
            var += d * d;
        }
        var /= static_cast<S>(K);
        const S rs = S(1) / std::sqrt(var + static_cast<S>(eps));
        mu[static_cast<size_t>(r)] = m;
        rstd[static_cast<size_t>(r)] = rs;
        for (int64_t i = 0; i < K; ++i)
            ov[static_cast<size_t>(base + i)] =
                gv[static_cast<size_t>(i)] * (xv[static_cast<size_t>(base + i)] - m) * rs + bv[static_cast<size_t>(i)];
    }
    if (detail::grad_wanted<S>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xd = x.data(), gd = gamma.data(), bd = beta.data(), od = out.data();
        Tape<S>::current()->record([xd, gd, bd, od, mu, rstd, rows, K] {
            if (od->g.empty()) return;
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t base = r * K;
                const S m = mu[static_cast<size_t>(r)], rs = rstd[static_cast<size_t>(r)];
                if (gd->requires_grad || bd->requires_grad) {
                    if (gd->requires_grad) ensure_grad(gd.get());
                    if (bd->requires_grad) ensure_grad(bd.get());
                    for (int64_t i = 0; i < K; ++i) {
                        const S go = od->g[static_cast<size_t>(base + i)];
                        const S xh = (xd->v[static_cast<size_t>(base + i)] - m) * rs;
                        if (gd->requires_grad) gd->g[static_cast<size_t>(i)] += go * xh;
                        if (bd->requires_grad) bd->g[static_cast<size_t>(i)] += go;
                    }
                }
                if (xd->requires_grad) {
                    ensure_grad(xd.get());
                    S s1 = 0, s2 = 0;  // means of dyh and dyh*xh
                    for (int64_t i = 0; i < K; ++i) {
                        const S dyh = od->g[static_cast<size_t>(base + i)] * gd->v[static_cast<size_t>(i)];
                        const S xh = (xd->v[static_cast<size_t>(base + i)] - m) * rs;
                        s1 += dyh;
                        s2 += dyh * xh;
                    }
                    s1 /= static_cast<S>(K);
                    s2 /= static_cast<S>(K);
                    for (int64_t i = 0; i < K; ++i) {
                        const S dyh = od->g[static_cast<size_t>(base + i)] * gd->v[static_cast<size_t>(i)];
                        const S xh = (xd->v[static_cast<size_t>(base + i)] - m) * rs;
                        xd->g[static_cast<size_t>(base + i)] += rs * (dyh - s1 - xh * s2);
                    }
                }
            }
        });
    }
    return out;
}

// group norm on [B,C,H,W]; per-group mean 0 / var 1 before affine, eps 1e-5
template <class S>
Tensor<S> group_norm(const Tensor<S>& x, int groups, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps = 1e-5) {
    if (x.ndim() != 4) throw ShapeError("group_norm expects [B,C,H,W], got " + shape_str(x.shape()));
    const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (groups <= 0 || C % groups != 0)
        throw ConfigError("channel count " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(groups));
    if (gamma.numel() != C || beta.numel() != C)
        throw ShapeError("group_norm affine params must have length " + std::to_string(C));
    const int64_t cg = C / groups;     // channels per group
    const int64_t gs = cg * HW;        // elements per group
    Tensor<S> out(x.shape());
    std::vector<S> mu(static_cast<size_t>(B * groups)), rstd(static_cast<size_t>(B * groups));
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto& ov = out.mutable_values();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t g = 0; g < groups; ++g) {
            const int64_t base = (b * C + g * cg) * HW;
            S m = 0;
            for (int64_t i = 0; i < gs; ++i) m += xv[static_cast<size_t>(base + i)];
            m /= static_cast<S>(gs);
            S var = 0;
            for (int64_t i = 0; i < gs; ++i) {
                const S d = xv[static_cast<size_t>(base + i)] - m;
                var += d * d;
            }
            var /= static_cast<S>(gs);
            const S rs = S(1) / std::sqrt(var + static_cast<S>(eps));
            mu[static_cast<size_t>(b * groups + g)] = m;
            rstd[static_cast<size_t>(b * groups + g)] = rs;
            for (int64_t c = 0; c < cg; ++c) {
                const S ga = gv[static_cast<size_t>(g * cg + c)], be = bv[static_cast<size_t>(g * cg + c)];
                const int64_t cb = base + c * HW;
                for (int64_t i = 0; i < HW; ++i)
                    ov[static_cast<size_t>(cb + i)] = ga * (xv[static_cast<size_t>(cb + i)] - m) * rs + be;
            }
        }
    if (detail::grad_wanted<S>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xd = x.data(), gd = gamma.data(), bd = beta.data(), od = out.data();
        Tape<S>::current()->record([xd, gd, bd, od, mu, rstd, B, C, HW, groups, cg, gs] {
            if (od->g.empty()) return;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t g = 0; g < groups; ++g) {
                    const int64_t base = (b * C + g * cg) * HW;
                    const S m = mu[static_cast<size_t>(b * groups + g)], rs = rstd[static_cast<size_t>(b * groups + g)];
                    if (gd->requires_grad || bd->requires_grad) {
                        if (gd->requires_grad) ensure_grad(gd.get());
                        if (bd->requires_grad) ensure_grad(bd.get());
                        for (int64_t c = 0; c < cg; ++c) {
                            const int64_t cb = base + c * HW;
                            S sg = 0, sb = 0;
                            for (int64_t i = 0; i < HW; ++i) {
                                const S go = od->g[static_cast<size_t>(cb + i)];
                                sg += go * (xd->v[static_cast<size_t>(cb + i)] - m) * rs;
                                sb += go;
                            }
                            if (gd->requires_grad) gd->g[static_cast<size_t>(g * cg + c)] += sg;
                            if (bd->requires_grad) bd->g[static_cast<size_t>(g * cg + c)] += sb;
                        }
                    }
                    if (xd->requires_grad) {
                        ensure_grad(xd.get());
                        S s1 = 0, s2 = 0;
                        for (int64_t c = 0; c < cg; ++c) {
                            const S ga = gd->v[static_cast<size_t>(g * cg + c)];
                            const int64_t cb = base + c * HW;
                            for (int64_t i = 0; i < HW; ++i) {
                                const S dyh = od->g[static_cast<size_t>(cb + i)] * ga;
                                const S xh = (xd->v[static_cast<size_t>(cb + i)] - m) * rs;
                                s1 += dyh;
                                s2 += dyh * xh;
                            }
                        }
                        s1 /= static_cast<S>(gs);
                        s2 /= static_cast<S>(gs);
                        for (int64_t c = 0; c < cg; ++c) {
                            const S ga = gd->v[static_cast<size_t>(g * cg + c)];
                            const int64_t cb = base + c * HW;
                            for (int64_t i = 0; i < HW; ++i) {
                                const S dyh = od->g[static_cast<size_t>(cb + i)] * ga;
                                const S xh = (xd->v[static_cast<size_t>(cb + i)] - m) * rs;
                                xd->g[static_cast<size_t>(cb + i)] += rs * (dyh - s1 - xh * s2);
                            }
                        }
                    }
                }
        });
    }
    return out;
}

// ---------------- misc ----------------

// whole-tensor L2 normalization (identity embeddings)
template <class S>
Tensor<S> l2_normalize(const Tensor<S>& x, double eps = 1e-12) {
    const auto& xv = x.values();
    S ss = 0;
    for (S v : xv) ss += v * v;
    const S r = std::sqrt(ss + static_cast<S>(eps));
    Tensor<S> out(x.shape());
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] / r;
    if (detail::grad_wanted<S>({&x})) {
        out.set_requires_grad(true);
        auto xd = x.data(), od = out.data();
        Tape<S>::current()->record([xd, od, r] {
            if (od->g.empty()) return;
            ensure_grad(xd.get());
            S dot = 0;
            for (size_t i = 0; i < od->g.size(); ++i) dot += od->g[i] * od->v[i];
            for (size_t i = 0; i < od->g.size(); ++i)
                xd->g[i] += (od->g[i] - od->v[i] * dot) / r;
        });
    }
    return out;
}

// rows of an embedding table by id, with scatter-add backward
template <class S>
Tensor<S> embedding(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw ShapeError("embedding table must be 2-D");
    const int64_t V = table.dim(0), K = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= V) throw ShapeError("embedding id " + std::to_string(id) + " out of range");
    Tensor<S> out({static_cast<int64_t>(ids.size()), K});
    const auto& tv = table.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(tv.begin() + ids[i] * K, tv.begin() + (ids[i] + 1) * K, ov.begin() + static_cast<int64_t>(i) * K);
    if (detail::grad_wanted<S>({&table})) {
        out.set_requires_grad(true);
        auto td = table.data(), od = out.data();
        auto ids_c = ids;
        Tape<S>::current()->record([td, od, ids_c, K] {
            if (od->g.empty()) return;
            ensure_grad(td.get());
            for (size_t i = 0; i < ids_c.size(); ++i)
                for (int64_t j = 0; j < K; ++j)
                    td->g[static_cast<size_t>(ids_c[i] * K + j)] += od->g[static_cast<size_t>(static_cast<int64_t>(i) * K + j)];
        });
    }
    return out;
}

// x / s where s is a scalar tensor (soft-argmax normalization)
template <class S>
Tensor<S> div_scalar_t(const Tensor<S>& x, const Tensor<S>& s) {
    if (s.numel() != 1) throw ShapeError("div_scalar_t divisor must be scalar");
    const S sv = s.item();
    if (sv == S(0)) throw NumericError("division by zero");
    Tensor<S> out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.mutable_values();
    for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] / sv;
    if (detail::grad_wanted<S>({&x, &s})) {
        out.set_requires_grad(true);
        auto xd = x.data(), sd = s.data(), od = out.data();
        Tape<S>::current()->record([xd, sd, od, sv] {
            if (od->g.empty()) return;
            if (xd->requires_grad) {
                ensure_grad(xd.get());
                for (size_t i = 0; i < od->g.size(); ++i) xd->g[i] += od->g[i] / sv;
            }
            if (sd->requires_grad) {
                ensure_grad(sd.get());
                S acc = 0;
                for (size_t i = 0; i < od->g.size(); ++i) acc += od->g[i] * (-xd->v[i] / (sv * sv));
                sd->g[0] += acc;
            }
        });
    }
    return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace df
