#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "denseface/conv_ops.hpp"
#include "denseface/gradcheck.hpp"
#include "denseface/init.hpp"
#include "denseface/tensor.hpp"

using namespace df;

// independent triple-loop oracle for matmul
static std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                         int m, int p, int n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < p; ++k)
                c[static_cast<size_t>(i * n + j)] += a[static_cast<size_t>(i * p + k)] * b[static_cast<size_t>(k * n + j)];
    return c;
}

// direct 6-nested-loop conv oracle
static std::vector<double> conv_oracle(const std::vector<double>& x, const std::vector<double>& w,
                                       int B, int C, int H, int W, int O, int kh, int kw,
                                       int stride, int pad) {
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> y(static_cast<size_t>(B * O * OH * OW), 0.0);
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = 0;
                    for (int c = 0; c < C; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[static_cast<size_t>(((b * C + c) * H + iy) * W + ix)] *
                                       w[static_cast<size_t>(((o * C + c) * kh + ky) * kw + kx)];
                            }
                    y[static_cast<size_t>(((b * O + o) * OH + oy) * OW + ox)] = acc;
                }
    return y;
}

TEST_CASE("matmul identity and 1x1") {
    TensorF a({2, 2}, {1, 2, 3, 4});
    TensorF eye({2, 2}, {1, 0, 0, 1});
    auto c = matmul(a, eye);
    CHECK(c.values() == std::vector<float>{1, 2, 3, 4});
    TensorF x({1, 1}, {2}), y({1, 1}, {3});
    CHECK(matmul(x, y).item() == doctest::Approx(6));
}

TEST_CASE("matmul matches triple-loop oracle over 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const int m = 1 + static_cast<int>(rng.uniform_int(5));
        const int p = 1 + static_cast<int>(rng.uniform_int(5));
        const int n = 1 + static_cast<int>(rng.uniform_int(5));
        auto a = randn<float>({m, p}, rng);
        auto b = randn<float>({p, n}, rng);
        auto c = matmul(a, b);
        std::vector<double> ad(a.values().begin(), a.values().end());
        std::vector<double> bd(b.values().begin(), b.values().end());
        auto ref = matmul_oracle(ad, bd, m, p, n);
        for (int64_t i = 0; i < c.numel(); ++i)
            CHECK(std::abs(c.at(i) - ref[static_cast<size_t>(i)]) < 1e-5);
    }
}

TEST_CASE("matmul shape errors name both shapes") {
    TensorF a({2, 3}), b({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("batched matmul broadcast") {
    Rng rng(7);
    auto a = randn<float>({3, 2, 4}, rng);
    auto b = randn<float>({4, 5}, rng);
    auto c = matmul(a, b);
    CHECK(c.shape() == Shape{3, 2, 5});
    for (int64_t i = 0; i < 3; ++i) {
        auto ai = slice(a, 0, i, 1);
        auto ci = matmul(reshape(ai, {2, 4}), b);
        for (int64_t j = 0; j < 10; ++j)
            CHECK(c.at(i * 10 + j) == doctest::Approx(ci.at(j)).epsilon(1e-6));
    }
}

TEST_CASE("softmax basics") {
    // constant input -> uniform
    TensorF c({4}, {3.5f, 3.5f, 3.5f, 3.5f});
    auto s = softmax(c, 0);
    for (int i = 0; i < 4; ++i) CHECK(s.at(i) == doctest::Approx(0.25));
    // [0, ln 3] -> [0.25, 0.75]
    TensorF x({2}, {0.0f, std::log(3.0f)});
    auto s2 = softmax(x, 0);
    CHECK(s2.at(0) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(s2.at(1) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax shift invariance and row sums") {
    Rng rng(11);
    auto x = randn<float>({5, 7}, rng);
    auto a = softmax(x, 1);
    auto b = softmax(add_scalar(x, 10.0), 1);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(std::abs(a.at(i) - b.at(i)) < 1e-6);
    for (int64_t r = 0; r < 5; ++r) {
        float acc = 0;
        for (int64_t j = 0; j < 7; ++j) acc += a.at(r * 7 + j);
        CHECK(std::abs(acc - 1.0f) < 1e-6);
        for (int64_t j = 0; j < 7; ++j) CHECK(a.at(r * 7 + j) >= 0.0f);
    }
}

TEST_CASE("softmax NaN input is a numeric error") {
    TensorF x({2}, {0.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(softmax(x, 0), NumericError);
}

TEST_CASE("conv2d trivial cases") {
    // 1x1 identity kernel
    Rng rng(3);
    auto img = randn<float>({1, 1, 4, 4}, rng);
    TensorF k({1, 1, 1, 1}, {1.0f});
    auto y = conv2d(img, k, 1, 0);
    CHECK(y.values() == img.values());
    // all-ones 3x3 on constant-5 image -> 45 interior
    auto five = TensorF::full({1, 1, 5, 5}, 5.0f);
    auto ones = TensorF::full({1, 1, 3, 3}, 1.0f);
    auto z = conv2d(five, ones, 1, 0);
    CHECK(z.shape() == Shape{1, 1, 3, 3});
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(z.at(i) == doctest::Approx(45.0));
}

TEST_CASE("conv2d matches nested-loop oracle over 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 1000);
        const int B = 1 + static_cast<int>(rng.uniform_int(2));
        const int C = 1 + static_cast<int>(rng.uniform_int(3));
        const int O = 1 + static_cast<int>(rng.uniform_int(3));
        const int H = 3 + static_cast<int>(rng.uniform_int(4));
        const int W = 3 + static_cast<int>(rng.uniform_int(4));
        const int k = 1 + 2 * static_cast<int>(rng.uniform_int(2));  // 1 or 3
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        const int pad = static_cast<int>(rng.uniform_int(2));
        auto x = randn<float>({B, C, H, W}, rng);
        auto w = randn<float>({O, C, k, k}, rng);
        auto y = conv2d(x, w, stride, pad);
        std::vector<double> xd(x.values().begin(), x.values().end());
        std::vector<double> wd(w.values().begin(), w.values().end());
        auto ref = conv_oracle(xd, wd, B, C, H, W, O, k, k, stride, pad);
        REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(std::abs(y.at(i) - ref[static_cast<size_t>(i)]) < 1e-5);
    }
}

TEST_CASE("conv2d kernel larger than padded input") {
    TensorF x({1, 1, 2, 2}), w({1, 1, 5, 5});
    CHECK_THROWS_AS(conv2d(x, w, 1, 0), ShapeError);
}

TEST_CASE("elementwise examples") {
    CHECK(silu(TensorF::scalar(0.0f)).item() == doctest::Approx(0.0));
    Rng rng(5);
    auto x = randn<float>({3, 3}, rng);
    CHECK(mse(x, x).item() == doctest::Approx(0.0));
    CHECK(bce(TensorF::scalar(0.5f), TensorF::scalar(1.0f)).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-5));
    CHECK_THROWS_AS(bce(TensorF::scalar(0.0f), TensorF::scalar(1.0f)), NumericError);
    CHECK_THROWS_AS(add(TensorF({2}), TensorF({3})), ShapeError);
}

TEST_CASE("group_norm analytic cases") {
    auto gamma = TensorF::full({4}, 1.0f);
    auto beta = TensorF::zeros({4});
    // constant input -> ~0
    auto x = TensorF::full({1, 4, 3, 3}, 2.5f);
    auto y = group_norm(x, 2, gamma, beta);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.at(i)) < 1e-3);
    // gamma=0, beta=7 -> constant 7
    auto y2 = group_norm(x, 2, TensorF::zeros({4}), TensorF::full({4}, 7.0f));
    for (int64_t i = 0; i < y2.numel(); ++i) CHECK(y2.at(i) == doctest::Approx(7.0));
    CHECK_THROWS_AS(group_norm(x, 3, gamma, beta), ConfigError);
}

TEST_CASE("group_norm moments vs scalar-loop recomputation") {
    Rng rng(17);
    auto x = randn<float>({2, 4, 5, 5}, rng);
    auto y = group_norm(x, 2, TensorF::full({4}, 1.0f), TensorF::zeros({4}));
    // pre-affine (gamma=1,beta=0): per-group mean ~0, var ~1
    for (int b = 0; b < 2; ++b)
        for (int g = 0; g < 2; ++g) {
            double m = 0, v = 0;
            for (int c = 0; c < 2; ++c)
                for (int i = 0; i < 25; ++i)
                    m += y.at(((b * 4 + g * 2 + c) * 25) + i);
            m /= 50.0;
            for (int c = 0; c < 2; ++c)
                for (int i = 0; i < 25; ++i) {
                    const double d = y.at(((b * 4 + g * 2 + c) * 25) + i) - m;
                    v += d * d;
                }
            v /= 50.0;
            CHECK(std::abs(m) < 1e-5);
            CHECK(std::abs(v - 1.0) < 1e-3);
        }
}

TEST_CASE("resample ops") {
    auto c = TensorF::full({1, 2, 4, 4}, 3.25f);
    auto p = avg_pool2(c);
    for (int64_t i = 0; i < p.numel(); ++i) CHECK(p.at(i) == doctest::Approx(3.25));
    // upsample then pool is identity
    Rng rng(23);
    auto x = randn<float>({1, 3, 4, 4}, rng);
    auto rt = avg_pool2(nearest_upsample2(x));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(rt.at(i) == doctest::Approx(x.at(i)));
    TensorF q({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(avg_pool2(q).item() == doctest::Approx(2.5));
    CHECK_THROWS_AS(avg_pool2(TensorF({1, 1, 3, 3})), ShapeError);
}

TEST_CASE("backward: sum of squares") {
    TensorF x({3}, {1.0f, -2.0f, 3.0f});
    x.set_requires_grad(true);
    Tape<float> tape;
    auto loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad() == std::vector<float>{2.0f, -4.0f, 6.0f});
}

TEST_CASE("backward contract errors") {
    TensorF x({3}, {1.0f, 2.0f, 3.0f});
    x.set_requires_grad(true);
    {
        Tape<float> tape;
        auto y = mul(x, x);
        CHECK_THROWS_AS(tape.backward(y), ContractError);  // non-scalar
    }
    {
        Tape<float> tape;
        x.zero_grad();
        auto loss = sum(mul(x, x));
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), StateError);  // consumed
    }
    // detached tensor gets no grad
    TensorF d = x.detach();
    {
        Tape<float> tape;
        auto loss = sum(mul(d, d));
        CHECK_THROWS_AS(tape.backward(loss), StateError);  // nothing recorded
    }
    CHECK(!d.has_grad());
}

TEST_CASE("backward matmul vs finite differences (f64)") {
    Rng rng(29);
    auto A = randn<double>({3, 4}, rng);
    auto B = randn<double>({4, 2}, rng);
    B.set_requires_grad(true);
    double err = grad_check([&](const TensorD& a) { return sum(matmul(a, B)); }, A);
    CHECK(err < 1e-6);
    double err2 = grad_check([&](const TensorD& b) { return sum(matmul(A, b)); }, B);
    CHECK(err2 < 1e-6);
}

TEST_CASE("grad_check harness self-tests") {
    Rng rng(31);
    auto x = randn<double>({6}, rng);
    // identity -> error 0 is not well defined for non-scalar; use sum
    CHECK(grad_check([](const TensorD& t) { return sum(t); }, x) == doctest::Approx(0.0));
    // softmax then sum of squares
    double err = grad_check([](const TensorD& t) {
        auto s = softmax(t, 0);
        return sum(mul(s, s));
    }, x);
    CHECK(err < 1e-6);
}

TEST_CASE("pointwise ops pass grad_check at 1e-6") {
    Rng rng(37);
    auto x = randn<double>({2, 5}, rng);
    auto t = rand_uniform<double>({2, 5}, rng, 0.1, 0.9);
    auto check = [&](const char* name, std::function<TensorD(const TensorD&)> f) {
        INFO(name);
        CHECK(grad_check(f, x) < 1e-6);
    };
    check("silu", [](const TensorD& v) { return sum(silu(v)); });
    check("sigmoid", [](const TensorD& v) { return sum(mul(sigmoid(v), sigmoid(v))); });
    check("exp", [](const TensorD& v) { return sum(exp_(v)); });
    check("tanh", [](const TensorD& v) { return sum(tanh_(v)); });
    check("mse", [&](const TensorD& v) { return mse(v, t); });
    check("l1-ish", [&](const TensorD& v) { return l1(add_scalar(v, 10.0), t); });
    check("bce_logits", [&](const TensorD& v) { return bce_logits(v, t); });
    check("layer_norm", [&](const TensorD& v) {
        return sum(mul(layer_norm(v, TensorD::full({5}, 1.3), TensorD::full({5}, 0.2)),
                       TensorD({2, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10})));
    });
    check("l2_normalize", [](const TensorD& v) {
        return sum(mul(l2_normalize(v), TensorD({2, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10})));
    });
    // positive-domain ops
    auto pos = rand_uniform<double>({2, 5}, rng, 0.2, 3.0);
    CHECK(grad_check([](const TensorD& v) { return sum(log_(v)); }, pos) < 1e-6);
    CHECK(grad_check([](const TensorD& v) { return sum(sqrt_(v)); }, pos) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) { return bce(clamp(sigmoid(v), 1e-7, 1.0 - 1e-7), t); }, x) < 1e-6);
}

TEST_CASE("structured ops pass grad_check") {
    Rng rng(41);
    auto x = randn<double>({1, 4, 4, 4}, rng);
    auto w = randn<double>({3, 4, 3, 3}, rng);
    auto cw = randn<double>({4}, rng);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(conv2d(v, w, 1, 1), conv2d(v, w, 1, 1))); }, x) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(conv2d(x, v, 2, 1), conv2d(x, v, 2, 1))); }, w) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(avg_pool2(v), avg_pool2(v))); }, x) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) { return mse(nearest_upsample2(v), TensorD::full({1, 4, 8, 8}, 0.3)); }, x) < 1e-6);
    auto gn_w = randn<double>({1, 4, 4, 4}, rng);
    CHECK(grad_check([&](const TensorD& v) {
        return sum(mul(group_norm(v, 2, TensorD::full({4}, 1.1), TensorD::full({4}, 0.1)), gn_w));
    }, x) < 1e-5);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(add_chan(v, cw), add_chan(v, cw))); }, x) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(add_chan(x, v), add_chan(x, v))); }, cw) < 1e-6);
    auto m = randn<double>({6, 3}, rng);
    auto row = randn<double>({3}, rng);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(add_row(m, v), add_row(m, v))); }, row) < 1e-6);
    // concat + slice + permute + embedding
    auto a = randn<double>({2, 3}, rng);
    CHECK(grad_check([&](const TensorD& v) {
        auto c = concat<double>({v, a}, 0);
        return sum(mul(c, c));
    }, a) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) { return sum(mul(slice(v, 1, 1, 2), slice(v, 1, 1, 2))); }, a) < 1e-6);
    CHECK(grad_check([&](const TensorD& v) {
        auto p = permute(v, {1, 0});
        return sum(mul(p, p));
    }, a) < 1e-6);
    auto table = randn<double>({5, 3}, rng);
    CHECK(grad_check([&](const TensorD& v) {
        auto e = embedding(v, {0, 3, 3, 1});
        return sum(mul(e, e));
    }, table) < 1e-6);
    // masked softmax
    auto logits = randn<double>({4, 6}, rng);
    std::vector<char> keep = {1, 1, 0, 1, 0, 1};
    CHECK(grad_check([&](const TensorD& v) {
        auto s = masked_softmax_lastdim(v, keep);
        return sum(mul(s, s));
    }, logits) < 1e-6);
}

TEST_CASE("masked softmax semantics") {
    TensorD x({1, 3}, {5.0, 1.0, 2.0});
    std::vector<char> keep = {1, 0, 1};
    auto s = masked_softmax_lastdim(x, keep);
    CHECK(s.at(1) == 0.0);
    CHECK(s.at(0) + s.at(2) == doctest::Approx(1.0));
    CHECK_THROWS_AS(masked_softmax_lastdim(x, std::vector<char>{0, 0, 0}), ContractError);
}

TEST_CASE("forward determinism within one build") {
    Rng rng(43);
    auto x = randn<float>({2, 8, 6, 6}, rng);
    auto w = randn<float>({4, 8, 3, 3}, rng);
    auto y1 = conv2d(x, w, 1, 1);
    auto y2 = conv2d(x, w, 1, 1);
    CHECK(y1.values() == y2.values());
}
