#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "denseface/gradcheck.hpp"
#include "denseface/model.hpp"

using namespace df;

namespace {

UNetConfig tiny_cfg() {
    UNetConfig c;
    c.base = 8;
    c.mults = {1, 2};
    c.blocks = 1;
    c.attn_start_level = 1;
    c.heads = 2;
    c.img = 16;
    c.time_dim = 16;
    c.cond_k = 16;
    return c;
}

CondDims tiny_dims() { return {16, 8, 6}; }

template <class S>
ConditionBundle<S> tiny_bundle(const Model<S>& m, GenMode mode, const std::array<double, 8>& idp,
                               PoseCondition pose = {}) {
    auto ids = tokenize("a face", m.vocab, m.dims.L);
    auto text = encode_text(ids, m.text, m.vocab.pad());
    Tensor<S> cp, pt;
    if (m.has_extras) {
        auto e = identity_text_embedding(m.oracle(idp), m.lambda, m.id_mlp, m.face_embedding());
        cp = e.c_prime;
        pt = pose_token(pose, m.pose_proj);
    } else {
        cp = m.face_embedding();
        pt = Tensor<S>::zeros({m.dims.k});
    }
    return build_condition(text, text_keep_mask(ids, m.vocab.pad()), cp, pt, mode);
}

}  // namespace

TEST_CASE("config validation") {
    auto c = tiny_cfg();
    CHECK_NOTHROW(c.validate());
    c.img = 15;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_cfg();
    c.base = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_cfg();
    c.heads = 3;  // 8 not divisible by 3
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("time embedding: sinusoid closed form, distinct timesteps") {
    auto s = time_sinusoid<float>(7, 16);
    for (int j = 0; j < 8; ++j) {
        const double freq = std::exp(-std::log(10000.0) * j / 8.0);
        CHECK(s.at(j) == doctest::Approx(std::sin(7 * freq)).epsilon(1e-6));
        CHECK(s.at(8 + j) == doctest::Approx(std::cos(7 * freq)).epsilon(1e-6));
    }
    CHECK(time_sinusoid<float>(0, 16).values() == time_sinusoid<float>(0, 16).values());
    CHECK(time_sinusoid<float>(0, 16).values() != time_sinusoid<float>(999, 16).values());
    CHECK_THROWS_AS(time_sinusoid<float>(-1, 16), IndexError);
}

TEST_CASE("forward shape, determinism, finiteness") {
    auto m = Model<float>::init_base(tiny_cfg(), tiny_dims(), 1234);
    auto cond = tiny_bundle(m, GenMode::text_editing, {});
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = randn<float>({1, 3, 16, 16}, rng);
        auto out = unet_forward(m.unet, x, trial * 90, cond, GenMode::text_editing);
        CHECK(out.eps.shape() == x.shape());
        CHECK(out.eps.all_finite());
        REQUIRE(out.feats.size() == 2);
        CHECK(out.feats[0].shape() == Shape{1, 16, 8, 8});
        CHECK(out.feats[1].shape() == Shape{1, 8, 16, 16});
        auto again = unet_forward(m.unet, x, trial * 90, cond, GenMode::text_editing);
        CHECK(out.eps.values() == again.eps.values());
    }
    CHECK_THROWS_AS(
        unet_forward(m.unet, randn<float>({1, 3, 8, 8}, rng), 0, cond, GenMode::text_editing),
        ShapeError);
}

TEST_CASE("plug-in property: extras do not change text-mode outputs") {
    auto m = Model<float>::init_base(tiny_cfg(), tiny_dims(), 99);
    auto cond = tiny_bundle(m, GenMode::text_editing, {});
    Rng rng(6);
    auto x = randn<float>({1, 3, 16, 16}, rng);
    auto before = unet_forward(m.unet, x, 500, cond, GenMode::text_editing);
    m.add_extras(7);
    auto cond2 = tiny_bundle(m, GenMode::text_editing, {0.2, 0.4, 0.6, 0.8, 0.1, 0.3, 0.5, 0.7});
    auto after = unet_forward(m.unet, x, 500, cond2, GenMode::text_editing);
    CHECK(before.eps.values() == after.eps.values());
    for (size_t i = 0; i < before.feats.size(); ++i)
        CHECK(before.feats[i].values() == after.feats[i].values());
}

TEST_CASE("lambda=0 with pose branch off: face mode is identity-independent") {
    auto m = Model<float>::init_base(tiny_cfg(), tiny_dims(), 42);
    m.add_extras(43);
    m.lambda = 0.0;
    Rng rng(8);
    auto x = randn<float>({1, 3, 16, 16}, rng);
    auto c1 = tiny_bundle(m, GenMode::face_generation, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
    auto c2 = tiny_bundle(m, GenMode::face_generation, {0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2});
    auto e1 = unet_forward(m.unet, x, 300, c1, GenMode::face_generation);
    auto e2 = unet_forward(m.unet, x, 300, c2, GenMode::face_generation);
    CHECK(e1.eps.values() == e2.eps.values());
}

TEST_CASE("pose branch: bitwise copy at creation, nonzero fresh output") {
    auto m = Model<float>::init_base(tiny_cfg(), tiny_dims(), 55);
    m.add_extras(56);
    // bitwise equality of branch encoder vs base encoder
    std::map<std::string, TensorF> base_params, branch_params;
    m.unet.enc.visit_base("e", [&](const std::string& n, TensorF& t) { base_params[n] = t; });
    m.pose_branch.enc.visit_base("e", [&](const std::string& n, TensorF& t) { branch_params[n] = t; });
    REQUIRE(base_params.size() == branch_params.size());
    for (auto& [n, t] : base_params) {
        REQUIRE(branch_params.count(n) == 1);
        CHECK(branch_params[n].values() == t.values());
        // separate storage: mutating one must not affect the other
        CHECK(branch_params[n].data() != t.data());
    }
    // no zero-conv: a fresh branch produces nonzero injected features
    auto cond = tiny_bundle(m, GenMode::face_generation, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5},
                            {20.0, -10.0, 5.0});
    auto pimg = reshape(pose_to_image<float>({20.0, -10.0, 5.0}, 16), {1, 3, 16, 16});
    auto temb = time_embed(100, m.unet);
    auto pf = m.pose_branch.forward(pimg, temb, cond);
    REQUIRE(pf.skips.size() == 2);
    double linf = 0;
    for (const auto& s : pf.skips)
        for (int64_t i = 0; i < s.numel(); ++i) linf = std::max(linf, std::abs(double(s.at(i))));
    CHECK(linf > 0.0);
    CHECK(pf.has_middle);

    // injection changes the output
    Rng rng(9);
    auto x = randn<float>({1, 3, 16, 16}, rng);
    auto without = unet_forward(m.unet, x, 100, cond, GenMode::face_generation);
    auto with = unet_forward(m.unet, x, 100, cond, GenMode::face_generation, &pf);
    CHECK(without.eps.values() != with.eps.values());
    // and pose features are rejected in text mode
    auto tcond = tiny_bundle(m, GenMode::text_editing, {});
    CHECK_THROWS_AS(unet_forward(m.unet, x, 100, tcond, GenMode::text_editing, &pf), ContractError);
}

TEST_CASE("full mini-UNet f64 grad check at 1e-4") {
    auto m = Model<double>::init_base(tiny_cfg(), tiny_dims(), 77);
    m.add_extras(78);
    auto cond = tiny_bundle(m, GenMode::face_generation, {0.3, 0.6, 0.2, 0.8, 0.4, 0.1, 0.9, 0.5},
                            {10.0, 5.0, -3.0});
    Rng rng(10);
    auto x0 = randn<double>({1, 3, 16, 16}, rng);
    auto target = randn<double>({1, 3, 16, 16}, rng);
    auto pimg = reshape(pose_to_image<double>({10.0, 5.0, -3.0}, 16), {1, 3, 16, 16});

    auto loss_of = [&](const TensorD& x) {
        auto temb = time_embed(123, m.unet);
        auto pf = m.pose_branch.forward(pimg, temb, cond);
        auto out = unet_forward(m.unet, x, 123, cond, GenMode::face_generation, &pf);
        return mse(out.eps, target);
    };
    CHECK(grad_check(loss_of, x0, 1e-4) < 1e-4);

    // representative parameters across groups
    auto param_check = [&](TensorD& p) {
        TensorD orig = p;
        double err = grad_check([&](const TensorD& v) {
            p = v;
            return loss_of(x0);
        }, orig.clone(), 1e-4);
        p = orig;
        return err;
    };
    CHECK(param_check(m.unet.enc.conv_in.w) < 1e-4);
    CHECK(param_check(m.unet.time_mlp.l1.w) < 1e-4);
    CHECK(param_check(m.unet.enc.middle.attn.cross_w.w_k) < 1e-4);
    CHECK(param_check(m.unet.enc.middle.attn.adapter.w_q_prime) < 1e-4);
    CHECK(param_check(m.unet.up[1].res[0].time_proj.w) < 1e-4);
    CHECK(param_check(m.unet.conv_out.w) < 1e-4);
    CHECK(param_check(m.pose_branch.proj[0].w) < 1e-4);
    CHECK(param_check(m.pose_branch.enc.conv_in.w) < 1e-4);
}

TEST_CASE("parameter names are unique and stable") {
    auto m = Model<float>::init_base(tiny_cfg(), tiny_dims(), 3);
    m.add_extras(4);
    std::map<std::string, int> seen;
    size_t count = 0;
    m.visit_all([&](const std::string& n, TensorF&) {
        ++seen[n];
        ++count;
    });
    CHECK(count == seen.size());  // no duplicates
    CHECK(seen.count("unet.enc.conv_in.w") == 1);
    CHECK(seen.count("text.tok_embed") == 1);
    CHECK(seen.count("pose_branch.proj_mid.w") == 1);
    CHECK(seen.count("oracle.w1") == 1);
}

TEST_CASE("model checkpoint round-trip preserves every tensor bitwise") {
    namespace fs = std::filesystem;
    auto m = Model<float>::init_base(tiny_cfg(), tiny_dims(), 21);
    m.add_extras(22);
    m.phase = "adapter";
    m.step = 321;
    auto dir = fs::temp_directory_path() / "df_model_ckpt";
    fs::create_directories(dir);
    const auto path = (dir / "m.dfck").string();
    save_model(m, path);
    auto r = load_model<float>(path);
    CHECK(r.phase == "adapter");
    CHECK(r.step == 321);
    CHECK(r.has_extras);
    std::map<std::string, std::vector<float>> orig;
    m.visit_all([&](const std::string& n, TensorF& t) { orig[n] = t.values(); });
    size_t checked = 0;
    r.visit_all([&](const std::string& n, TensorF& t) {
        REQUIRE(orig.count(n) == 1);
        CHECK(orig[n] == t.values());
        ++checked;
    });
    CHECK(checked == orig.size());
    // loaded model produces identical outputs
    auto cond = tiny_bundle(m, GenMode::text_editing, {});
    auto cond_r = tiny_bundle(r, GenMode::text_editing, {});
    Rng rng(11);
    auto x = randn<float>({1, 3, 16, 16}, rng);
    CHECK(unet_forward(m.unet, x, 50, cond, GenMode::text_editing).eps.values() ==
          unet_forward(r.unet, x, 50, cond_r, GenMode::text_editing).eps.values());
    fs::remove_all(dir);
}
