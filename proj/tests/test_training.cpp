#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "denseface/training.hpp"

using namespace df;

namespace {

UNetConfig tiny64_cfg() {
    UNetConfig cfg;
    cfg.base = 4;
    cfg.mults = {1, 2, 4};
    cfg.blocks = 1;
    cfg.attn_start_level = 2;
    cfg.heads = 2;
    cfg.img = 64;
    cfg.time_dim = 16;
    cfg.cond_k = 16;
    return cfg;
}

ModelF tiny_model(bool extras, uint64_t seed = 5) {
    auto m = ModelF::init_base(tiny64_cfg(), CondDims{16, 8, 16}, seed);
    if (extras) m.add_extras(seed);
    return m;
}

std::map<std::string, std::vector<float>> snapshot_base(ModelF& m) {
    std::map<std::string, std::vector<float>> s;
    m.visit_base([&s](const std::string& n, TensorF& t) { s[n] = t.values(); });
    return s;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig c;
    c.validate();
    c.phase = "frobnicate";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.phase = "base";
    c.steps = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.steps = 1;
    c.batch = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.batch = 1;
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.lr = 1e-3;
    c.caption_dropout = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("adam matches the hand-derived first steps") {
    // [DERIVED] constant gradient g: with bias correction mhat = g and
    // vhat = g^2, so each step moves by lr * g/(|g| + eps) ~= lr * sign(g)
    TensorF p = TensorF::zeros({2});
    p.set_requires_grad(true);
    Adam opt({p}, 0.1);
    for (int step = 1; step <= 3; ++step) {
        opt.zero_grad();
        Tape<float> tape;
        tape.backward(scale(sum(p), 3.0));  // dL/dp = 3 everywhere
        opt.step();
        for (int64_t i = 0; i < 2; ++i)
            CHECK(p.at(i) == doctest::Approx(-0.1 * step).epsilon(1e-5));
    }
}

TEST_CASE("adam with no populated gradient is a no-op") {
    TensorF p = TensorF::zeros({3});
    for (auto& v : p.mutable_values()) v = 1.25f;
    Adam opt({p}, 0.5);
    opt.step();
    opt.step();
    for (int64_t i = 0; i < 3; ++i) CHECK(p.at(i) == 1.25f);
}

TEST_CASE("trainable_params selects the phase group") {
    auto m = tiny_model(true);
    auto base = trainable_params(m, "base");
    CHECK_FALSE(base.empty());
    // flags: base on, extras off
    bool extras_flagged = false;
    m.visit_extras([&extras_flagged](const std::string&, TensorF& t) {
        extras_flagged = extras_flagged || t.requires_grad();
    });
    CHECK_FALSE(extras_flagged);

    auto extras = trainable_params(m, "adapter");
    CHECK_FALSE(extras.empty());
    bool base_flagged = false;
    m.visit_base([&base_flagged](const std::string&, TensorF& t) {
        base_flagged = base_flagged || t.requires_grad();
    });
    CHECK_FALSE(base_flagged);

    CHECK_THROWS_AS(trainable_params(m, "nope"), ConfigError);
    auto m2 = tiny_model(false);
    CHECK_THROWS_AS(trainable_params(m2, "adapter"), ConfigError);
}

TEST_CASE("sample_loss equals the recomputed terms") {
    auto m = tiny_model(true);
    auto sched = make_schedule(ScheduleKind::cosine, 50);
    SpriteSpec spec;
    spec.id_params = {.2, .4, .6, .8, .5, .3, .7, .1};
    spec.pose.yaw = 10;
    auto s = render(spec);
    Rng r(3);
    auto eps = randn<float>({1, 3, 64, 64}, r);

    // [DERIVED] face-mode loss below the gate == diffusion + annotation terms
    const int t = 10;  // <= 0.5*T
    auto total = sample_loss(m, sched, s, t, eps, GenMode::face_generation, false,
                             AnnotationLossWeights{}, 0.5);
    // recompute the two terms independently
    auto c_id = m.oracle(spec.id_params);
    auto cond = make_bundle(m, s.caption, &c_id, spec.pose, GenMode::face_generation);
    auto xt = add_noise(reshape(s.image, {1, 3, 64, 64}), eps, t, sched);
    auto temb = time_embed(t, m.unet);
    auto pimg = reshape(pose_to_image<float>(spec.pose, 64), {1, 3, 64, 64});
    auto pf = m.pose_branch.forward(pimg, temb, cond);
    auto out = unet_forward(m.unet, xt, t, cond, GenMode::face_generation, &pf);
    auto diffusion = mse(out.eps, eps);
    auto annot = annotation_loss(dense_forward(out.feats, m.heads, GenMode::face_generation),
                                 s.annotations, AnnotationLossWeights{});
    CHECK(total.item() == doctest::Approx(diffusion.item() + annot.item()).epsilon(1e-6));

    // above the gate only the diffusion term remains
    const int t_hi = 45;
    auto hi = sample_loss(m, sched, s, t_hi, eps, GenMode::face_generation, false,
                          AnnotationLossWeights{}, 0.5);
    auto xt_hi = add_noise(reshape(s.image, {1, 3, 64, 64}), eps, t_hi, sched);
    auto temb_hi = time_embed(t_hi, m.unet);
    auto pf_hi = m.pose_branch.forward(pimg, temb_hi, cond);
    auto out_hi = unet_forward(m.unet, xt_hi, t_hi, cond, GenMode::face_generation, &pf_hi);
    CHECK(hi.item() == doctest::Approx(mse(out_hi.eps, eps).item()).epsilon(1e-6));
}

TEST_CASE("zeroed output head gives the analytic diffusion loss") {
    // [DERIVED] eps_hat == 0 => loss = mean(eps^2)
    auto m = tiny_model(false);
    for (auto& v : m.unet.conv_out.w.mutable_values()) v = 0.0f;
    for (auto& v : m.unet.conv_out.b.mutable_values()) v = 0.0f;
    auto sched = make_schedule(ScheduleKind::cosine, 50);
    SpriteSpec spec;
    auto s = render(spec);
    Rng r(4);
    auto eps = randn<float>({1, 3, 64, 64}, r);
    auto loss = sample_loss(m, sched, s, 20, eps, GenMode::text_editing, false,
                            AnnotationLossWeights{}, 0.5);
    double want = 0;
    for (int64_t i = 0; i < eps.numel(); ++i) want += static_cast<double>(eps.at(i)) * eps.at(i);
    want /= static_cast<double>(eps.numel());
    CHECK(loss.item() == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("base phase runs deterministically and advances the model") {
    auto sched = make_schedule(ScheduleKind::cosine, 50);
    auto manifest = generate_dataset(8, 13, "", 2, /*write_files=*/false);
    auto data = manifest.split("train");
    REQUIRE_FALSE(data.empty());

    TrainConfig cfg;
    cfg.phase = "base";
    cfg.steps = 2;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    cfg.seed = 21;
    cfg.log_every = 0;

    auto m1 = tiny_model(false);
    auto st1 = train_phase(m1, sched, data, cfg);
    CHECK(st1.losses.size() == 2);
    for (double l : st1.losses) CHECK(std::isfinite(l));
    CHECK(m1.step == 2);
    CHECK(m1.phase == "base");

    auto m2 = tiny_model(false);
    auto st2 = train_phase(m2, sched, data, cfg);
    CHECK(st1.losses == st2.losses);
    bool identical = true;
    std::map<std::string, std::vector<float>> w1, w2;
    m1.visit_base([&w1](const std::string& n, TensorF& t) { w1[n] = t.values(); });
    m2.visit_base([&w2](const std::string& n, TensorF& t) { w2[n] = t.values(); });
    identical = w1 == w2;
    CHECK(identical);

    CHECK_THROWS_AS(train_phase(m1, sched, {}, cfg), ConfigError);
}

TEST_CASE("adapter phase leaves every base parameter bit-identical") {
    auto sched = make_schedule(ScheduleKind::cosine, 50);
    auto manifest = generate_dataset(8, 14, "", 2, /*write_files=*/false);
    auto data = manifest.split("train");

    auto m = tiny_model(true);
    auto before = snapshot_base(m);

    TrainConfig cfg;
    cfg.phase = "adapter";
    cfg.steps = 2;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    cfg.seed = 22;
    cfg.log_every = 0;
    auto st = train_phase(m, sched, data, cfg);
    CHECK(st.losses.size() == 2);
    for (double l : st.losses) CHECK(std::isfinite(l));

    auto after = snapshot_base(m);
    CHECK(before == after);

    // and at least one extras parameter moved
    bool moved = false;
    auto fresh = tiny_model(true);
    std::map<std::string, std::vector<float>> f0, f1;
    fresh.visit_extras([&f0](const std::string& n, TensorF& t) { f0[n] = t.values(); });
    m.visit_extras([&f1](const std::string& n, TensorF& t) { f1[n] = t.values(); });
    moved = f0 != f1;
    CHECK(moved);

    // adapter phase on a base-only model is rejected
    auto mb = tiny_model(false);
    CHECK_THROWS_AS(train_phase(mb, sched, data, cfg), ConfigError);
}

TEST_CASE("eval encoder fit reduces its loss") {
    auto manifest = generate_dataset(8, 15, "", 2, /*write_files=*/false);
    auto data = manifest.split("train");
    auto m = tiny_model(true);

    TrainConfig cfg;
    cfg.seed = 23;
    cfg.batch = 4;
    cfg.eval_enc_steps = 40;
    cfg.eval_enc_lr = 3e-3;
    cfg.log_every = 0;
    auto st = fit_eval_encoder(m, data, cfg);
    REQUIRE(st.losses.size() == 40);
    // [DERIVED] training-curve check on a supervised regression
    CHECK(st.mean_tail(10) < st.mean_head(10));
}
