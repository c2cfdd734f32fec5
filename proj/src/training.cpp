#include "denseface/training.hpp"

#include <cmath>
#include <cstdio>

namespace df {

void TrainConfig::validate() const {
    if (phase != "base" && phase != "adapter")
        throw ConfigError("unknown training phase '" + phase + "'");
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (batch <= 0) throw ConfigError("batch must be positive");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (caption_dropout < 0.0 || caption_dropout > 1.0)
        throw ConfigError("caption_dropout must be in [0,1]");
    if (annotation_gate < 0.0 || annotation_gate > 1.0)
        throw ConfigError("annotation_gate must be in [0,1]");
    if (eval_enc_steps < 0) throw ConfigError("eval_enc_steps must be non-negative");
}

Adam::Adam(std::vector<TensorF> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    slots_.reserve(params.size());
    for (auto& p : params) {
        Slot s;
        s.p = p;
        s.m.assign(static_cast<size_t>(p.numel()), 0.0f);
        s.v.assign(static_cast<size_t>(p.numel()), 0.0f);
        slots_.push_back(std::move(s));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& s : slots_) {
        if (!s.p.has_grad()) continue;  // zero-gradient step is a no-op
        const auto& g = s.p.grad();
        auto& pv = s.p.mutable_values();
        for (size_t i = 0; i < pv.size(); ++i) {
            const double gi = g[i];
            s.m[i] = static_cast<float>(b1_ * s.m[i] + (1.0 - b1_) * gi);
            s.v[i] = static_cast<float>(b2_ * s.v[i] + (1.0 - b2_) * gi * gi);
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            pv[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) s.p.zero_grad();
}

std::vector<TensorF> trainable_params(ModelF& m, const std::string& phase) {
    m.visit_all([](const std::string&, TensorF& t) { t.set_requires_grad(false); });
    std::vector<TensorF> out;
    auto grab = [&out](const std::string&, TensorF& t) {
        t.set_requires_grad(true);
        out.push_back(t);
    };
    if (phase == "base") {
        m.visit_base(grab);
    } else if (phase == "adapter") {
        if (!m.has_extras) throw ConfigError("adapter phase requires extras (add_extras first)");
        m.visit_extras(grab);
    } else if (phase == "eval_enc") {
        if (!m.has_extras) throw ConfigError("eval_enc phase requires extras");
        m.visit_eval_enc(grab);
    } else {
        throw ConfigError("unknown parameter group '" + phase + "'");
    }
    return out;
}

TensorF sample_loss(ModelF& m, const NoiseSchedule& sched, const SpriteSample& s, int t,
                    const TensorF& eps, GenMode mode, bool drop_caption,
                    const AnnotationLossWeights& ann, double annotation_gate) {
    const auto& cfg = m.unet.cfg;
    if (cfg.img != kImageSize)
        throw ConfigError("training requires the model image size to match the renderer");
    auto x0 = reshape(s.image, {1, cfg.in_ch, cfg.img, cfg.img});
    auto xt = add_noise(x0, eps, t, sched);
    const std::string caption = drop_caption ? "" : s.caption;

    if (mode == GenMode::text_editing) {
        auto cond = make_bundle(m, caption, nullptr, {}, mode);
        auto out = unet_forward(m.unet, xt, t, cond, mode);
        return mse(out.eps, eps);
    }

    auto c_id = m.oracle(s.spec.id_params);
    auto cond = make_bundle(m, caption, &c_id, s.spec.pose, mode);
    auto temb = time_embed(t, m.unet);
    auto pimg = reshape(pose_to_image<float>(s.spec.pose, cfg.img), {1, cfg.in_ch, cfg.img, cfg.img});
    auto pf = m.pose_branch.forward(pimg, temb, cond);
    auto out = unet_forward(m.unet, xt, t, cond, mode, &pf);
    auto loss = mse(out.eps, eps);
    if (t <= static_cast<int>(annotation_gate * sched.T)) {
        auto raw = dense_forward(out.feats, m.heads, mode);
        loss = add(loss, annotation_loss(raw, s.annotations, ann));
    }
    return loss;
}

double TrainStats::mean_head(int k) const {
    if (k <= 0 || losses.empty()) return 0.0;
    const size_t n = std::min<size_t>(static_cast<size_t>(k), losses.size());
    double s = 0;
    for (size_t i = 0; i < n; ++i) s += losses[i];
    return s / static_cast<double>(n);
}

double TrainStats::mean_tail(int k) const {
    if (k <= 0 || losses.empty()) return 0.0;
    const size_t n = std::min<size_t>(static_cast<size_t>(k), losses.size());
    double s = 0;
    for (size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
    return s / static_cast<double>(n);
}

TrainStats train_phase(ModelF& m, const NoiseSchedule& sched,
                       const std::vector<const ManifestEntry*>& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ConfigError("empty training split");
    const GenMode mode =
        cfg.phase == "base" ? GenMode::text_editing : GenMode::face_generation;

    auto params = trainable_params(m, cfg.phase);
    Adam opt(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    Rng rng(derive_seed(cfg.seed, cfg.phase == "base" ? 300 : 400));

    TrainStats stats;
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& e = *data[rng.uniform_int(data.size())];
            auto sample = render(e.spec);
            const int t = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(sched.T)));
            const bool drop = rng.uniform() < cfg.caption_dropout;
            TensorF eps;
            {
                NoGradGuard<float> ng;
                eps = randn<float>({1, m.unet.cfg.in_ch, m.unet.cfg.img, m.unet.cfg.img}, rng);
            }
            Tape<float> tape;
            auto loss = scale(
                sample_loss(m, sched, sample, t, eps, mode, drop, cfg.ann, cfg.annotation_gate),
                1.0 / cfg.batch);
            loss_sum += loss.item();
            tape.backward(loss);
        }
        opt.step();
        m.step += 1;
        stats.losses.push_back(loss_sum);
        if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
            std::fprintf(stderr, "[%s] step %d/%d loss %.5f\n", cfg.phase.c_str(), step + 1,
                         cfg.steps, loss_sum);
    }
    m.phase = cfg.phase;
    // leave the model in inference-friendly state
    m.visit_all([](const std::string&, TensorF& t) { t.set_requires_grad(false); });
    return stats;
}

TrainStats fit_eval_encoder(ModelF& m, const std::vector<const ManifestEntry*>& data,
                            const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw ConfigError("empty training split");
    auto params = trainable_params(m, "eval_enc");
    Adam opt(params, cfg.eval_enc_lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    Rng rng(derive_seed(cfg.seed, 500));

    TrainStats stats;
    for (int step = 0; step < cfg.eval_enc_steps; ++step) {
        opt.zero_grad();
        double loss_sum = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& e = *data[rng.uniform_int(data.size())];
            auto sample = render(e.spec);
            auto crop = crop_to_mask(sample.image, sample.annotations.mask);
            TensorF target;
            {
                NoGradGuard<float> ng;
                target = m.oracle(e.spec.id_params);
            }
            Tape<float> tape;
            auto loss = scale(mse(m.eval_enc(crop), target), 1.0 / cfg.batch);
            loss_sum += loss.item();
            tape.backward(loss);
        }
        opt.step();
        stats.losses.push_back(loss_sum);
        if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
            std::fprintf(stderr, "[eval_enc] step %d/%d loss %.5f\n", step + 1, cfg.eval_enc_steps,
                         loss_sum);
    }
    m.visit_all([](const std::string&, TensorF& t) { t.set_requires_grad(false); });
    return stats;
}

}  // namespace df
