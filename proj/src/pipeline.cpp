#include "denseface/pipeline.hpp"

#include <cstdio>

namespace df {

MaskSource mask_source_from_string(const std::string& s) {
    if (s == "predicted") return MaskSource::predicted;
    if (s == "ellipse") return MaskSource::ellipse;
    if (s.rfind("file", 0) == 0) return MaskSource::file;
    throw ConfigError("unknown mask source '" + s + "'");
}

std::string to_string(MaskSource m) {
    switch (m) {
        case MaskSource::predicted: return "predicted";
        case MaskSource::ellipse: return "ellipse";
        default: return "file";
    }
}

TensorF resolve_identity(const ModelF& model, const GenerationRequest& req) {
    if (req.c_id) {
        if (req.c_id->numel() != model.dims.d)
            throw ShapeError("identity embedding length " + std::to_string(req.c_id->numel()) +
                             ", expected " + std::to_string(model.dims.d));
        return l2_normalize(*req.c_id);
    }
    if (req.id_params) return model.oracle(*req.id_params);
    throw ConfigError("face/personalized generation requires an identity source");
}

ConditionBundle<float> make_bundle(const ModelF& model, const std::string& caption,
                                   const TensorF* c_id, const PoseCondition& pose, GenMode mode) {
    auto ids = tokenize(caption, model.vocab, model.dims.L);
    auto text = encode_text(ids, model.text, model.vocab.pad());
    TensorF cp, pt;
    if (mode == GenMode::face_generation) {
        if (!model.has_extras) throw ConfigError("face_generation requires a phase-2 checkpoint");
        if (!c_id) throw ConfigError("face_generation requires an identity embedding");
        auto e = identity_text_embedding(*c_id, model.lambda, model.id_mlp, model.face_embedding());
        cp = e.c_prime;
        pt = pose_token(pose, model.pose_proj);
    } else {
        cp = model.face_embedding();
        pt = TensorF::zeros({model.dims.k});
    }
    return build_condition(text, text_keep_mask(ids, model.vocab.pad()), cp, pt, mode);
}

namespace {

// one guided epsilon estimate; pose features are reused across cond/uncond
TensorF guided_eps(ModelF& m, const TensorF& x, int t, const ConditionBundle<float>& cond,
                   const ConditionBundle<float>& uncond, double g, GenMode mode,
                   const PoseFeatures<float>* pf, std::vector<TensorF>* feats_out) {
    auto ec = unet_forward(m.unet, x, t, cond, mode, pf);
    if (feats_out) *feats_out = ec.feats;
    if (g == 1.0) return ec.eps;
    auto eu = unet_forward(m.unet, x, t, uncond, mode, pf);
    if (g == 0.0) return eu.eps;
    return add(eu.eps, scale(sub(ec.eps, eu.eps), g));
}

TensorF run_ddim(ModelF& m, const NoiseSchedule& sched, const GenerationRequest& req, GenMode mode,
                 const ConditionBundle<float>& cond, const ConditionBundle<float>& uncond,
                 uint64_t noise_stream, std::vector<TensorF>* final_feats,
                 const TensorF* blend_base, const TensorF* blend_mask) {
    NoGradGuard<float> ng;
    const auto& cfg = m.unet.cfg;
    Rng rng(derive_seed(req.seed, noise_stream));
    auto x = randn<float>({1, cfg.in_ch, cfg.img, cfg.img}, rng);

    TensorF eps_fixed;
    if (blend_base) {
        Rng brng(derive_seed(req.seed, kStreamBlendNoise));
        eps_fixed = randn<float>(x.shape(), brng);
    }

    std::optional<PoseFeatures<float>> pf;
    auto plan = plan_timesteps(sched.T, req.steps);
    for (size_t i = 0; i < plan.timesteps.size(); ++i) {
        const int t = plan.timesteps[i];
        const int t_prev = (i + 1 < plan.timesteps.size()) ? plan.timesteps[i + 1] : -1;
        if (mode == GenMode::face_generation) {
            auto temb = time_embed(t, m.unet);
            auto pimg = reshape(pose_to_image<float>(req.pose, cfg.img), {1, cfg.in_ch, cfg.img, cfg.img});
            pf = m.pose_branch.forward(pimg, temb, cond);
        }
        const bool last = i + 1 == plan.timesteps.size();
        auto eps = guided_eps(m, x, t, cond, uncond, req.guidance, mode,
                              pf ? &*pf : nullptr, last ? final_feats : nullptr);
        x = ddim_step(x, eps, t, t_prev, 0.0, sched);
        if (blend_base) {
            // composite: keep the regenerated face inside the mask, re-noise
            // the base everywhere else (the base itself at the final step)
            auto outside = t_prev >= 0 ? add_noise(*blend_base, eps_fixed, t_prev, sched) : *blend_base;
            auto& xv = x.mutable_values();
            const auto& ov = outside.values();
            const auto& mv = blend_mask->values();
            const int64_t hw = static_cast<int64_t>(cfg.img) * cfg.img;
            for (int64_t c = 0; c < cfg.in_ch; ++c)
                for (int64_t p = 0; p < hw; ++p)
                    if (mv[static_cast<size_t>(p)] < 0.5f)
                        xv[static_cast<size_t>(c * hw + p)] = ov[static_cast<size_t>(c * hw + p)];
        }
    }
    return reshape(x, {cfg.in_ch, cfg.img, cfg.img});
}

}  // namespace

GenerationResult generate_text(ModelF& model, const NoiseSchedule& sched,
                               const GenerationRequest& req) {
    auto cond = make_bundle(model, req.caption, nullptr, {}, GenMode::text_editing);
    auto uncond = make_bundle(model, "", nullptr, {}, GenMode::text_editing);
    GenerationResult r;
    r.image = run_ddim(model, sched, req, GenMode::text_editing, cond, uncond, kStreamBaseNoise,
                       nullptr, nullptr, nullptr);
    return r;
}

GenerationResult generate_face(ModelF& model, const NoiseSchedule& sched,
                               const GenerationRequest& req) {
    auto c_id = resolve_identity(model, req);
    auto cond = make_bundle(model, req.caption, &c_id, req.pose, GenMode::face_generation);
    // the unconditional pass drops the caption but keeps identity and pose
    auto uncond = make_bundle(model, "", &c_id, req.pose, GenMode::face_generation);
    GenerationResult r;
    std::vector<TensorF> feats;
    r.image = run_ddim(model, sched, req, GenMode::face_generation, cond, uncond, kStreamFaceNoise,
                       &feats, nullptr, nullptr);
    r.annotations = predict_annotations(feats, model.heads, GenMode::face_generation);
    return r;
}

TensorF ellipse_mask(double a, double b) {
    TensorF m({64, 64});
    auto& v = m.mutable_values();
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const double dx = (x + 0.5 - 32.0) / a, dy = (y + 0.5 - 32.0) / b;
            v[static_cast<size_t>(y * 64 + x)] = dx * dx + dy * dy <= 1.0 ? 1.0f : 0.0f;
        }
    return m;
}

namespace {

TensorF dilate(const TensorF& m, int px) {
    TensorF out = m.clone();
    for (int it = 0; it < px; ++it) {
        TensorF next = out.clone();
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (out.at(y * 64 + x) > 0.5f) continue;
                bool hit = false;
                for (int dy = -1; dy <= 1 && !hit; ++dy)
                    for (int dx = -1; dx <= 1 && !hit; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny >= 0 && ny < 64 && nx >= 0 && nx < 64 && out.at(ny * 64 + nx) > 0.5f)
                            hit = true;
                    }
                if (hit) next.mutable_values()[static_cast<size_t>(y * 64 + x)] = 1.0f;
            }
        out = next;
    }
    return out;
}

}  // namespace

BlendMask make_blend_mask(ModelF& model, const NoiseSchedule& sched, const GenerationRequest& req,
                          const TensorF& base) {
    switch (req.mask_source) {
        case MaskSource::ellipse:
            return {ellipse_mask(), "ellipse"};
        case MaskSource::file: {
            auto img = read_pgm(req.mask_file);
            if (img.w != 64 || img.h != 64)
                throw CorruptArtifactError("blend mask must be 64x64, got " + std::to_string(img.w) +
                                           "x" + std::to_string(img.h));
            auto g = u8_to_gray(img);
            TensorF m({64, 64});
            for (int64_t i = 0; i < 64 * 64; ++i)
                m.mutable_values()[static_cast<size_t>(i)] = g.at(i) >= 0.5f ? 1.0f : 0.0f;
            return {m, "file:" + req.mask_file};
        }
        case MaskSource::predicted: {
            NoGradGuard<float> ng;
            auto c_id = resolve_identity(model, req);
            auto cond = make_bundle(model, req.caption, &c_id, req.pose, GenMode::face_generation);
            const int t = static_cast<int>(0.3 * sched.T);
            Rng rng(derive_seed(req.seed, kStreamBlendNoise));
            auto x0 = reshape(base, {1, 3, 64, 64});
            auto xt = add_noise(x0, randn<float>(x0.shape(), rng), t, sched);
            auto temb = time_embed(t, model.unet);
            auto pimg = reshape(pose_to_image<float>(req.pose, 64), {1, 3, 64, 64});
            auto pf = model.pose_branch.forward(pimg, temb, cond);
            auto out = unet_forward(model.unet, xt, t, cond, GenMode::face_generation, &pf);
            auto ann = predict_annotations(out.feats, model.heads, GenMode::face_generation);
            TensorF m({64, 64});
            int64_t on = 0;
            for (int64_t i = 0; i < 64 * 64; ++i) {
                const float v = ann.mask.at(i) >= 0.5f ? 1.0f : 0.0f;
                m.mutable_values()[static_cast<size_t>(i)] = v;
                on += v > 0.5f;
            }
            if (on == 0) {
                std::fprintf(stderr, "warning: predicted blend mask is empty; falling back to the ellipse\n");
                return {ellipse_mask(), "ellipse-fallback"};
            }
            return {dilate(m, 2), "predicted"};
        }
    }
    throw ConfigError("unhandled mask source");
}

GenerationResult personalized_generate(ModelF& model, const NoiseSchedule& sched,
                                       const GenerationRequest& req) {
    auto base = generate_text(model, sched, req);
    auto mask = make_blend_mask(model, sched, req, base.image);

    auto c_id = resolve_identity(model, req);
    auto cond = make_bundle(model, req.caption, &c_id, req.pose, GenMode::face_generation);
    auto uncond = make_bundle(model, "", &c_id, req.pose, GenMode::face_generation);
    auto base4 = reshape(base.image, {1, 3, 64, 64});

    GenerationResult r;
    std::vector<TensorF> feats;
    r.image = run_ddim(model, sched, req, GenMode::face_generation, cond, uncond, kStreamFaceNoise,
                       &feats, &base4, &mask.m);
    r.annotations = predict_annotations(feats, model.heads, GenMode::face_generation);
    r.base = base.image;
    r.mask = mask;
    return r;
}

}  // namespace df
