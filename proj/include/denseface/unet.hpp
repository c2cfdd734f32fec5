#pragma once

// The mini epsilon-prediction UNet: timestep embedding, residual blocks,
// self+cross attention sites, per-level skip connections, and the pose
// branch (a copy of the encoder half, injected through learned 1x1
// projections with no zero-convolution gating).

#include <optional>
#include <string>
#include <vector>

#include "denseface/conditioning.hpp"
#include "denseface/conv_ops.hpp"
#include "denseface/nn.hpp"

namespace df {

struct UNetConfig {
    int in_ch = 3;
    int base = 32;
    std::vector<int> mults = {1, 2, 4};
    int blocks = 2;            // res blocks per level
    int attn_start_level = 1;  // attention at levels >= this
    int heads = 4;
    int img = 64;
    int time_dim = 128;
    int cond_k = 64;  // text-space width of the condition tokens
    bool pose_middle = true;  // pose branch includes the middle block

    int levels() const { return static_cast<int>(mults.size()); }
    int ch(int level) const { return base * mults[static_cast<size_t>(level)]; }

    void validate() const {
        if (base < 4 || mults.empty() || blocks < 1 || heads < 1 || time_dim < 8 || cond_k < 8)
            throw ConfigError("degenerate unet config");
        const int div = 1 << (levels() - 1);
        if (img % div != 0)
            throw ConfigError("latent size " + std::to_string(img) + " not divisible by " +
                              std::to_string(div));
        for (int l = 0; l < levels(); ++l)
            if (ch(l) % heads != 0)
                throw ConfigError("channels at level " + std::to_string(l) +
                                  " not divisible by head count");
    }
};

// ---------------- building blocks ----------------

namespace detail {

// [1,C,H,W] <-> [H*W, C] row views for the attention sites
template <class S>
Tensor<S> to_rows(const Tensor<S>& x) {
    return permute(reshape(x, {x.dim(1), x.dim(2) * x.dim(3)}), {1, 0});
}

template <class S>
Tensor<S> from_rows(const Tensor<S>& rows, int64_t C, int64_t H, int64_t W) {
    return reshape(permute(rows, {1, 0}), {1, C, H, W});
}

}  // namespace detail

template <class S>
struct ResBlock {
    NormW<S> gn1, gn2;
    Conv<S> conv1, conv2;     // 3x3, pad 1
    LinearW<S> time_proj;     // time_dim -> cout
    Conv<S> skip;             // 1x1 when cin != cout
    bool has_skip = false;
    int g1 = 8, g2 = 8;

    static ResBlock init(int cin, int cout, int time_dim, Rng& rng) {
        ResBlock b;
        b.gn1 = NormW<S>::init(cin);
        b.gn2 = NormW<S>::init(cout);
        b.conv1 = Conv<S>::init(cout, cin, 3, 1, 1, rng);
        b.conv2 = Conv<S>::init(cout, cout, 3, 1, 1, rng);
        b.time_proj = LinearW<S>::init(time_dim, cout, rng);
        b.g1 = gn_groups_for(cin);
        b.g2 = gn_groups_for(cout);
        if (cin != cout) {
            b.skip = Conv<S>::init(cout, cin, 1, 1, 0, rng);
            b.has_skip = true;
        }
        return b;
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& temb) const {
        auto h = conv1(silu(group_norm(x, g1, gn1.g, gn1.b)));
        h = add_chan(h, reshape(time_proj(temb), {h.dim(1)}));
        h = conv2(silu(group_norm(h, g2, gn2.g, gn2.b)));
        return add(h, has_skip ? skip(x) : x);
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        gn1.visit(p + ".gn1", f);
        gn2.visit(p + ".gn2", f);
        conv1.visit(p + ".conv1", f);
        conv2.visit(p + ".conv2", f);
        time_proj.visit(p + ".time", f);
        if (has_skip) skip.visit(p + ".skip", f);
    }
};

// self-attention followed by cross-attention, both residual, on [1,C,H,W]
template <class S>
struct AttnSite {
    NormW<S> gn_self, gn_cross;
    SelfAttentionWeights<S> self_w;
    CrossAttentionWeights<S> cross_w;
    AdapterWeights<S> adapter;
    bool has_adapter = false;
    int groups = 8;

    static AttnSite init(int c, int cond_k, int heads, Rng& rng) {
        AttnSite a;
        a.gn_self = NormW<S>::init(c);
        a.gn_cross = NormW<S>::init(c);
        a.self_w = SelfAttentionWeights<S>::init(c, heads, rng);
        a.cross_w = CrossAttentionWeights<S>::init(c, cond_k, heads, c / heads, rng);
        a.groups = gn_groups_for(c);
        return a;
    }

    void enable_adapter() {
        adapter = AdapterWeights<S>::zeros_like(cross_w);
        has_adapter = true;
    }

    Tensor<S> forward(const Tensor<S>& x, const ConditionBundle<S>& cond, GenMode mode) const {
        const int64_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
        auto f = detail::to_rows(group_norm(x, groups, gn_self.g, gn_self.b));
        auto h = add(x, detail::from_rows(self_attention(f, {}, self_w), C, H, W));
        auto f2 = detail::to_rows(group_norm(h, groups, gn_cross.g, gn_cross.b));
        auto att = mode_dispatch(mode, f2, cond, cross_w, has_adapter ? &adapter : nullptr);
        return add(h, detail::from_rows(att, C, H, W));
    }

    template <class F>
    void visit_base(const std::string& p, F&& f) {
        gn_self.visit(p + ".gn_self", f);
        gn_cross.visit(p + ".gn_cross", f);
        self_w.visit(p + ".self", f);
        cross_w.visit(p + ".cross", f);
    }

    template <class F>
    void visit_adapter(const std::string& p, F&& f) {
        if (has_adapter) adapter.visit(p + ".adapter", f);
    }
};

template <class S>
struct DownLevel {
    std::vector<ResBlock<S>> res;
    std::vector<AttnSite<S>> attn;  // parallel to res when attention is on
    Conv<S> down;                   // stride-2 3x3, absent at the last level
    bool has_down = false;
};

template <class S>
struct MiddleBlock {
    ResBlock<S> r1, r2;
    AttnSite<S> attn;
};

template <class S>
struct UpLevel {
    std::vector<ResBlock<S>> res;
    std::vector<AttnSite<S>> attn;
    Conv<S> up;  // 3x3 after nearest-upsample, absent at level 0
    bool has_up = false;
};

// ---------------- encoder half (shared with the pose branch) ----------------

template <class S>
struct EncoderHalf {
    Conv<S> conv_in;  // in_ch -> ch0, 3x3
    std::vector<DownLevel<S>> down;
    MiddleBlock<S> middle;

    static EncoderHalf init(const UNetConfig& cfg, Rng& rng) {
        EncoderHalf e;
        e.conv_in = Conv<S>::init(cfg.ch(0), cfg.in_ch, 3, 1, 1, rng);
        for (int l = 0; l < cfg.levels(); ++l) {
            DownLevel<S> lvl;
            const bool with_attn = l >= cfg.attn_start_level;
            for (int b = 0; b < cfg.blocks; ++b) {
                const int cin = b == 0 ? (l == 0 ? cfg.ch(0) : cfg.ch(l - 1)) : cfg.ch(l);
                lvl.res.push_back(ResBlock<S>::init(cin, cfg.ch(l), cfg.time_dim, rng));
                if (with_attn) lvl.attn.push_back(AttnSite<S>::init(cfg.ch(l), cfg.cond_k, cfg.heads, rng));
            }
            if (l < cfg.levels() - 1) {
                lvl.down = Conv<S>::init(cfg.ch(l), cfg.ch(l), 3, 2, 1, rng);
                lvl.has_down = true;
            }
            e.down.push_back(std::move(lvl));
        }
        const int cm = cfg.ch(cfg.levels() - 1);
        e.middle = {ResBlock<S>::init(cm, cm, cfg.time_dim, rng),
                    ResBlock<S>::init(cm, cm, cfg.time_dim, rng),
                    AttnSite<S>::init(cm, cfg.cond_k, cfg.heads, rng)};
        return e;
    }

    struct Result {
        std::vector<Tensor<S>> skips;  // one per level, pre-downsample
        Tensor<S> middle_out;
    };

    // Attention in the encoder half always takes the Eq. 2 path; in the main
    // UNet the adapter variant is selected per-site by `mode`.
    Result forward(const Tensor<S>& x, const Tensor<S>& temb, const ConditionBundle<S>& cond,
                   GenMode mode, bool run_middle) const {
        Result r;
        auto h = conv_in(x);
        for (const auto& lvl : down) {
            for (size_t b = 0; b < lvl.res.size(); ++b) {
                h = lvl.res[b].forward(h, temb);
                if (!lvl.attn.empty()) h = lvl.attn[b].forward(h, cond, mode);
            }
            r.skips.push_back(h);
            if (lvl.has_down) h = lvl.down(h);
        }
        if (run_middle) {
            h = middle.r1.forward(h, temb);
            h = middle.attn.forward(h, cond, mode);
            h = middle.r2.forward(h, temb);
        }
        r.middle_out = h;
        return r;
    }

    template <class F>
    void visit_base(const std::string& p, F&& f) {
        conv_in.visit(p + ".conv_in", f);
        for (size_t l = 0; l < down.size(); ++l) {
            const std::string lp = p + ".down" + std::to_string(l);
            auto& lvl = down[l];
            for (size_t b = 0; b < lvl.res.size(); ++b) lvl.res[b].visit(lp + ".res" + std::to_string(b), f);
            for (size_t b = 0; b < lvl.attn.size(); ++b) lvl.attn[b].visit_base(lp + ".attn" + std::to_string(b), f);
            if (lvl.has_down) lvl.down.visit(lp + ".down", f);
        }
        middle.r1.visit(p + ".mid.res0", f);
        middle.attn.visit_base(p + ".mid.attn", f);
        middle.r2.visit(p + ".mid.res1", f);
    }

    template <class F>
    void visit_adapters(const std::string& p, F&& f) {
        for (size_t l = 0; l < down.size(); ++l)
            for (size_t b = 0; b < down[l].attn.size(); ++b)
                down[l].attn[b].visit_adapter(p + ".down" + std::to_string(l) + ".attn" + std::to_string(b), f);
        middle.attn.visit_adapter(p + ".mid.attn", f);
    }
};

// ---------------- the full UNet ----------------

template <class S>
struct PoseFeatures {
    std::vector<Tensor<S>> skips;  // per level, matching the encoder skips
    Tensor<S> middle;
    bool has_middle = false;
};

template <class S>
struct UNetWeights {
    UNetConfig cfg;
    Mlp<S> time_mlp;  // time_dim -> time_dim -> time_dim over the sinusoid
    EncoderHalf<S> enc;
    std::vector<UpLevel<S>> up;  // index = level; processed deepest-first
    NormW<S> out_norm;
    Conv<S> conv_out;

    static UNetWeights init(const UNetConfig& cfg, Rng& rng) {
        cfg.validate();
        UNetWeights w;
        w.cfg = cfg;
        w.time_mlp = Mlp<S>::init(cfg.time_dim, cfg.time_dim, cfg.time_dim, rng);
        w.enc = EncoderHalf<S>::init(cfg, rng);
        for (int l = 0; l < cfg.levels(); ++l) {
            UpLevel<S> lvl;
            const bool with_attn = l >= cfg.attn_start_level;
            const int cur = l == cfg.levels() - 1 ? cfg.ch(l) : cfg.ch(l + 1);
            for (int b = 0; b < cfg.blocks; ++b) {
                const int cin = b == 0 ? cur + cfg.ch(l) : cfg.ch(l);
                lvl.res.push_back(ResBlock<S>::init(cin, cfg.ch(l), cfg.time_dim, rng));
                if (with_attn) lvl.attn.push_back(AttnSite<S>::init(cfg.ch(l), cfg.cond_k, cfg.heads, rng));
            }
            if (l > 0) {
                lvl.up = Conv<S>::init(cfg.ch(l), cfg.ch(l), 3, 1, 1, rng);
                lvl.has_up = true;
            }
            w.up.push_back(std::move(lvl));
        }
        w.out_norm = NormW<S>::init(cfg.ch(0));
        w.conv_out = Conv<S>::init(cfg.in_ch, cfg.ch(0), 3, 1, 1, rng);
        return w;
    }

    void enable_adapters() {
        for (auto& lvl : enc.down)
            for (auto& a : lvl.attn) a.enable_adapter();
        enc.middle.attn.enable_adapter();
        for (auto& lvl : up)
            for (auto& a : lvl.attn) a.enable_adapter();
    }

    bool has_adapters() const { return enc.middle.attn.has_adapter; }

    template <class F>
    void visit_base(const std::string& p, F&& f) {
        time_mlp.visit(p + ".time_mlp", f);
        enc.visit_base(p + ".enc", f);
        for (size_t l = 0; l < up.size(); ++l) {
            const std::string lp = p + ".up" + std::to_string(l);
            auto& lvl = up[l];
            for (size_t b = 0; b < lvl.res.size(); ++b) lvl.res[b].visit(lp + ".res" + std::to_string(b), f);
            for (size_t b = 0; b < lvl.attn.size(); ++b) lvl.attn[b].visit_base(lp + ".attn" + std::to_string(b), f);
            if (lvl.has_up) lvl.up.visit(lp + ".up", f);
        }
        out_norm.visit(p + ".out_norm", f);
        conv_out.visit(p + ".conv_out", f);
    }

    template <class F>
    void visit_adapters(const std::string& p, F&& f) {
        enc.visit_adapters(p + ".enc", f);
        for (size_t l = 0; l < up.size(); ++l)
            for (size_t b = 0; b < up[l].attn.size(); ++b)
                up[l].attn[b].visit_adapter(p + ".up" + std::to_string(l) + ".attn" + std::to_string(b), f);
    }
};

// ---------------- timestep embedding ----------------

// closed-form sin/cos features, [1, dim]
template <class S>
Tensor<S> time_sinusoid(int t, int dim) {
    if (t < 0) throw IndexError("negative timestep " + std::to_string(t));
    Tensor<S> out({1, dim});
    auto& v = out.mutable_values();
    const int half = dim / 2;
    for (int j = 0; j < half; ++j) {
        const double freq = std::exp(-std::log(10000.0) * j / half);
        v[static_cast<size_t>(j)] = static_cast<S>(std::sin(t * freq));
        v[static_cast<size_t>(half + j)] = static_cast<S>(std::cos(t * freq));
    }
    return out;
}

template <class S>
Tensor<S> time_embed(int t, const UNetWeights<S>& w) {
    return w.time_mlp(time_sinusoid<S>(t, w.cfg.time_dim));
}

// ---------------- pose branch ----------------

template <class S>
struct PoseBranch {
    EncoderHalf<S> enc;          // structural copy of the main encoder half
    std::vector<Conv<S>> proj;   // 1x1 per level (not zero-initialized)
    Conv<S> proj_mid;
    bool use_middle = true;

    // Initialized as a bitwise copy of the trained base encoder; the 1x1
    // injection projections are randomly initialized on purpose (the branch
    // deliberately avoids zero-convolution gating).
    static PoseBranch from_base(const UNetConfig& cfg, const EncoderHalf<S>& base, Rng& rng) {
        PoseBranch p;
        p.enc = base;  // shares tensors; decouple below
        p.enc.visit_base("", [](const std::string&, Tensor<S>& t) { t = t.detach(); });
        for (auto& lvl : p.enc.down)
            for (auto& a : lvl.attn) a.has_adapter = false;
        p.enc.middle.attn.has_adapter = false;
        for (int l = 0; l < cfg.levels(); ++l)
            p.proj.push_back(Conv<S>::init(cfg.ch(l), cfg.ch(l), 1, 1, 0, rng));
        p.proj_mid = Conv<S>::init(cfg.ch(cfg.levels() - 1), cfg.ch(cfg.levels() - 1), 1, 1, 0, rng);
        p.use_middle = cfg.pose_middle;
        return p;
    }

    PoseFeatures<S> forward(const Tensor<S>& pose_img, const Tensor<S>& temb,
                            const ConditionBundle<S>& cond) const {
        if (pose_img.ndim() != 4)
            throw ShapeError("pose image must be [1,3,H,W], got " + shape_str(pose_img.shape()));
        // the branch's own attention is plain Eq. 2 over the face bundle
        auto r = enc.forward(pose_img, temb, cond, GenMode::text_editing, use_middle);
        PoseFeatures<S> out;
        for (size_t l = 0; l < r.skips.size(); ++l) out.skips.push_back(proj[l](r.skips[l]));
        if (use_middle) {
            out.middle = proj_mid(r.middle_out);
            out.has_middle = true;
        }
        return out;
    }

    template <class F>
    void visit(const std::string& p, F&& f) {
        enc.visit_base(p + ".enc", f);
        for (size_t l = 0; l < proj.size(); ++l) proj[l].visit(p + ".proj" + std::to_string(l), f);
        proj_mid.visit(p + ".proj_mid", f);
    }
};

// ---------------- forward ----------------

template <class S>
struct UNetOutput {
    Tensor<S> eps;                  // same shape as the input latent
    std::vector<Tensor<S>> feats;   // decoder features, coarsest -> finest
};

template <class S>
UNetOutput<S> unet_forward(const UNetWeights<S>& w, const Tensor<S>& x, int t,
                           const ConditionBundle<S>& cond, GenMode mode,
                           const PoseFeatures<S>* pose = nullptr) {
    const auto& cfg = w.cfg;
    if (x.shape() != Shape{1, cfg.in_ch, cfg.img, cfg.img})
        throw ShapeError("latent shape " + shape_str(x.shape()) + " does not match config");
    if (pose && mode == GenMode::text_editing)
        throw ContractError("pose features supplied in text_editing mode");

    auto temb = time_embed(t, w);
    auto er = w.enc.forward(x, temb, cond, mode, true);
    auto skips = er.skips;
    if (pose) {
        if (pose->skips.size() != skips.size())
            throw ShapeError("pose feature level count mismatch");
        for (size_t l = 0; l < skips.size(); ++l) skips[l] = add(skips[l], pose->skips[l]);
    }
    auto h = er.middle_out;
    if (pose && pose->has_middle) h = add(h, pose->middle);

    UNetOutput<S> out;
    for (int l = cfg.levels() - 1; l >= 0; --l) {
        const auto& lvl = w.up[static_cast<size_t>(l)];
        h = concat<S>({h, skips[static_cast<size_t>(l)]}, 1);
        for (size_t b = 0; b < lvl.res.size(); ++b) {
            h = lvl.res[b].forward(h, temb);
            if (!lvl.attn.empty()) h = lvl.attn[b].forward(h, cond, mode);
        }
        out.feats.push_back(h);
        if (l > 0) h = lvl.up(nearest_upsample2(h));
    }
    const int g = gn_groups_for(cfg.ch(0));
    out.eps = w.conv_out(silu(group_norm(h, g, w.out_norm.g, w.out_norm.b)));
    return out;
}

}  // namespace df
