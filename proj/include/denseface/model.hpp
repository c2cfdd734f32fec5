#pragma once

// The full model aggregate: base (text encoder + UNet) plus the phase-2
// extras (adapters, pose branch, identity MLP, pose token projection, dense
// heads, eval-side image encoder), with named parameter visitation and
// checkpoint round-tripping.

#include <string>
#include <vector>

#include "json.hpp"

#include "denseface/checkpoint.hpp"
#include "denseface/conditioning.hpp"
#include "denseface/dense_heads.hpp"
#include "denseface/unet.hpp"

namespace df {

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
    j = {{"in_ch", c.in_ch},   {"base", c.base},       {"mults", c.mults},
         {"blocks", c.blocks}, {"attn_start_level", c.attn_start_level},
         {"heads", c.heads},   {"img", c.img},         {"time_dim", c.time_dim},
         {"cond_k", c.cond_k}, {"pose_middle", c.pose_middle}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
    c.in_ch = j.value("in_ch", 3);
    c.base = j.value("base", 32);
    c.mults = j.value("mults", std::vector<int>{1, 2, 4});
    c.blocks = j.value("blocks", 2);
    c.attn_start_level = j.value("attn_start_level", 1);
    c.heads = j.value("heads", 4);
    c.img = j.value("img", 64);
    c.time_dim = j.value("time_dim", 128);
    c.cond_k = j.value("cond_k", 64);
    c.pose_middle = j.value("pose_middle", true);
}

inline void to_json(nlohmann::json& j, const CondDims& d) {
    j = {{"k", d.k}, {"d", d.d}, {"L", d.L}};
}

inline void from_json(const nlohmann::json& j, CondDims& d) {
    d.k = j.value("k", 64);
    d.d = j.value("d", 32);
    d.L = j.value("L", 16);
}

template <class S>
struct Model {
    UNetConfig cfg;
    CondDims dims;
    Vocabulary vocab = Vocabulary::defaults();

    // base (phase 1)
    TextEncoder<S> text;
    UNetWeights<S> unet;

    // frozen manifold
    IdentityOracle<S> oracle;

    // extras (phase 2)
    bool has_extras = false;
    Mlp<S> id_mlp;          // d -> 2k -> k (Eq. 1)
    LinearW<S> pose_proj;   // 3 -> k
    PoseBranch<S> pose_branch;
    DenseHeadWeights<S> heads;
    IdentityImageEncoder<S> eval_enc;
    double lambda = kDefaultLambda;

    int T = 1000;
    std::string phase = "base";
    int step = 0;

    static Model init_base(const UNetConfig& cfg, const CondDims& dims, uint64_t seed) {
        if (cfg.cond_k != dims.k) throw ConfigError("unet cond_k must equal text width k");
        Model m;
        m.cfg = cfg;
        m.dims = dims;
        Rng rng(derive_seed(seed, 100));
        m.text = TextEncoder<S>::init(m.vocab.size(), dims.k, cfg.heads, rng);
        m.unet = UNetWeights<S>::init(cfg, rng);
        m.oracle = IdentityOracle<S>::init(dims.d);
        return m;
    }

    // adapters zero-initialized; pose branch bitwise-copied from the base
    // encoder; everything else randomly initialized
    void add_extras(uint64_t seed) {
        if (has_extras) throw StateError("extras already present");
        Rng rng(derive_seed(seed, 200));
        unet.enable_adapters();
        pose_branch = PoseBranch<S>::from_base(cfg, unet.enc, rng);
        id_mlp = Mlp<S>::init(dims.d, 2 * dims.k, dims.k, rng);
        pose_proj = LinearW<S>::init(3, dims.k, rng);
        heads = DenseHeadWeights<S>::init(cfg.ch(cfg.levels() - 1), cfg.ch(1), cfg.ch(0), rng);
        eval_enc = IdentityImageEncoder<S>::init(dims.d, rng);
        has_extras = true;
    }

    Tensor<S> face_embedding() const {
        NoGradGuard<S> ng;
        return reshape(embedding(text.tok_embed, {vocab.face()}), {dims.k});
    }

    // --- parameter groups ---

    template <class F>
    void visit_base(F&& f) {
        text.visit("text", f);
        unet.visit_base("unet", f);
    }

    template <class F>
    void visit_extras(F&& f) {
        if (!has_extras) return;
        unet.visit_adapters("unet", f);
        pose_branch.visit("pose_branch", f);
        id_mlp.visit("id_mlp", f);
        pose_proj.visit("pose_proj", f);
        heads.visit("heads", f);
    }

    template <class F>
    void visit_eval_enc(F&& f) {
        if (has_extras) eval_enc.visit("eval_enc", f);
    }

    template <class F>
    void visit_all(F&& f) {
        visit_base(f);
        visit_extras(f);
        visit_eval_enc(f);
        oracle.visit("oracle", f);
    }
};

using ModelF = Model<float>;

// ---------------- checkpoint glue ----------------

template <class S>
CheckpointArchive to_archive(Model<S>& m) {
    CheckpointArchive a;
    a.meta = {{"unet", m.cfg},       {"cond", m.dims},     {"has_extras", m.has_extras},
              {"lambda", m.lambda},  {"T", m.T},           {"phase", m.phase},
              {"step", m.step},      {"vocab", m.vocab.tokens()}};
    m.visit_all([&a](const std::string& name, Tensor<S>& t) {
        if constexpr (std::is_same_v<S, float>)
            a.f32[name] = t.detach();
        else
            a.f64[name] = t.detach();
    });
    return a;
}

template <class S>
Model<S> from_archive(const CheckpointArchive& a) {
    Model<S> m;
    try {
        UNetConfig cfg = a.meta.at("unet").template get<UNetConfig>();
        CondDims dims = a.meta.at("cond").template get<CondDims>();
        m = Model<S>::init_base(cfg, dims, 0);
        m.vocab = Vocabulary::from_tokens(a.meta.at("vocab").template get<std::vector<std::string>>());
        m.lambda = a.meta.value("lambda", kDefaultLambda);
        m.T = a.meta.value("T", 1000);
        m.phase = a.meta.value("phase", "base");
        m.step = a.meta.value("step", 0);
        if (a.meta.value("has_extras", false)) m.add_extras(0);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptArtifactError(std::string("bad checkpoint metadata: ") + e.what());
    }
    m.visit_all([&a](const std::string& name, Tensor<S>& t) {
        if constexpr (std::is_same_v<S, float>) {
            auto it = a.f32.find(name);
            if (it == a.f32.end()) throw CorruptArtifactError("checkpoint missing tensor '" + name + "'");
            if (it->second.shape() != t.shape())
                throw CorruptArtifactError("checkpoint tensor '" + name + "' has shape " +
                                           shape_str(it->second.shape()) + ", expected " +
                                           shape_str(t.shape()));
            t = it->second.detach();
        } else {
            auto it = a.f64.find(name);
            if (it == a.f64.end()) throw CorruptArtifactError("checkpoint missing tensor '" + name + "'");
            if (it->second.shape() != t.shape())
                throw CorruptArtifactError("checkpoint tensor '" + name + "' shape mismatch");
            t = it->second.detach();
        }
    });
    return m;
}

template <class S>
void save_model(Model<S>& m, const std::string& path) {
    to_archive(m).save(path);
}

template <class S>
Model<S> load_model(const std::string& path) {
    return from_archive<S>(CheckpointArchive::load(path));
}

}  // namespace df
