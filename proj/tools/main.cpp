// denseface: dataset generation, two-phase training, generation,
// evaluation, and checkpoint inspection in one binary.
//
// Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 corrupt
// artifact. Every state-changing command writes a run manifest before
// exit, on success and on failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "denseface/eval.hpp"
#include "denseface/manifest.hpp"
#include "denseface/model.hpp"
#include "denseface/pipeline.hpp"
#include "denseface/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace df;

namespace {

// Accepts both key=value (INI) and flat-JSON config files.
class FlexibleConfig : public CLI::ConfigINI {
public:
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::stringstream buf;
        buf << input.rdbuf();
        std::string text = buf.str();
        const auto first = text.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && text[first] == '{') {
            json j;
            try {
                j = json::parse(text);
            } catch (const json::exception& e) {
                throw CLI::FileError(std::string("bad JSON config: ") + e.what());
            }
            std::vector<CLI::ConfigItem> items;
            for (auto& [k, v] : j.items()) {
                CLI::ConfigItem item;
                item.name = k;
                item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
                items.push_back(item);
            }
            return items;
        }
        std::stringstream again(text);
        return CLI::ConfigINI::from_config(again);
    }
};

// Expands `--config FILE` into command-line arguments before parsing.  Keys
// already given on the command line win; everything else (validation,
// required options) then goes through the normal parse path.
std::vector<std::string> expand_config_args(const std::vector<std::string>& in) {
    std::string path;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const std::string& a = in[i];
        if (a == "--config") {
            if (i + 1 >= in.size()) throw ConfigError("--config needs a file path");
            path = in[++i];
        } else if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
        } else {
            out.push_back(a);
        }
    }
    if (path.empty()) return out;
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    FlexibleConfig fmt;
    std::vector<CLI::ConfigItem> items;
    try {
        items = fmt.from_config(f);
    } catch (const CLI::FileError& e) {
        throw ConfigError(e.what());
    }
    auto given = [&out](const std::string& name) {
        const std::string flag = "--" + name;
        for (const auto& a : out)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    for (const auto& item : items) {
        if (given(item.name)) continue;
        out.push_back("--" + item.name);
        for (const auto& v : item.inputs) out.push_back(v);
    }
    return out;
}

PoseCondition parse_pose(const std::string& s) {
    PoseCondition p;
    if (s.empty()) return p;
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf", &p.yaw, &p.pitch, &p.roll) != 3)
        throw ConfigError("--pose expects \"yaw,pitch,roll\" in degrees, got '" + s + "'");
    p.validate();
    return p;
}

std::array<double, 8> parse_id_spec(const std::string& s) {
    std::array<double, 8> p{};
    std::stringstream ss(s);
    std::string tok;
    size_t i = 0;
    while (std::getline(ss, tok, ',')) {
        if (i >= 8) throw ConfigError("--id-spec expects exactly 8 floats");
        try {
            p[i++] = std::stod(tok);
        } catch (const std::exception&) {
            throw ConfigError("--id-spec: bad float '" + tok + "'");
        }
    }
    if (i != 8) throw ConfigError("--id-spec expects exactly 8 floats, got " + std::to_string(i));
    return p;
}

TensorF load_embedding_file(const std::string& path, int d) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::vector<float> vals;
    std::string tok;
    while (f >> tok) {
        // tolerate commas between numbers
        for (auto& c : tok)
            if (c == ',') c = ' ';
        std::stringstream ss(tok);
        double v;
        while (ss >> v) vals.push_back(static_cast<float>(v));
    }
    if (static_cast<int>(vals.size()) != d)
        throw CorruptArtifactError(path + ": expected " + std::to_string(d) + " floats, got " +
                                   std::to_string(vals.size()));
    TensorF t({d});
    t.mutable_values() = vals;
    return t;
}

uint64_t tensor_hash(const TensorF& t) {
    return fnv1a64(t.values().data(), t.values().size() * sizeof(float));
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const IoError*>(&e)) return 2;
    if (dynamic_cast<const CorruptArtifactError*>(&e)) return 3;
    return 1;
}

// Runs a command body, always writing the manifest before returning.
template <class F>
int run_with_manifest(RunManifest& man, const std::string& manifest_path, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    int code = 0;
    try {
        body();
        man.status = "ok";
    } catch (const std::exception& e) {
        man.status = std::string("error: ") + e.what();
        std::fprintf(stderr, "error: %s\n", e.what());
        code = exit_code_for(e);
    }
    man.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!manifest_path.empty()) {
        try {
            man.write(manifest_path);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error writing manifest: %s\n", e.what());
            if (code == 0) code = 2;
        }
    }
    return code;
}

int env_threads() {
    const char* v = std::getenv("DENSEFACE_THREADS");
    if (!v) return 1;
    const int n = std::atoi(v);
    return n > 0 ? n : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"denseface: personalized face generation at desk scale"};
    app.require_subcommand(1);

    std::string manifest_path;  // empty: per-command default
    bool deterministic = false;
    app.add_option("--manifest", manifest_path, "run manifest path (default: next to the output)");
    app.add_flag("--deterministic", deterministic, "single-threaded, fixed data order");

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a sprite dataset");
    int sy_n = 100, sy_npose = 10;
    uint64_t sy_seed = 0;
    std::string sy_out;
    synth->add_option("--n", sy_n, "number of sprites")->capture_default_str();
    synth->add_option("--seed", sy_seed, "master seed")->capture_default_str();
    synth->add_option("--n-pose", sy_npose, "poses per identity")->capture_default_str();
    synth->add_option("--out", sy_out, "output directory")->required();

    // ---- train ----
    auto* train = app.add_subcommand("train", "run one training phase");
    std::string tr_phase = "base", tr_data, tr_base_ckpt, tr_out, tr_sched = "cosine";
    TrainConfig tr_cfg;
    int tr_T = 200;
    int tr_model_base = 32, tr_model_blocks = 2, tr_model_attn = 1, tr_heads = 4, tr_time_dim = 128;
    std::vector<int> tr_mults = {1, 2, 4};
    int tr_k = 64, tr_d = 32, tr_L = 16;
    train->add_option("--phase", tr_phase, "base|adapter")->capture_default_str();
    train->add_option("--data", tr_data, "dataset manifest (manifest.jsonl)")->required();
    train->add_option("--base-ckpt", tr_base_ckpt, "checkpoint to continue from");
    train->add_option("--out", tr_out, "output checkpoint path")->required();
    train->add_option("--steps", tr_cfg.steps, "optimizer steps")->capture_default_str();
    train->add_option("--batch", tr_cfg.batch, "batch size")->capture_default_str();
    train->add_option("--lr", tr_cfg.lr, "learning rate")->capture_default_str();
    train->add_option("--seed", tr_cfg.seed, "training seed")->capture_default_str();
    train->add_option("--caption-dropout", tr_cfg.caption_dropout)->capture_default_str();
    train->add_option("--annotation-gate", tr_cfg.annotation_gate)->capture_default_str();
    train->add_option("--eval-enc-steps", tr_cfg.eval_enc_steps)->capture_default_str();
    train->add_option("--eval-enc-lr", tr_cfg.eval_enc_lr)->capture_default_str();
    train->add_option("--log-every", tr_cfg.log_every)->capture_default_str();
    train->add_option("--T", tr_T, "diffusion timesteps")->capture_default_str();
    train->add_option("--schedule", tr_sched, "cosine|linear")->capture_default_str();
    train->add_option("--model-base", tr_model_base, "base channels")->capture_default_str();
    train->add_option("--model-mults", tr_mults, "channel multipliers")->capture_default_str();
    train->add_option("--model-blocks", tr_model_blocks)->capture_default_str();
    train->add_option("--model-attn-start", tr_model_attn)->capture_default_str();
    train->add_option("--model-heads", tr_heads)->capture_default_str();
    train->add_option("--model-time-dim", tr_time_dim)->capture_default_str();
    train->add_option("--cond-k", tr_k)->capture_default_str();
    train->add_option("--cond-d", tr_d)->capture_default_str();
    train->add_option("--cond-L", tr_L)->capture_default_str();

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "run the diffusion pipeline");
    std::string g_mode = "text", g_caption, g_id_spec, g_id_embed, g_id_image, g_pose, g_mask = "ellipse";
    std::string g_ckpt, g_out, g_sched = "cosine";
    GenerationRequest g_req;
    gen->add_option("--mode", g_mode, "text|face|personalized")->capture_default_str();
    gen->add_option("--caption", g_caption, "caption text");
    gen->add_option("--id-spec", g_id_spec, "8 comma-separated floats in [0,1]");
    gen->add_option("--id-embed", g_id_embed, "file of identity-embedding floats");
    gen->add_option("--id-image", g_id_image, "64x64 PPM to embed as the identity");
    gen->add_option("--pose", g_pose, "yaw,pitch,roll degrees");
    gen->add_option("--seed", g_req.seed, "generation seed")->capture_default_str();
    gen->add_option("--steps", g_req.steps, "DDIM steps")->capture_default_str();
    gen->add_option("--guidance", g_req.guidance, "CFG scale")->capture_default_str();
    gen->add_option("--mask", g_mask, "ellipse|predicted|file:PATH")->capture_default_str();
    gen->add_option("--schedule", g_sched, "cosine|linear")->capture_default_str();
    gen->add_option("--ckpt", g_ckpt, "model checkpoint")->required();
    gen->add_option("--out", g_out, "output directory")->required();

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on held-out identities");
    std::string e_ckpt, e_data, e_report, e_split = "heldout", e_sched = "cosine";
    int e_n = 200, e_steps = 25;
    double e_guidance = 3.0;
    ev->add_option("--ckpt", e_ckpt, "model checkpoint")->required();
    ev->add_option("--data", e_data, "dataset manifest")->required();
    ev->add_option("--n", e_n, "max samples")->capture_default_str();
    ev->add_option("--split", e_split, "train|heldout")->capture_default_str();
    ev->add_option("--steps", e_steps, "DDIM steps")->capture_default_str();
    ev->add_option("--guidance", e_guidance, "CFG scale")->capture_default_str();
    ev->add_option("--schedule", e_sched, "cosine|linear")->capture_default_str();
    ev->add_option("--report", e_report, "report JSON path")->required();

    // ---- inspect ----
    auto* insp = app.add_subcommand("inspect", "print checkpoint contents");
    std::string i_ckpt;
    insp->add_option("--ckpt", i_ckpt, "model checkpoint")->required();

    std::string cfg_note;
    for (auto* sub : {synth, train, gen, ev})
        sub->add_option("--config", cfg_note, "config file (INI key=value or flat JSON)");

    try {
        std::vector<std::string> args =
            expand_config_args(std::vector<std::string>(argv + 1, argv + argc));
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }

    RunManifest man;
    man.resolved["deterministic"] = deterministic;
    man.resolved["threads"] = env_threads();

    if (*synth) {
        man.command = "synth";
        man.resolved["n"] = sy_n;
        man.resolved["n_pose"] = sy_npose;
        man.resolved["out"] = sy_out;
        man.seeds["dataset"] = sy_seed;
        if (manifest_path.empty()) manifest_path = (fs::path(sy_out) / "run_manifest.json").string();
        return run_with_manifest(man, manifest_path, [&] {
            auto m = generate_dataset(sy_n, sy_seed, sy_out, sy_npose, true);
            man.artifacts.push_back((fs::path(sy_out) / "manifest.jsonl").string());
            man.resolved["entries"] = m.entries.size();
        });
    }

    if (*train) {
        man.command = "train";
        tr_cfg.phase = tr_phase;
        man.seeds["train"] = tr_cfg.seed;
        if (manifest_path.empty()) manifest_path = tr_out + ".manifest.json";
        return run_with_manifest(man, manifest_path, [&] {
            if (tr_phase == "adapter" && tr_base_ckpt.empty())
                throw ConfigError("--phase adapter requires --base-ckpt");
            tr_cfg.validate();

            ModelF model;
            if (!tr_base_ckpt.empty()) {
                model = load_model<float>(tr_base_ckpt);
                man.checkpoint_hashes["base"] = hash_hex(checkpoint_file_hash(tr_base_ckpt));
            } else {
                UNetConfig cfg;
                cfg.base = tr_model_base;
                cfg.mults = tr_mults;
                cfg.blocks = tr_model_blocks;
                cfg.attn_start_level = tr_model_attn;
                cfg.heads = tr_heads;
                cfg.img = kImageSize;
                cfg.time_dim = tr_time_dim;
                cfg.cond_k = tr_k;
                model = ModelF::init_base(cfg, CondDims{tr_k, tr_d, tr_L}, tr_cfg.seed);
            }
            model.T = tr_T;
            if (tr_phase == "adapter" && !model.has_extras) model.add_extras(tr_cfg.seed);

            auto sched = make_schedule(schedule_kind_from_string(tr_sched), model.T);
            auto data = load_manifest(tr_data);
            auto split = data.split("train");

            auto stats = train_phase(model, sched, split, tr_cfg);
            if (tr_phase == "adapter" && tr_cfg.eval_enc_steps > 0)
                fit_eval_encoder(model, split, tr_cfg);
            save_model(model, tr_out);

            man.resolved["train_config"] = {{"phase", tr_cfg.phase},
                                            {"steps", tr_cfg.steps},
                                            {"batch", tr_cfg.batch},
                                            {"lr", tr_cfg.lr},
                                            {"caption_dropout", tr_cfg.caption_dropout},
                                            {"annotation_gate", tr_cfg.annotation_gate},
                                            {"eval_enc_steps", tr_cfg.eval_enc_steps},
                                            {"eval_enc_lr", tr_cfg.eval_enc_lr},
                                            {"T", tr_T},
                                            {"schedule", tr_sched}};
            man.resolved["model"] = model.cfg;
            man.resolved["data"] = tr_data;
            man.resolved["out"] = tr_out;
            man.resolved["base_ckpt"] = tr_base_ckpt;
            man.resolved["seed"] = tr_cfg.seed;
            man.resolved["loss_head"] = stats.mean_head(100);
            man.resolved["loss_tail"] = stats.mean_tail(100);
            man.checkpoint_hashes["out"] = hash_hex(checkpoint_file_hash(tr_out));
            man.artifacts.push_back(tr_out);
        });
    }

    if (*gen) {
        man.command = "generate";
        man.seeds["generate"] = g_req.seed;
        if (manifest_path.empty()) manifest_path = (fs::path(g_out) / "run_manifest.json").string();
        return run_with_manifest(man, manifest_path, [&] {
            if (g_mode != "text" && g_mode != "face" && g_mode != "personalized")
                throw ConfigError("--mode must be text, face or personalized");
            g_req.caption = g_caption;
            g_req.pose = parse_pose(g_pose);
            if (g_mask.rfind("file:", 0) == 0) {
                g_req.mask_source = MaskSource::file;
                g_req.mask_file = g_mask.substr(5);
            } else {
                g_req.mask_source = mask_source_from_string(g_mask);
            }

            auto model = load_model<float>(g_ckpt);
            man.checkpoint_hashes["ckpt"] = hash_hex(checkpoint_file_hash(g_ckpt));
            auto sched = make_schedule(schedule_kind_from_string(g_sched), model.T);

            if (g_mode != "text") {
                const int sources = !g_id_spec.empty() + !g_id_embed.empty() + !g_id_image.empty();
                if (sources == 0)
                    throw ConfigError("--mode " + g_mode +
                                      " requires an identity: --id-spec, --id-embed or --id-image");
                if (sources > 1) throw ConfigError("give exactly one identity source");
                if (!g_id_spec.empty()) g_req.id_params = parse_id_spec(g_id_spec);
                if (!g_id_embed.empty()) g_req.c_id = load_embedding_file(g_id_embed, model.dims.d);
                if (!g_id_image.empty()) {
                    auto img = encode_image(read_ppm(g_id_image));
                    TensorF ones({kImageSize, kImageSize});
                    for (auto& v : ones.mutable_values()) v = 1.0f;
                    g_req.c_id = eval_embed(model, img, ones);
                }
            }

            fs::create_directories(g_out);
            GenerationResult r;
            if (g_mode == "text")
                r = generate_text(model, sched, g_req);
            else if (g_mode == "face")
                r = generate_face(model, sched, g_req);
            else
                r = personalized_generate(model, sched, g_req);

            const auto out = fs::path(g_out);
            write_ppm((out / "final.ppm").string(), decode_image(r.image));
            man.artifacts.push_back((out / "final.ppm").string());
            if (r.base) {
                write_ppm((out / "base.ppm").string(), decode_image(*r.base));
                man.artifacts.push_back((out / "base.ppm").string());
            }
            if (r.mask) {
                write_pgm((out / "blend_mask.pgm").string(), gray_to_u8(r.mask->m));
                man.artifacts.push_back((out / "blend_mask.pgm").string());
                man.resolved["mask_provenance"] = r.mask->provenance;
            }
            if (r.annotations) {
                save_annotations(*r.annotations, (out / "pred_mask.pgm").string(),
                                 (out / "pred_depth.pgm").string(),
                                 (out / "pred_landmarks.json").string());
                man.artifacts.push_back((out / "pred_mask.pgm").string());
                man.artifacts.push_back((out / "pred_depth.pgm").string());
                man.artifacts.push_back((out / "pred_landmarks.json").string());
            }
            man.resolved["mode"] = g_mode;
            man.resolved["caption"] = g_caption;
            man.resolved["id_spec"] = g_id_spec;
            man.resolved["id_embed"] = g_id_embed;
            man.resolved["id_image"] = g_id_image;
            man.resolved["pose"] = g_pose;
            man.resolved["seed"] = g_req.seed;
            man.resolved["steps"] = g_req.steps;
            man.resolved["guidance"] = g_req.guidance;
            man.resolved["mask"] = g_mask;
            man.resolved["schedule"] = g_sched;
            man.resolved["ckpt"] = g_ckpt;
            man.resolved["out"] = g_out;
        });
    }

    if (*ev) {
        man.command = "eval";
        if (manifest_path.empty()) manifest_path = e_report + ".manifest.json";
        return run_with_manifest(man, manifest_path, [&] {
            auto model = load_model<float>(e_ckpt);
            man.checkpoint_hashes["ckpt"] = hash_hex(checkpoint_file_hash(e_ckpt));
            auto sched = make_schedule(schedule_kind_from_string(e_sched), model.T);
            auto data = load_manifest(e_data);
            auto split = data.split(e_split);
            auto rep = evaluate_generation(model, sched, split, e_n, e_steps, e_guidance);
            rep.checkpoint_hash = hash_hex(checkpoint_file_hash(e_ckpt));

            std::ofstream f(e_report);
            if (!f) throw IoError("cannot write " + e_report);
            f << rep.to_json().dump(2) << "\n";
            f.close();
            std::printf("%s", rep.table().c_str());
            man.artifacts.push_back(e_report);
            man.resolved["n"] = e_n;
            man.resolved["split"] = e_split;
            man.resolved["steps"] = e_steps;
            man.resolved["guidance"] = e_guidance;
            man.resolved["schedule"] = e_sched;
            man.resolved["ckpt"] = e_ckpt;
            man.resolved["data"] = e_data;
            man.resolved["report"] = e_report;
        });
    }

    if (*insp) {
        man.command = "inspect";
        return run_with_manifest(man, manifest_path, [&] {
            auto a = CheckpointArchive::load(i_ckpt);
            std::printf("meta: %s\n", a.meta.dump(2).c_str());
            std::printf("content hash: %s\n", hash_hex(a.content_hash()).c_str());
            for (const auto& [name, t] : a.f32)
                std::printf("%-44s f32 %-18s %s\n", name.c_str(), shape_str(t.shape()).c_str(),
                            hash_hex(tensor_hash(t)).c_str());
            for (const auto& [name, t] : a.f64)
                std::printf("%-44s f64 %-18s\n", name.c_str(), shape_str(t.shape()).c_str());
        });
    }

    return 1;
}
