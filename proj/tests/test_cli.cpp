#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "denseface/eval.hpp"
#include "denseface/model.hpp"

using namespace df;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#ifndef DF_CLI_PATH
#error "DF_CLI_PATH must point at the denseface binary"
#endif

const std::string kCli = DF_CLI_PATH;

// Lean model flags shared by every training invocation in this suite.
const std::string kTinyModel =
    " --T 50 --model-base 4 --model-blocks 1 --model-attn-start 2 --model-heads 2"
    " --model-time-dim 16 --cond-k 16 --cond-d 8 --log-every 0";

int run(const std::string& args, std::string* out = nullptr) {
    const std::string out_file = (fs::temp_directory_path() / "df_cli_out.txt").string();
    const int rc = std::system((kCli + " " + args + " >" + out_file + " 2>&1").c_str());
    if (out) {
        std::ifstream f(out_file);
        std::stringstream ss;
        ss << f.rdbuf();
        *out = ss.str();
    }
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Workdir {
    fs::path dir;
    Workdir() : dir(fs::temp_directory_path() / "df_cli_work") {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string operator/(const std::string& s) const { return (dir / s).string(); }
};

// one dataset + base/adapter checkpoints shared across test cases
const Workdir& fixture() {
    static Workdir w = [] {
        Workdir wd;
        REQUIRE(run("synth --n 16 --seed 7 --out " + (wd / "ds")) == 0);
        REQUIRE(run("train --phase base --data " + (wd / "ds/manifest.jsonl") + " --out " +
                    (wd / "base.ckpt") + " --steps 2 --batch 2" + kTinyModel) == 0);
        REQUIRE(run("train --phase adapter --data " + (wd / "ds/manifest.jsonl") +
                    " --base-ckpt " + (wd / "base.ckpt") + " --out " + (wd / "adapter.ckpt") +
                    " --steps 2 --batch 2 --eval-enc-steps 2" + kTinyModel) == 0);
        return wd;
    }();
    return w;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run("") == 1);
    CHECK(run("synth --n 5") == 1);                       // missing --out
    CHECK(run("frobnicate") == 1);                        // unknown subcommand
    std::string out;
    CHECK(run("generate --ckpt nowhere.ckpt", &out) == 1);  // missing --out
}

TEST_CASE("synth is reproducible and writes its manifest") {
    Workdir w;
    CHECK(run("synth --n 12 --seed 9 --out " + (w / "a")) == 0);
    CHECK(run("synth --n 12 --seed 9 --out " + (w / "b")) == 0);
    // byte-identical trees
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(w / "a")) {
        if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
        auto rel = fs::relative(e.path(), w / "a");
        CHECK(slurp(e.path()) == slurp(fs::path(w / "b") / rel));
        ++files;
    }
    CHECK(files > 10);

    auto man = json::parse(slurp(fs::path(w / "a") / "run_manifest.json"));
    CHECK(man.at("command") == "synth");
    CHECK(man.at("resolved").at("n") == 12);
    CHECK(man.at("seeds").at("dataset") == 9);
    CHECK(man.at("status") == "ok");
}

TEST_CASE("adapter phase without --base-ckpt is a usage error with a manifest") {
    const auto& w = fixture();
    std::string out;
    CHECK(run("train --phase adapter --data " + (w / "ds/manifest.jsonl") + " --out " +
                  (w / "x.ckpt") + kTinyModel,
              &out) == 1);
    CHECK(out.find("--base-ckpt") != std::string::npos);
    auto man = json::parse(slurp(w / "x.ckpt.manifest.json"));
    CHECK(man.at("status").get<std::string>().rfind("error", 0) == 0);
}

TEST_CASE("train smoke run writes a loadable checkpoint") {
    const auto& w = fixture();
    auto m = load_model<float>(w / "base.ckpt");
    CHECK(m.phase == "base");
    CHECK(m.step == 2);
    CHECK_FALSE(m.has_extras);
    auto m2 = load_model<float>(w / "adapter.ckpt");
    CHECK(m2.phase == "adapter");
    CHECK(m2.has_extras);
}

TEST_CASE("config file values apply and flags win") {
    const auto& w = fixture();
    {
        std::ofstream f(w / "train.cfg");
        f << "steps=3\nbatch=2\n";
    }
    CHECK(run("train --phase base --config " + (w / "train.cfg") + " --data " +
              (w / "ds/manifest.jsonl") + " --out " + (w / "cfg1.ckpt") + kTinyModel) == 0);
    auto man1 = json::parse(slurp(w / "cfg1.ckpt.manifest.json"));
    CHECK(man1.at("resolved").at("train_config").at("steps") == 3);

    CHECK(run("train --phase base --config " + (w / "train.cfg") + " --steps 2 --data " +
              (w / "ds/manifest.jsonl") + " --out " + (w / "cfg2.ckpt") + kTinyModel) == 0);
    auto man2 = json::parse(slurp(w / "cfg2.ckpt.manifest.json"));
    CHECK(man2.at("resolved").at("train_config").at("steps") == 2);

    // JSON config files are accepted too
    {
        std::ofstream f(w / "train.json");
        f << "{\"steps\": 4, \"batch\": 2}\n";
    }
    CHECK(run("train --phase base --config " + (w / "train.json") + " --data " +
              (w / "ds/manifest.jsonl") + " --out " + (w / "cfg3.ckpt") + kTinyModel) == 0);
    auto man3 = json::parse(slurp(w / "cfg3.ckpt.manifest.json"));
    CHECK(man3.at("resolved").at("train_config").at("steps") == 4);
}

TEST_CASE("generate text twice gives identical bytes and records defaults") {
    const auto& w = fixture();
    const std::string args = "generate --mode text --caption \"a face\" --seed 1 --ckpt " +
                             (w / "base.ckpt") + " --out ";
    CHECK(run(args + (w / "g1") + " --steps 3") == 0);
    CHECK(run(args + (w / "g2") + " --steps 3") == 0);
    CHECK(slurp(fs::path(w / "g1") / "final.ppm") == slurp(fs::path(w / "g2") / "final.ppm"));

    // defaults recorded: steps 25, guidance 3
    CHECK(run(args + (w / "g3")) == 0);
    auto man = json::parse(slurp(fs::path(w / "g3") / "run_manifest.json"));
    CHECK(man.at("resolved").at("steps") == 25);
    CHECK(man.at("resolved").at("guidance") == 3.0);
}

TEST_CASE("face mode without identity flags is a usage error") {
    const auto& w = fixture();
    std::string out;
    CHECK(run("generate --mode face --caption \"a face\" --ckpt " + (w / "adapter.ckpt") +
                  " --out " + (w / "gf") + " --steps 2",
              &out) == 1);
    CHECK(out.find("id-") != std::string::npos);
    // and with an identity it succeeds, emitting annotations
    CHECK(run("generate --mode face --caption \"a face\" --id-spec .5,.5,.5,.5,.5,.5,.5,.5"
              " --pose 5,0,0 --ckpt " +
              (w / "adapter.ckpt") + " --out " + (w / "gf2") + " --steps 2") == 0);
    CHECK(fs::exists(fs::path(w / "gf2") / "pred_mask.pgm"));
    CHECK(fs::exists(fs::path(w / "gf2") / "pred_landmarks.json"));
}

TEST_CASE("eval emits a round-tripping report") {
    const auto& w = fixture();
    CHECK(run("eval --ckpt " + (w / "adapter.ckpt") + " --data " + (w / "ds/manifest.jsonl") +
              " --n 2 --steps 2 --report " + (w / "rep.json")) == 0);
    auto j = json::parse(slurp(w / "rep.json"));
    auto rep = EvalReport::from_json(j);
    CHECK(rep.to_json() == j);
    CHECK(rep.n + rep.skipped == 2);
}

TEST_CASE("inspect shows the plug-in structure") {
    const auto& w = fixture();
    std::string base_out, adapter_out;
    CHECK(run("inspect --ckpt " + (w / "base.ckpt"), &base_out) == 0);
    CHECK(run("inspect --ckpt " + (w / "adapter.ckpt"), &adapter_out) == 0);
    CHECK(base_out.find("unet.enc.conv_in.w") != std::string::npos);
    CHECK(base_out.find("adapter") == std::string::npos);
    CHECK(base_out.find("pose_branch") == std::string::npos);
    CHECK(adapter_out.find("adapter") != std::string::npos);
    CHECK(adapter_out.find("pose_branch") != std::string::npos);
    CHECK(adapter_out.find("heads.") != std::string::npos);
}

TEST_CASE("corrupt checkpoints exit 3") {
    const auto& w = fixture();
    // truncated copy
    auto bytes = slurp(w / "base.ckpt");
    {
        std::ofstream f(w / "trunc.ckpt", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK(run("inspect --ckpt " + (w / "trunc.ckpt")) == 3);
    CHECK(run("eval --ckpt " + (w / "trunc.ckpt") + " --data " + (w / "ds/manifest.jsonl") +
              " --n 1 --report " + (w / "r2.json")) == 3);
    CHECK_FALSE(fs::exists(w / "r2.json"));  // no partial report
    // missing file is an I/O error
    CHECK(run("inspect --ckpt " + (w / "nothere.ckpt")) == 2);
}
