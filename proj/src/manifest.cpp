#include "denseface/manifest.hpp"

#include <fstream>

#include "denseface/error.hpp"

using nlohmann::json;

namespace df {

json RunManifest::to_json() const {
    return json{{"command", command},
                {"resolved", resolved},
                {"seeds", seeds},
                {"checkpoint_hashes", checkpoint_hashes},
                {"artifacts", artifacts},
                {"wall_clock_sec", wall_clock_sec},
                {"status", status},
                {"version", version}};
}

void RunManifest::write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest " + path);
    f << to_json().dump(2) << "\n";
}

RunManifest RunManifest::read(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path);
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw CorruptArtifactError(path + ": bad manifest json");
    RunManifest m;
    m.command = j.value("command", "");
    m.resolved = j.value("resolved", json::object());
    m.seeds = j.value("seeds", json::object());
    m.checkpoint_hashes = j.value("checkpoint_hashes", json::object());
    m.artifacts = j.value("artifacts", json::array());
    m.wall_clock_sec = j.value("wall_clock_sec", 0.0);
    m.status = j.value("status", "");
    m.version = j.value("version", "");
    return m;
}

}  // namespace df
