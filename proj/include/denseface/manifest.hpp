#pragma once

// Run manifests: every CLI command records its fully resolved configuration,
// seeds, checkpoint hashes and artifact paths, on success and on failure.

#include <string>

#include "json.hpp"

namespace df {

struct RunManifest {
    std::string command;
    nlohmann::json resolved;  // every default materialized
    nlohmann::json seeds = nlohmann::json::object();
    nlohmann::json checkpoint_hashes = nlohmann::json::object();
    nlohmann::json artifacts = nlohmann::json::array();
    double wall_clock_sec = 0.0;
    std::string status = "ok";  // "ok" or "error: ..."
    std::string version = "denseface-0.1.0";

    nlohmann::json to_json() const;
    void write(const std::string& path) const;
    static RunManifest read(const std::string& path);
};

}  // namespace df
