#pragma once

// Named-tensor archive: magic "DFCK", u32 version, u64-length-prefixed JSON
// header (metadata + tensor table), then raw little-endian blobs, each
// 64-byte aligned. A content hash over the blob region is verified on load.

#include <map>
#include <string>

#include "json.hpp"

#include "denseface/tensor.hpp"

namespace df {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointArchive {
    nlohmann::json meta;  // config snapshot, phase, step, rng state, ...
    std::map<std::string, TensorF> f32;
    std::map<std::string, TensorD> f64;

    bool has(const std::string& name) const { return f32.count(name) || f64.count(name); }

    const TensorF& get_f32(const std::string& name) const {
        auto it = f32.find(name);
        if (it == f32.end()) throw CorruptArtifactError("missing tensor '" + name + "'");
        return it->second;
    }

    // atomic: write to temp file, then rename
    void save(const std::string& path) const;
    static CheckpointArchive load(const std::string& path);

    uint64_t content_hash() const;
};

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hash_hex(uint64_t h);

// content hash of an already-written checkpoint file (cheap re-read)
uint64_t checkpoint_file_hash(const std::string& path);

}  // namespace df
