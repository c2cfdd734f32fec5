#include "denseface/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

using nlohmann::json;

namespace df {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'C', 'K'};
constexpr size_t kAlign = 64;

size_t align_up(size_t x) { return (x + kAlign - 1) / kAlign * kAlign; }

template <class T>
void append_raw(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t CheckpointArchive::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : f32) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.values().data(), t.values().size() * sizeof(float), h);
    }
    for (const auto& [name, t] : f64) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.values().data(), t.values().size() * sizeof(double), h);
    }
    return h;
}

void CheckpointArchive::save(const std::string& path) const {
    json table = json::object();
    size_t offset = 0;  // relative to blob region start
    auto add_entry = [&](const std::string& name, const char* dtype, const Shape& shape,
                         size_t bytes) {
        offset = align_up(offset);
        table[name] = {{"dtype", dtype}, {"shape", shape}, {"offset", offset}, {"bytes", bytes}};
        offset += bytes;
    };
    for (const auto& [name, t] : f32)
        add_entry(name, "f32", t.shape(), t.values().size() * sizeof(float));
    for (const auto& [name, t] : f64)
        add_entry(name, "f64", t.shape(), t.values().size() * sizeof(double));

    json header;
    header["meta"] = meta;
    header["tensors"] = table;
    header["content_hash"] = hash_hex(content_hash());
    const std::string header_str = header.dump();

    std::string out;
    out.append(kMagic, 4);
    append_raw(out, kCheckpointVersion);
    const uint64_t hlen = header_str.size();
    append_raw(out, hlen);
    out += header_str;
    const size_t blob_start = align_up(out.size());
    out.resize(blob_start, '\0');
    for (const auto& [name, t] : f32) {
        const size_t off = blob_start + table[name]["offset"].get<size_t>();
        out.resize(std::max(out.size(), off), '\0');
        out.append(reinterpret_cast<const char*>(t.values().data()),
                   t.values().size() * sizeof(float));
    }
    for (const auto& [name, t] : f64) {
        const size_t off = blob_start + table[name]["offset"].get<size_t>();
        out.resize(std::max(out.size(), off), '\0');
        out.append(reinterpret_cast<const char*>(t.values().data()),
                   t.values().size() * sizeof(double));
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

CheckpointArchive CheckpointArchive::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, 4) != 0)
        throw CorruptArtifactError(path + ": not a DFCK checkpoint");
    uint32_t version = 0;
    std::memcpy(&version, raw.data() + 4, 4);
    if (version != kCheckpointVersion)
        throw CorruptArtifactError(path + ": unsupported version " + std::to_string(version));
    uint64_t hlen = 0;
    std::memcpy(&hlen, raw.data() + 8, 8);
    if (16 + hlen > raw.size()) throw CorruptArtifactError(path + ": truncated header");
    json header = json::parse(raw.substr(16, hlen), nullptr, false);
    if (header.is_discarded()) throw CorruptArtifactError(path + ": bad header json");
    const size_t blob_start = align_up(16 + hlen);

    CheckpointArchive a;
    a.meta = header.value("meta", json::object());
    for (const auto& [name, e] : header.at("tensors").items()) {
        const std::string dtype = e.at("dtype").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        const size_t off = blob_start + e.at("offset").get<size_t>();
        const size_t bytes = e.at("bytes").get<size_t>();
        if (off + bytes > raw.size()) throw CorruptArtifactError(path + ": truncated blob for '" + name + "'");
        if (dtype == "f32") {
            TensorF t(shape);
            if (bytes != t.values().size() * sizeof(float))
                throw CorruptArtifactError(path + ": blob size mismatch for '" + name + "'");
            std::memcpy(t.mutable_values().data(), raw.data() + off, bytes);
            a.f32.emplace(name, std::move(t));
        } else if (dtype == "f64") {
            TensorD t(shape);
            if (bytes != t.values().size() * sizeof(double))
                throw CorruptArtifactError(path + ": blob size mismatch for '" + name + "'");
            std::memcpy(t.mutable_values().data(), raw.data() + off, bytes);
            a.f64.emplace(name, std::move(t));
        } else {
            throw CorruptArtifactError(path + ": unknown dtype '" + dtype + "'");
        }
    }
    const std::string want = header.value("content_hash", "");
    if (want != hash_hex(a.content_hash()))
        throw CorruptArtifactError(path + ": content hash mismatch");
    return a;
}

uint64_t checkpoint_file_hash(const std::string& path) {
    return CheckpointArchive::load(path).content_hash();
}

}  // namespace df
