#include "denseface/synthfaces.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "denseface/image_io.hpp"
#include "denseface/palettes.hpp"
#include "denseface/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace df {

namespace {

struct Geometry {
    double a, b;            // face ellipse semi-axes
    double eye_y;           // canonical eye row
    double spacing;         // eye spacing
    double eye_r;           // eye radius
    double mouth_half;      // half mouth width
    double mouth_y;         // canonical mouth row (rest)
    double nose_rest_y;     // canonical nose row (rest)
    double shift_x, shift_y;  // pose feature translation (nose + mouth)
    double cos_r, sin_r;    // roll rotation
};

constexpr double kCx = 32.0, kCy = 32.0;

Geometry make_geometry(const SpriteSpec& spec) {
    const auto& p = spec.id_params;
    Geometry g;
    g.a = 16.0 + 6.0 * p[0];
    g.b = 18.0 + 6.0 * p[1];
    g.spacing = 10.0 + 6.0 * p[2];
    g.eye_r = 1.5 + 1.5 * p[3];
    g.mouth_half = (5.0 + 4.0 * p[4]) * 0.5;
    g.eye_y = kCy - 0.30 * g.b;
    g.mouth_y = kCy + 0.25 * g.b;
    g.nose_rest_y = g.eye_y + kNoseRestFrac * g.spacing;
    g.shift_x = kPoseShiftPx * std::sin(deg2rad(spec.pose.yaw));
    g.shift_y = kPoseShiftPx * std::sin(deg2rad(spec.pose.pitch));
    const double r = deg2rad(spec.pose.roll);
    g.cos_r = std::cos(r);
    g.sin_r = std::sin(r);
    return g;
}

// canonical -> image frame (rotate by roll about center)
std::array<double, 2> to_image(const Geometry& g, double u, double v) {
    const double du = u - kCx, dv = v - kCy;
    return {kCx + g.cos_r * du - g.sin_r * dv, kCy + g.sin_r * du + g.cos_r * dv};
}

// image -> canonical frame
std::array<double, 2> to_canonical(const Geometry& g, double x, double y) {
    const double dx = x - kCx, dy = y - kCy;
    return {kCx + g.cos_r * dx + g.sin_r * dy, kCy - g.sin_r * dx + g.cos_r * dy};
}

void put_rgb(TensorF& img, int x, int y, uint8_t r, uint8_t gg, uint8_t b) {
    auto& v = img.mutable_values();
    const int HW = kImageSize * kImageSize;
    const int i = y * kImageSize + x;
    v[static_cast<size_t>(i)] = static_cast<float>(r) / 255.0f * 2.0f - 1.0f;
    v[static_cast<size_t>(HW + i)] = static_cast<float>(gg) / 255.0f * 2.0f - 1.0f;
    v[static_cast<size_t>(2 * HW + i)] = static_cast<float>(b) / 255.0f * 2.0f - 1.0f;
}

json spec_to_json(const SpriteSpec& s) {
    return json{{"id_params", s.id_params},
                {"pose", {s.pose.yaw, s.pose.pitch, s.pose.roll}},
                {"background", s.background},
                {"seed", s.seed}};
}

SpriteSpec spec_from_json(const json& j) {
    SpriteSpec s;
    for (size_t i = 0; i < 8; ++i) s.id_params[i] = j.at("id_params").at(i).get<double>();
    s.pose.yaw = j.at("pose").at(0).get<double>();
    s.pose.pitch = j.at("pose").at(1).get<double>();
    s.pose.roll = j.at("pose").at(2).get<double>();
    s.background = j.at("background").get<int>();
    s.seed = j.at("seed").get<uint64_t>();
    return s;
}

std::string index_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", i);
    return buf;
}

}  // namespace

void SpriteSpec::validate() const {
    for (double p : id_params)
        if (!(p >= 0.0 && p <= 1.0)) throw DomainError("id param " + std::to_string(p) + " outside [0,1]");
    pose.validate();
    if (background < 0 || background >= static_cast<int>(kBackgroundColors.size()))
        throw DomainError("background index " + std::to_string(background));
}

SpriteSample render(const SpriteSpec& spec) {
    spec.validate();
    const Geometry g = make_geometry(spec);
    const auto& p = spec.id_params;

    const PaletteColor skin = kSkinTones[static_cast<size_t>(palette_index(p[5], kSkinTones))];
    const PaletteColor hair = kHairColors[static_cast<size_t>(palette_index(p[6], kHairColors))];
    const PaletteColor eye = kEyeColors[static_cast<size_t>(palette_index(p[7], kEyeColors))];
    const PaletteColor bg = kBackgroundColors[static_cast<size_t>(spec.background)];
    // fixed feature colors; landmarks/annotations never depend on them
    const PaletteColor nose_c = {"nose", static_cast<uint8_t>(skin.r * 3 / 4),
                                 static_cast<uint8_t>(skin.g * 3 / 4),
                                 static_cast<uint8_t>(skin.b * 3 / 4)};
    const PaletteColor mouth_c = {"mouth", 178, 58, 72};

    // canonical-frame anchors; nose and mouth carry the pose translation
    const double eye_l_u = kCx - g.spacing * 0.5, eye_r_u = kCx + g.spacing * 0.5;
    const double nose_u = kCx + g.shift_x, nose_v = g.nose_rest_y + g.shift_y;
    const double mouth_v = g.mouth_y + g.shift_y;
    const double mouth_l_u = kCx - g.mouth_half + g.shift_x;
    const double mouth_r_u = kCx + g.mouth_half + g.shift_x;

    SpriteSample out;
    out.spec = spec;
    out.caption = caption_of(spec);
    out.image = TensorF({3, kImageSize, kImageSize});
    out.annotations.mask = TensorF({kImageSize, kImageSize});
    out.annotations.depth = TensorF({kImageSize, kImageSize});

    auto& mask = out.annotations.mask.mutable_values();
    auto& depth = out.annotations.depth.mutable_values();

    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x) {
            const auto [u, v] = to_canonical(g, x, y);
            const double du = (u - kCx) / g.a, dv = (v - kCy) / g.b;
            const double re = std::sqrt(du * du + dv * dv);
            const int idx = y * kImageSize + x;
            if (re <= 1.0) {
                mask[static_cast<size_t>(idx)] = 1.0f;
                depth[static_cast<size_t>(idx)] = static_cast<float>(1.0 - re);
                // features, front to back
                const double del = std::hypot(u - eye_l_u, v - g.eye_y);
                const double der = std::hypot(u - eye_r_u, v - g.eye_y);
                const double dn = std::hypot(u - nose_u, v - nose_v);
                const bool in_mouth = (u >= mouth_l_u && u <= mouth_r_u && std::abs(v - mouth_v) <= 1.2);
                if (del <= g.eye_r || der <= g.eye_r)
                    put_rgb(out.image, x, y, eye.r, eye.g, eye.b);
                else if (dn <= 1.6)
                    put_rgb(out.image, x, y, nose_c.r, nose_c.g, nose_c.b);
                else if (in_mouth)
                    put_rgb(out.image, x, y, mouth_c.r, mouth_c.g, mouth_c.b);
                else
                    put_rgb(out.image, x, y, skin.r, skin.g, skin.b);
            } else {
                const double hu = (u - kCx) / (g.a + 3.0), hv = (v - kCy) / (g.b + 5.0);
                const bool in_hair = (hu * hu + hv * hv <= 1.0) && v <= kCy;
                if (in_hair)
                    put_rgb(out.image, x, y, hair.r, hair.g, hair.b);
                else
                    put_rgb(out.image, x, y, bg.r, bg.g, bg.b);
            }
        }

    out.annotations.landmarks[0] = to_image(g, eye_l_u, g.eye_y);
    out.annotations.landmarks[1] = to_image(g, eye_r_u, g.eye_y);
    out.annotations.landmarks[2] = to_image(g, nose_u, nose_v);
    out.annotations.landmarks[3] = to_image(g, mouth_l_u, mouth_v);
    out.annotations.landmarks[4] = to_image(g, mouth_r_u, mouth_v);
    return out;
}

PoseCondition recover_pose(const std::array<std::array<double, 2>, kNumLandmarks>& lm) {
    const double dx = lm[1][0] - lm[0][0], dy = lm[1][1] - lm[0][1];
    const double spacing = std::hypot(dx, dy);
    if (spacing < 1e-6) throw DomainError("coincident eye landmarks, cannot recover pose");
    const double roll = std::atan2(dy, dx);
    const double c = std::cos(roll), s = std::sin(roll);
    const double mx = (lm[0][0] + lm[1][0]) * 0.5, my = (lm[0][1] + lm[1][1]) * 0.5;
    // de-rotate the nose offset relative to the eye midpoint
    const double nx = lm[2][0] - mx, ny = lm[2][1] - my;
    const double du = c * nx + s * ny;
    const double dv = -s * nx + c * ny;
    auto clamp1 = [](double v) { return std::min(1.0, std::max(-1.0, v)); };
    PoseCondition pose;
    pose.roll = rad2deg(roll);
    pose.yaw = rad2deg(std::asin(clamp1(du / kPoseShiftPx)));
    pose.pitch = rad2deg(std::asin(clamp1((dv - kNoseRestFrac * spacing) / kPoseShiftPx)));
    return pose;
}

std::string direction_word(const PoseCondition& pose) {
    const double y = pose.yaw, p = pose.pitch;
    if (std::abs(y) <= 15.0 && std::abs(p) <= 15.0) return "ahead";
    if (std::abs(y) >= std::abs(p)) return y > 0 ? "right" : "left";
    return p > 0 ? "down" : "up";
}

std::string caption_of(const SpriteSpec& spec) {
    const auto& p = spec.id_params;
    const char* hair = kHairColors[static_cast<size_t>(palette_index(p[6], kHairColors))].name;
    const char* eye = kEyeColors[static_cast<size_t>(palette_index(p[7], kEyeColors))].name;
    const char* bg = kBackgroundColors[static_cast<size_t>(spec.background)].name;
    return "a face with " + std::string(hair) + " hair and " + eye + " eyes looking " +
           direction_word(spec.pose) + " on a " + bg + " background";
}

void save_annotations(const AnnotationSet& a, const std::string& mask_path,
                      const std::string& depth_path, const std::string& landmarks_path) {
    write_pgm(mask_path, gray_to_u8(a.mask));
    write_pgm(depth_path, gray_to_u8(a.depth));
    std::ofstream f(landmarks_path);
    if (!f) throw IoError("cannot write " + landmarks_path);
    char buf[96];
    for (int i = 0; i < kNumLandmarks; ++i) {
        std::snprintf(buf, sizeof buf, "%s %.6f %.6f\n", kLandmarkNames[i], a.landmarks[static_cast<size_t>(i)][0],
                      a.landmarks[static_cast<size_t>(i)][1]);
        f << buf;
    }
}

AnnotationSet load_annotations(const std::string& mask_path, const std::string& depth_path,
                               const std::string& landmarks_path) {
    AnnotationSet a;
    a.mask = u8_to_gray(read_pgm(mask_path));
    a.depth = u8_to_gray(read_pgm(depth_path));
    std::ifstream f(landmarks_path);
    if (!f) throw IoError("cannot open " + landmarks_path);
    for (int i = 0; i < kNumLandmarks; ++i) {
        std::string name;
        if (!(f >> name >> a.landmarks[static_cast<size_t>(i)][0] >> a.landmarks[static_cast<size_t>(i)][1]))
            throw CorruptArtifactError(landmarks_path + ": truncated");
        if (name != kLandmarkNames[i])
            throw CorruptArtifactError(landmarks_path + ": unexpected landmark '" + name + "'");
    }
    return a;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(&e);
    return out;
}

DatasetManifest generate_dataset(int n, uint64_t seed, const std::string& out_dir, int n_pose,
                                 bool write_files) {
    if (n < 1) throw ConfigError("dataset size must be >= 1");
    if (n_pose < 1) throw ConfigError("poses per identity must be >= 1");
    const int n_id = (n + n_pose - 1) / n_pose;
    const int train_ids = std::max(1, (n_id * 9) / 10);

    if (write_files) {
        std::error_code ec;
        for (const char* d : {"", "images", "masks", "depth", "landmarks", "captions"}) {
            fs::create_directories(fs::path(out_dir) / d, ec);
            if (ec) throw IoError("cannot create directory under " + out_dir + ": " + ec.message());
        }
    }

    // identity parameters drawn per identity so poses share a subject
    std::vector<std::array<double, 8>> ids(static_cast<size_t>(n_id));
    for (int i = 0; i < n_id; ++i) {
        Rng r(derive_seed(seed, 0x1000000ULL + static_cast<uint64_t>(i)));
        for (auto& p : ids[static_cast<size_t>(i)]) p = r.uniform();
    }

    DatasetManifest m;
    m.seed = seed;
    m.n_pose = n_pose;
    std::ofstream mf;
    if (write_files) {
        mf.open(fs::path(out_dir) / "manifest.jsonl");
        if (!mf) throw IoError("cannot write manifest in " + out_dir);
    }
    for (int i = 0; i < n; ++i) {
        const int identity = i / n_pose;
        ManifestEntry e;
        e.index = i;
        e.identity = identity;
        e.split = identity < train_ids ? "train" : "heldout";
        e.spec.id_params = ids[static_cast<size_t>(identity)];
        e.spec.seed = derive_seed(seed, static_cast<uint64_t>(i));
        Rng r(e.spec.seed);
        e.spec.pose.yaw = r.uniform(-45.0, 45.0);
        e.spec.pose.pitch = r.uniform(-45.0, 45.0);
        e.spec.pose.roll = r.uniform(-45.0, 45.0);
        e.spec.background = static_cast<int>(r.uniform_int(kBackgroundColors.size()));
        e.caption = caption_of(e.spec);
        const std::string nm = index_name(i);
        e.image = "images/" + nm + ".ppm";
        e.mask = "masks/" + nm + ".pgm";
        e.depth = "depth/" + nm + ".pgm";
        e.landmarks = "landmarks/" + nm + ".txt";
        e.caption_file = "captions/" + nm + ".txt";
        if (write_files) {
            const SpriteSample s = render(e.spec);
            write_ppm((fs::path(out_dir) / e.image).string(), decode_image(s.image));
            save_annotations(s.annotations, (fs::path(out_dir) / e.mask).string(),
                             (fs::path(out_dir) / e.depth).string(),
                             (fs::path(out_dir) / e.landmarks).string());
            std::ofstream cf(fs::path(out_dir) / e.caption_file);
            cf << s.caption << "\n";
            json j{{"index", e.index},       {"identity", e.identity}, {"split", e.split},
                   {"spec", spec_to_json(e.spec)}, {"caption", e.caption},  {"image", e.image},
                   {"mask", e.mask},         {"depth", e.depth},       {"landmarks", e.landmarks},
                   {"caption_file", e.caption_file}};
            mf << j.dump() << "\n";
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest load_manifest(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw IoError("cannot open " + manifest_path);
    DatasetManifest m;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw CorruptArtifactError(manifest_path + ": bad json line");
        ManifestEntry e;
        e.index = j.at("index").get<int>();
        e.identity = j.at("identity").get<int>();
        e.split = j.at("split").get<std::string>();
        e.spec = spec_from_json(j.at("spec"));
        e.caption = j.at("caption").get<std::string>();
        e.image = j.at("image").get<std::string>();
        e.mask = j.at("mask").get<std::string>();
        e.depth = j.at("depth").get<std::string>();
        e.landmarks = j.at("landmarks").get<std::string>();
        e.caption_file = j.at("caption_file").get<std::string>();
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace df
