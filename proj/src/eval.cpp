#include "denseface/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "denseface/palettes.hpp"

namespace df {

using nlohmann::json;

json EvalReport::to_json() const {
    return json{{"n", n},
                {"skipped", skipped},
                {"id_cos_mean", id_cos_mean},
                {"id_cos_std", id_cos_std},
                {"id_cos_permuted_mean", id_cos_permuted_mean},
                {"pose_err_yaw", pose_err_yaw},
                {"pose_err_pitch", pose_err_pitch},
                {"pose_err_roll", pose_err_roll},
                {"bg_byte_equal_rate", bg_byte_equal_rate},
                {"acc_hair", acc_hair},
                {"acc_eye", acc_eye},
                {"acc_background", acc_background},
                {"mask_iou", mask_iou},
                {"depth_mae", depth_mae},
                {"lmk_err_px", lmk_err_px},
                {"checkpoint_hash", checkpoint_hash}};
}

EvalReport EvalReport::from_json(const json& j) {
    EvalReport r;
    try {
        r.n = j.at("n").get<int>();
        r.skipped = j.at("skipped").get<int>();
        r.id_cos_mean = j.at("id_cos_mean").get<double>();
        r.id_cos_std = j.at("id_cos_std").get<double>();
        r.id_cos_permuted_mean = j.at("id_cos_permuted_mean").get<double>();
        r.pose_err_yaw = j.at("pose_err_yaw").get<double>();
        r.pose_err_pitch = j.at("pose_err_pitch").get<double>();
        r.pose_err_roll = j.at("pose_err_roll").get<double>();
        r.bg_byte_equal_rate = j.at("bg_byte_equal_rate").get<double>();
        r.acc_hair = j.at("acc_hair").get<double>();
        r.acc_eye = j.at("acc_eye").get<double>();
        r.acc_background = j.at("acc_background").get<double>();
        r.mask_iou = j.at("mask_iou").get<double>();
        r.depth_mae = j.at("depth_mae").get<double>();
        r.lmk_err_px = j.at("lmk_err_px").get<double>();
        r.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
    } catch (const json::exception& e) {
        throw CorruptArtifactError(std::string("eval report: ") + e.what());
    }
    return r;
}

std::string EvalReport::table() const {
    std::ostringstream os;
    auto row = [&os](const std::string& k, double v) {
        os << "  " << k;
        for (size_t i = k.size(); i < 24; ++i) os << ' ';
        char buf[32];
        std::snprintf(buf, sizeof buf, "%10.4f", v);
        os << buf << "\n";
    };
    os << "eval report (n=" << n << ", skipped=" << skipped << ")\n";
    row("id_cos_mean", id_cos_mean);
    row("id_cos_std", id_cos_std);
    row("id_cos_permuted_mean", id_cos_permuted_mean);
    row("pose_err_yaw", pose_err_yaw);
    row("pose_err_pitch", pose_err_pitch);
    row("pose_err_roll", pose_err_roll);
    row("bg_byte_equal_rate", bg_byte_equal_rate);
    row("acc_hair", acc_hair);
    row("acc_eye", acc_eye);
    row("acc_background", acc_background);
    row("mask_iou", mask_iou);
    row("depth_mae", depth_mae);
    row("lmk_err_px", lmk_err_px);
    if (!checkpoint_hash.empty()) os << "  checkpoint_hash         " << checkpoint_hash << "\n";
    return os.str();
}

TensorF crop_to_mask(const TensorF& img, const TensorF& mask) {
    if (img.shape() != Shape{3, 64, 64}) throw ShapeError("crop_to_mask expects a [3,64,64] image");
    if (mask.shape() != Shape{64, 64}) throw ShapeError("crop_to_mask expects a [64,64] mask");
    int x0 = 64, x1 = -1, y0 = 64, y1 = -1;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (mask.at(y * 64 + x) >= 0.5f) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) {  // empty mask: fall back to the whole frame
        x0 = y0 = 0;
        x1 = y1 = 63;
    }
    const int w = x1 - x0 + 1, h = y1 - y0 + 1;
    TensorF out({3, 32, 32});
    auto& ov = out.mutable_values();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const int sx = x0 + std::min(w - 1, x * w / 32);
                const int sy = y0 + std::min(h - 1, y * h / 32);
                ov[static_cast<size_t>((c * 32 + y) * 32 + x)] = img.at((c * 64 + sy) * 64 + sx);
            }
    return out;
}

TensorF eval_embed(const ModelF& m, const TensorF& img, const TensorF& mask) {
    if (!m.has_extras) throw ConfigError("eval encoder requires a phase-2 checkpoint");
    NoGradGuard<float> ng;
    return m.eval_enc(crop_to_mask(img, mask));
}

double cosine(const TensorF& a, const TensorF& b) {
    if (a.shape() != b.shape()) throw ShapeError("cosine: shape mismatch");
    double dot = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        dot += static_cast<double>(a.at(i)) * b.at(i);
        na += static_cast<double>(a.at(i)) * a.at(i);
        nb += static_cast<double>(b.at(i)) * b.at(i);
    }
    const double d = std::sqrt(na) * std::sqrt(nb);
    if (d == 0.0) throw NumericError("cosine of a zero vector");
    return dot / d;
}

namespace {

inline double to255(float v) { return (static_cast<double>(v) + 1.0) * 0.5 * 255.0; }

struct MeanRgb {
    double r = 0, g = 0, b = 0;
    int64_t count = 0;
    void add(const TensorF& img, int x, int y) {
        r += to255(img.at((0 * 64 + y) * 64 + x));
        g += to255(img.at((1 * 64 + y) * 64 + x));
        b += to255(img.at((2 * 64 + y) * 64 + x));
        ++count;
    }
    bool finish() {
        if (count == 0) return false;
        r /= static_cast<double>(count);
        g /= static_cast<double>(count);
        b /= static_cast<double>(count);
        return true;
    }
};

std::vector<char> dilate_mask(const TensorF& mask, int px) {
    std::vector<char> cur(64 * 64);
    for (int64_t i = 0; i < 64 * 64; ++i) cur[static_cast<size_t>(i)] = mask.at(i) >= 0.5f;
    for (int it = 0; it < px; ++it) {
        auto next = cur;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (cur[static_cast<size_t>(y * 64 + x)]) continue;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny >= 0 && ny < 64 && nx >= 0 && nx < 64 &&
                            cur[static_cast<size_t>(ny * 64 + nx)])
                            next[static_cast<size_t>(y * 64 + x)] = 1;
                    }
            }
        cur = next;
    }
    return cur;
}

}  // namespace

AttributeResult classify_attributes(const TensorF& img, const AnnotationSet& ann) {
    if (img.shape() != Shape{3, 64, 64}) throw ShapeError("classify_attributes expects [3,64,64]");
    AttributeResult res;

    // per-column topmost mask pixel
    std::array<int, 64> top{};
    top.fill(-1);
    int best_x = -1, best_y = 64;
    for (int x = 0; x < 64; ++x)
        for (int y = 0; y < 64; ++y)
            if (ann.mask.at(y * 64 + x) >= 0.5f) {
                top[static_cast<size_t>(x)] = y;
                if (y < best_y) {
                    best_y = y;
                    best_x = x;
                }
                break;
            }

    // hair: the band 1-3 px above the mask top, near the mask's highest
    // point where the hair ring is thickest
    if (best_x >= 0) {
        MeanRgb hair;
        for (int x = std::max(0, best_x - 6); x <= std::min(63, best_x + 6); ++x) {
            if (top[static_cast<size_t>(x)] < 0) continue;
            for (int dy = 1; dy <= 3; ++dy) {
                const int y = top[static_cast<size_t>(x)] - dy;
                if (y >= 0) hair.add(img, x, y);
            }
        }
        if (hair.finish()) res.hair = nearest_palette(hair.r, hair.g, hair.b, kHairColors);
    }

    // eyes: pixels within 1 px of each eye landmark
    {
        MeanRgb eye;
        for (int lm : {0, 1}) {
            const double lx = ann.landmarks[static_cast<size_t>(lm)][0];
            const double ly = ann.landmarks[static_cast<size_t>(lm)][1];
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    const double d = std::hypot(x + 0.5 - lx, y + 0.5 - ly);
                    if (d <= 1.0) eye.add(img, x, y);
                }
        }
        if (eye.finish()) res.eye = nearest_palette(eye.r, eye.g, eye.b, kEyeColors);
    }

    // background: complement of the dilated mask (dilation clears the hair
    // ring hugging the silhouette)
    {
        auto dil = dilate_mask(ann.mask, 6);
        MeanRgb bg;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if (!dil[static_cast<size_t>(y * 64 + x)]) bg.add(img, x, y);
        if (bg.finish()) res.background = nearest_palette(bg.r, bg.g, bg.b, kBackgroundColors);
    }
    return res;
}

double mask_iou(const TensorF& a, const TensorF& b) {
    if (a.shape() != b.shape()) throw ShapeError("mask_iou: shape mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const bool pa = a.at(i) >= 0.5f, pb = b.at(i) >= 0.5f;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double depth_mae(const TensorF& pred, const TensorF& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError("depth_mae: shape mismatch");
    double s = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) s += std::abs(static_cast<double>(pred.at(i)) - gt.at(i));
    return s / static_cast<double>(pred.numel());
}

double landmark_err_px(const std::array<std::array<double, 2>, kNumLandmarks>& pred,
                       const std::array<std::array<double, 2>, kNumLandmarks>& gt) {
    double s = 0;
    for (int i = 0; i < kNumLandmarks; ++i)
        s += std::hypot(pred[static_cast<size_t>(i)][0] - gt[static_cast<size_t>(i)][0],
                        pred[static_cast<size_t>(i)][1] - gt[static_cast<size_t>(i)][1]);
    return s / kNumLandmarks;
}

double background_equal_rate(const TensorF& final_img, const TensorF& base, const TensorF& mask) {
    if (final_img.shape() != base.shape()) throw ShapeError("background_equal_rate: image mismatch");
    if (final_img.shape() != Shape{3, 64, 64} || mask.shape() != Shape{64, 64})
        throw ShapeError("background_equal_rate expects [3,64,64] images and a [64,64] mask");
    int64_t denom = 0, equal = 0;
    for (int64_t p = 0; p < 64 * 64; ++p) {
        if (mask.at(p) >= 0.5f) continue;
        ++denom;
        bool same = true;
        for (int64_t c = 0; c < 3 && same; ++c)
            same = final_img.at(c * 64 * 64 + p) == base.at(c * 64 * 64 + p);
        equal += same;
    }
    return denom == 0 ? 1.0 : static_cast<double>(equal) / static_cast<double>(denom);
}

EvalReport evaluate_generation(ModelF& m, const NoiseSchedule& sched,
                               const std::vector<const ManifestEntry*>& entries, int max_n,
                               int steps, double guidance) {
    if (!m.has_extras) throw ConfigError("evaluation requires a phase-2 checkpoint");
    EvalReport rep;
    const int n = std::min<int>(max_n, static_cast<int>(entries.size()));
    std::vector<double> cosines;

    for (int i = 0; i < n; ++i) {
        const auto& e = *entries[static_cast<size_t>(i)];
        auto gt = render(e.spec);

        GenerationRequest req;
        req.caption = e.caption;
        req.id_params = e.spec.id_params;
        req.pose = e.spec.pose;
        req.seed = e.spec.seed;
        req.steps = steps;
        req.guidance = guidance;
        auto r = generate_face(m, sched, req);
        const auto& ann = *r.annotations;

        bool mask_empty = true;
        for (int64_t p = 0; p < ann.mask.numel() && mask_empty; ++p)
            mask_empty = ann.mask.at(p) < 0.5f;
        if (mask_empty) {
            ++rep.skipped;
            continue;
        }

        PoseCondition pose;
        try {
            pose = recover_pose(ann.landmarks);
        } catch (const DomainError&) {
            ++rep.skipped;
            continue;
        }

        auto emb = eval_embed(m, r.image, ann.mask);
        cosines.push_back(cosine(emb, m.oracle(e.spec.id_params)));
        // permuted baseline: pair this embedding with the next entry's identity
        const auto& other = *entries[static_cast<size_t>((i + 1) % n)];
        rep.id_cos_permuted_mean += cosine(emb, m.oracle(other.spec.id_params));

        rep.pose_err_yaw += std::abs(pose.yaw - e.spec.pose.yaw);
        rep.pose_err_pitch += std::abs(pose.pitch - e.spec.pose.pitch);
        rep.pose_err_roll += std::abs(pose.roll - e.spec.pose.roll);

        auto attrs = classify_attributes(r.image, ann);
        auto want = classify_attributes(gt.image, gt.annotations);
        rep.acc_hair += attrs.hair == want.hair;
        rep.acc_eye += attrs.eye == want.eye;
        rep.acc_background += attrs.background == want.background;

        rep.mask_iou += mask_iou(ann.mask, gt.annotations.mask);
        rep.depth_mae += depth_mae(ann.depth, gt.annotations.depth);
        rep.lmk_err_px += landmark_err_px(ann.landmarks, gt.annotations.landmarks);
    }

    rep.n = static_cast<int>(cosines.size());
    if (rep.n > 0) {
        const double dn = rep.n;
        for (double c : cosines) rep.id_cos_mean += c;
        rep.id_cos_mean /= dn;
        for (double c : cosines) rep.id_cos_std += (c - rep.id_cos_mean) * (c - rep.id_cos_mean);
        rep.id_cos_std = std::sqrt(rep.id_cos_std / dn);
        rep.id_cos_permuted_mean /= dn;
        rep.pose_err_yaw /= dn;
        rep.pose_err_pitch /= dn;
        rep.pose_err_roll /= dn;
        rep.acc_hair /= dn;
        rep.acc_eye /= dn;
        rep.acc_background /= dn;
        rep.mask_iou /= dn;
        rep.depth_mae /= dn;
        rep.lmk_err_px /= dn;
    }
    return rep;
}

}  // namespace df
