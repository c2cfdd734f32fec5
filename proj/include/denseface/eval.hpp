#pragma once

// Desk-scale metric suite: identity preservation, pose accuracy, background
// preservation, caption-attribute accuracy, and annotation quality. Every
// metric has an oracle ceiling: fed renderer ground truth it reports its
// ideal value.

#include <string>
#include <vector>

#include <json.hpp>

#include "denseface/model.hpp"
#include "denseface/pipeline.hpp"
#include "denseface/synthfaces.hpp"

namespace df {

struct EvalReport {
    int n = 0;        // evaluated samples
    int skipped = 0;  // degenerate samples (empty mask etc.)

    double id_cos_mean = 0, id_cos_std = 0;
    double id_cos_permuted_mean = 0;
    double pose_err_yaw = 0, pose_err_pitch = 0, pose_err_roll = 0;
    double bg_byte_equal_rate = 1.0;
    double acc_hair = 0, acc_eye = 0, acc_background = 0;
    double mask_iou = 0, depth_mae = 0, lmk_err_px = 0;
    std::string checkpoint_hash;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    std::string table() const;  // aligned plain-text rendering
};

// Crop the bounding box of mask >= 0.5 and nearest-resize it to [3,32,32].
// An empty mask crops the whole image.
TensorF crop_to_mask(const TensorF& img, const TensorF& mask);

// Embedding of the masked face crop under the model's eval encoder.
TensorF eval_embed(const ModelF& m, const TensorF& img, const TensorF& mask);

double cosine(const TensorF& a, const TensorF& b);

// Palette indices read off renderer-defined regions: hair from the band
// above the mask top, eyes from the landmark neighborhoods, background from
// the complement of the dilated mask.
struct AttributeResult {
    int hair = -1, eye = -1, background = -1;
};
AttributeResult classify_attributes(const TensorF& img, const AnnotationSet& ann);

double mask_iou(const TensorF& a, const TensorF& b);  // both thresholded at 0.5
double depth_mae(const TensorF& pred, const TensorF& gt);
double landmark_err_px(const std::array<std::array<double, 2>, kNumLandmarks>& pred,
                       const std::array<std::array<double, 2>, kNumLandmarks>& gt);

// Fraction of mask==0 pixels byte-equal between final and base. An all-ones
// mask has a zero-pixel denominator and reports 1.0.
double background_equal_rate(const TensorF& final_img, const TensorF& base, const TensorF& mask);

// Full generation-quality loop: face-mode generation for each entry, metrics
// against the entry's ground-truth render, permuted identity baseline from a
// one-step rotation of the identity pairing.
EvalReport evaluate_generation(ModelF& m, const NoiseSchedule& sched,
                               const std::vector<const ManifestEntry*>& entries, int max_n,
                               int steps = 25, double guidance = 3.0);

}  // namespace df
