#pragma once

// Procedural face-sprite renderer and dataset generator. The renderer's
// geometry is the ground-truth oracle for every pose/annotation claim:
// recover_pose() is its exact analytic inverse.

#include <array>
#include <string>
#include <vector>

#include "denseface/pose.hpp"
#include "denseface/tensor.hpp"

namespace df {

inline constexpr int kImageSize = 64;
inline constexpr int kNumLandmarks = 5;
inline constexpr const char* kLandmarkNames[kNumLandmarks] = {
    "left_eye", "right_eye", "nose", "mouth_left", "mouth_right"};

// Feature translation per unit sin(angle), px.
inline constexpr double kPoseShiftPx = 10.0;
// Nose rest offset below the eye midpoint, as a fraction of eye spacing.
inline constexpr double kNoseRestFrac = 0.5;

struct AnnotationSet {
    std::array<std::array<double, 2>, kNumLandmarks> landmarks;  // (x, y) in 64x64 coords
    TensorF mask;   // [64,64] in [0,1]
    TensorF depth;  // [64,64] in [0,1], 0 outside mask
};

void save_annotations(const AnnotationSet& a, const std::string& mask_path,
                      const std::string& depth_path, const std::string& landmarks_path);
AnnotationSet load_annotations(const std::string& mask_path, const std::string& depth_path,
                               const std::string& landmarks_path);

struct SpriteSpec {
    // face width, face height, eye spacing, eye size, mouth width,
    // skin tone, hair color, eye color -- all in [0,1]
    std::array<double, 8> id_params{};
    PoseCondition pose;
    int background = 0;  // 8 named colors
    uint64_t seed = 0;

    void validate() const;
};

struct SpriteSample {
    TensorF image;  // [3,64,64] in [-1,1]
    std::string caption;
    AnnotationSet annotations;
    SpriteSpec spec;
};

SpriteSample render(const SpriteSpec& spec);

// Analytic inverse of the renderer's landmark geometry.
PoseCondition recover_pose(const std::array<std::array<double, 2>, kNumLandmarks>& landmarks);

std::string caption_of(const SpriteSpec& spec);
std::string direction_word(const PoseCondition& pose);

struct ManifestEntry {
    int index = 0;
    int identity = 0;
    std::string split;  // "train" or "heldout"
    SpriteSpec spec;
    std::string caption;
    std::string image, mask, depth, landmarks, caption_file;  // relative paths
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    uint64_t seed = 0;
    int n_pose = 0;

    std::vector<const ManifestEntry*> split(const std::string& name) const;
};

DatasetManifest generate_dataset(int n, uint64_t seed, const std::string& out_dir,
                                 int n_pose = 10, bool write_files = true);
DatasetManifest load_manifest(const std::string& manifest_path);

}  // namespace df
