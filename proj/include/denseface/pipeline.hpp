#pragma once

// The three generation entry points: text-editing mode, face-generation
// mode, and the personalized pipeline that joins them via masked latent
// blending, all under classifier-free guidance with a deterministic DDIM
// loop.

#include <optional>
#include <string>

#include "denseface/image_io.hpp"
#include "denseface/model.hpp"
#include "denseface/schedule.hpp"
#include "denseface/synthfaces.hpp"

namespace df {

enum class MaskSource { predicted, ellipse, file };

MaskSource mask_source_from_string(const std::string& s);
std::string to_string(MaskSource m);

// Seed streams: 0 = base (text-mode) init noise, 1 = face-mode init noise,
// 2 = the fixed blending noise.
inline constexpr uint64_t kStreamBaseNoise = 0;
inline constexpr uint64_t kStreamFaceNoise = 1;
inline constexpr uint64_t kStreamBlendNoise = 2;

struct GenerationRequest {
    std::string caption;
    std::optional<std::array<double, 8>> id_params;  // identity source
    std::optional<TensorF> c_id;                     // pre-resolved embedding (wins if set)
    PoseCondition pose{};
    uint64_t seed = 0;
    int steps = 25;
    double guidance = 3.0;
    MaskSource mask_source = MaskSource::ellipse;
    std::string mask_file;
};

struct BlendMask {
    TensorF m;  // [64,64] in {0,1}
    std::string provenance;
};

struct GenerationResult {
    TensorF image;                          // [3,H,W] in [-1,1]
    std::optional<AnnotationSet> annotations;  // face/personalized modes
    std::optional<TensorF> base;            // personalized mode
    std::optional<BlendMask> mask;          // personalized mode
};

// resolve the identity embedding for a request (oracle over id_params or
// the pre-resolved vector)
TensorF resolve_identity(const ModelF& model, const GenerationRequest& req);

ConditionBundle<float> make_bundle(const ModelF& model, const std::string& caption,
                                   const TensorF* c_id, const PoseCondition& pose, GenMode mode);

GenerationResult generate_text(ModelF& model, const NoiseSchedule& sched,
                               const GenerationRequest& req);
GenerationResult generate_face(ModelF& model, const NoiseSchedule& sched,
                               const GenerationRequest& req);
GenerationResult personalized_generate(ModelF& model, const NoiseSchedule& sched,
                                       const GenerationRequest& req);

// base: the text-mode result tensor, needed for the predicted-mask forward
BlendMask make_blend_mask(ModelF& model, const NoiseSchedule& sched, const GenerationRequest& req,
                          const TensorF& base);

// fixed centered ellipse (a=20, b=24) in {0,1}
TensorF ellipse_mask(double a = 20.0, double b = 24.0);

}  // namespace df
