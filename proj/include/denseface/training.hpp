#pragma once

// Two-phase trainer: phase "base" fits the text encoder and base UNet on
// the diffusion objective; phase "adapter" freezes them and fits the
// identity/pose/annotation extras. Single-threaded, deterministic given
// the seed.

#include <string>
#include <vector>

#include "denseface/eval.hpp"
#include "denseface/model.hpp"
#include "denseface/pipeline.hpp"
#include "denseface/schedule.hpp"
#include "denseface/synthfaces.hpp"

namespace df {

struct TrainConfig {
    std::string phase = "base";  // "base" | "adapter"
    int steps = 1000;
    int batch = 8;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 0;
    double caption_dropout = 0.1;
    double annotation_gate = 0.5;  // annotation loss only when t <= gate*T
    AnnotationLossWeights ann{};
    int log_every = 100;
    // supervised eval-encoder fit appended to the adapter phase
    int eval_enc_steps = 0;
    double eval_enc_lr = 1e-3;

    void validate() const;
};

class Adam {
public:
    Adam(std::vector<TensorF> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    // Applies one update from the accumulated gradients. Parameters whose
    // gradient was never populated are left untouched.
    void step();
    void zero_grad();
    size_t size() const { return slots_.size(); }
    double lr() const { return lr_; }

private:
    struct Slot {
        TensorF p;
        std::vector<float> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

// The parameter group a phase optimizes. Also marks those parameters (and
// only those) as requiring gradients.
std::vector<TensorF> trainable_params(ModelF& m, const std::string& phase);

// Single-sample diffusion loss on the current tape. In face mode the pose
// branch runs and the annotation loss is added when t <= gate*T.
TensorF sample_loss(ModelF& m, const NoiseSchedule& sched, const SpriteSample& s, int t,
                    const TensorF& eps, GenMode mode, bool drop_caption,
                    const AnnotationLossWeights& ann, double annotation_gate);

struct TrainStats {
    std::vector<double> losses;  // one entry per optimizer step
    double mean_head(int k) const;  // mean of the first k
    double mean_tail(int k) const;  // mean of the last k
};

// Run one phase over the manifest's train split, updating the model in
// place. Sprites are re-rendered on demand from their specs.
TrainStats train_phase(ModelF& m, const NoiseSchedule& sched,
                       const std::vector<const ManifestEntry*>& data, const TrainConfig& cfg);

// Supervised regression of the eval encoder onto the frozen identity
// oracle over ground-truth renders.
TrainStats fit_eval_encoder(ModelF& m, const std::vector<const ManifestEntry*>& data,
                            const TrainConfig& cfg);

}  // namespace df
