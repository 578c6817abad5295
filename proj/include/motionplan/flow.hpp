#pragma once

#include <string>
#include <vector>

#include "motionplan/corpus.hpp"
#include "motionplan/nn.hpp"
#include "motionplan/tokenizer.hpp"

namespace motionplan {

// Flow refiner: a time-conditioned U-Net vector field trained by conditional
// flow matching to transport the coarse reconstruction y0 toward the ground
// truth y1 along the straight-line path; applied by Euler integration over
// 64-frame clips.

struct FlowSchedule {
    int num_steps = 30;  // T_flow

    explicit FlowSchedule(int steps = 30) : num_steps(steps) {
        if (steps < 1) throw_invalid();
    }
    float t_at(int i) const {  // 0 = t_0 < ... < t_T = 1, uniform
        return static_cast<float>(i) / num_steps;
    }
    float dt() const { return 1.0f / num_steps; }

private:
    [[noreturn]] static void throw_invalid();
};

struct FlowConfig {
    int d_m = 16;
    int clip_frames = 64;
    int base_channels = 64;   // doubles per level up to max_channels
    int max_channels = 256;
    int levels = 3;           // downsampling blocks (and matching upsampling)
    int norm_groups = 32;
    int time_embed_dim = 128;

    int level_channels(int level) const {
        int c = base_channels << level;
        return c > max_channels ? max_channels : c;
    }
};

struct FlowPair {
    std::vector<float> y0;  // coarse clip, [clip_frames][d_m] row-major
    std::vector<float> y1;  // ground-truth clip, same layout
};

struct PathPoint {
    std::vector<float> y_t;
    std::vector<float> target_u;  // y1 - y0, constant along the path
};

PathPoint sample_path_point(const FlowPair& pair, float t);

void init_flow_params(const FlowConfig& config, ParameterStore& store,
                      RngState& rng);
// y[d_m, clip_frames] and scalar time in [0,1] -> predicted field, same shape
Tensor flow_forward(const FlowConfig& config, ParameterStore& store,
                    const Tensor& y, float t);

// Mean over the batch of per-element squared error between the predicted
// field at a uniformly drawn t and the path tangent.
Tensor cfm_loss(const std::vector<FlowPair>& batch, const FlowConfig& config,
                ParameterStore& store, RngState& rng);

// Euler integration of an arbitrary field over the uniform schedule
// t_i = i/T, dt = 1/T, carried in double precision. The model-based
// integrate() below runs through this same loop.
using FieldFn =
    std::function<std::vector<double>(const std::vector<double>& y, double t)>;
std::vector<double> integrate_field(const std::vector<double>& y0,
                                    const FlowSchedule& schedule,
                                    const FieldFn& field);

// Euler integration of one clip ([clip_frames][d_m] row-major).
std::vector<float> integrate(const std::vector<float>& y0_clip,
                             const FlowConfig& config, ParameterStore& store,
                             const FlowSchedule& schedule);

// Splits into consecutive 64-frame clips (last clip right-padded by repeating
// the final frame), integrates each, restitches, crops to the input length.
MotionSequence refine(const MotionSequence& y0, const FlowConfig& config,
                      ParameterStore& store, const FlowSchedule& schedule);

struct FlowTrainReport {
    std::vector<double> epoch_loss;
    double initial_loss = 0.0;
    double holdout_coarse_error = 0.0;
    double holdout_refined_error = 0.0;
    double improved_fraction = 0.0;  // sequences where refined beats coarse
};

struct FlowTrainOptions {
    int epochs = 40;
    int batch_size = 32;
    float learning_rate = 2e-4f;
    int warmup_steps = 100;
    int eval_steps = 30;  // schedule used for the held-out report
};

// Pairs are built by round-tripping ground-truth motions through the frozen
// tokenizer. Motions are expected in normalized feature space.
FlowTrainReport train_flow(const std::vector<MotionSequence>& train_motions,
                           const std::vector<MotionSequence>& holdout_motions,
                           const TokenizerConfig& tok_config,
                           ParameterStore& tok_store, const Codebook& codebook,
                           const FlowConfig& config, ParameterStore& store,
                           const FlowTrainOptions& options, RngState& rng);

// Coarse/ground-truth aligned clips for one motion (used by training and by
// tests): y0 = decode_base(quantize(encode(m))), both cropped to l*r frames,
// then cut into aligned windows with last-frame padding.
std::vector<FlowPair> build_flow_pairs(const MotionSequence& normalized_motion,
                                       const TokenizerConfig& tok_config,
                                       ParameterStore& tok_store,
                                       const Codebook& codebook,
                                       int clip_frames);

}  // namespace motionplan
