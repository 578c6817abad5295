#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "motionplan/rng.hpp"

namespace motionplan {

// Procedurally generated motion corpus. Each segment type k is a bank of
// per-dimension sinusoids (frequency 0.5 + 0.25k cycles/s, amplitude
// 1 + 0.1k, per-dimension phases derived from the seed), so segment labels
// can be recovered analytically by least-squares fitting.

struct CorpusParams {
    int d_m = 16;
    double frame_rate_hz = 20.0;
    int num_segment_types = 8;       // S
    int min_segment_frames = 32;     // L_min
    int max_segment_frames = 64;     // L_max
    int max_segments = 5;
    int crossfade_frames = 4;
};

struct MotionSequence {
    int d_m = 0;
    double frame_rate_hz = 20.0;
    std::vector<float> data;  // row-major [n][d_m]

    int frames() const {
        return d_m > 0 ? static_cast<int>(data.size()) / d_m : 0;
    }
    float& at(int frame, int dim) { return data[static_cast<size_t>(frame) * d_m + dim]; }
    float at(int frame, int dim) const { return data[static_cast<size_t>(frame) * d_m + dim]; }
    void validate() const;  // n >= 1, finite, d_m > 0
};

struct ScriptSegment {
    int type = 0;
    int length_frames = 0;
};

struct SegmentScript {
    std::vector<ScriptSegment> segments;

    int total_frames() const;
    void validate(const CorpusParams& params) const;
    std::string to_string() const;                      // "type:len,type:len"
    static SegmentScript from_string(const std::string& s);
};

struct NormStats {
    std::vector<float> mean;
    std::vector<float> std_dev;
    bool clamped = false;  // some dimension had (near) zero variance
};

struct CorpusEntry {
    uint64_t id = 0;
    SegmentScript script;
    std::vector<int> prompt_ids;  // one token per segment, id = segment type
};

struct CorpusManifest {
    int d_m = 16;
    double frame_rate_hz = 20.0;
    uint64_t seed = 0;
    // split name -> entries; splits are disjoint by motion id
    std::map<std::string, std::vector<CorpusEntry>> splits;

    void validate() const;
};

struct SegmentRun {
    int type = 0;
    int start_frame = 0;
    int end_frame = 0;  // inclusive
};

// Deterministic in (script, seed).
MotionSequence synthesize_motion(const SegmentScript& script, uint64_t seed,
                                 const CorpusParams& params = {});

// Sliding 16-frame windows, least-squares fit against each type's sinusoid
// basis (phase left free), runs shorter than 8 frames dropped.
std::vector<SegmentRun> classify_segments(const MotionSequence& motion,
                                          const CorpusParams& params = {});

NormStats compute_norm_stats(const std::vector<MotionSequence>& corpus);
MotionSequence normalize(const MotionSequence& motion, const NormStats& stats);
MotionSequence denormalize(const MotionSequence& motion, const NormStats& stats);

// Corpus files: binary motions at `path`, text manifest at `path + ".manifest"`.
void save_corpus(const CorpusManifest& manifest,
                 const std::map<uint64_t, MotionSequence>& motions,
                 const std::string& path);
std::pair<CorpusManifest, std::map<uint64_t, MotionSequence>> load_corpus(
    const std::string& path);

// Random scripts + motions for the standard train/valid/test layout.
struct CorpusSpec {
    CorpusParams params;
    int train_count = 300;
    int valid_count = 50;
    int test_count = 200;
    int max_segments = 3;  // generation-time cap (<= params.max_segments)
};

std::pair<CorpusManifest, std::map<uint64_t, MotionSequence>> build_corpus(
    const CorpusSpec& spec, uint64_t seed);

}  // namespace motionplan
