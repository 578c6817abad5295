#pragma once

#include <map>
#include <string>
#include <vector>

#include "motionplan/corpus.hpp"
#include "motionplan/tokenizer.hpp"

namespace motionplan {

// Desk-scale metric analogs: feature-space reconstruction error, Frechet
// distance over tokenizer-encoder features, pairwise diversity, exact
// segment-order accuracy, seam smoothness, and stage timing.

// Frozen tokenizer encoder + temporal mean-pool -> d-dimensional feature.
std::vector<float> extract_feature(const MotionSequence& normalized_motion,
                                   const TokenizerConfig& config,
                                   ParameterStore& store);

// Mean over frames of the per-frame Euclidean difference; compares over the
// shorter of the two lengths.
double reconstruction_error(const MotionSequence& recon,
                            const MotionSequence& ground_truth);

struct FrechetResult {
    double value = 0.0;
    bool diagonal_fallback = false;  // set when a set is too small for a full
                                     // covariance estimate
};

FrechetResult frechet_distance(const std::vector<std::vector<float>>& set_a,
                               const std::vector<std::vector<float>>& set_b);

// Mean pairwise Euclidean distance over all unordered feature pairs.
double diversity_score(const std::vector<std::vector<float>>& features);

// 1 iff the oracle-classified type order equals the script order exactly.
int segment_order_accuracy(const MotionSequence& motion,
                           const SegmentScript& script,
                           const CorpusParams& params = {});

// Ratio of mean first-difference norm at clip boundaries to the mean
// elsewhere; 1.0 means seamless (0/0 guarded to 1.0).
double seam_smoothness(const MotionSequence& motion, int clip_length = 64);

struct StageTiming {
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    int count = 0;
};

std::map<std::string, StageTiming> timing_report(
    const std::map<std::string, std::vector<double>>& stage_times_ms);

// ---------------------------------------------------------------------------
// report emission

struct MetricRow {
    std::string metric;
    double value = 0.0;
    std::string split;
    std::string config_hash;
};

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

// Static line/bar plot of one metric series.
void write_svg_plot(const std::string& path, const std::string& title,
                    const std::vector<double>& xs,
                    const std::vector<double>& ys, bool bars = false);

}  // namespace motionplan
