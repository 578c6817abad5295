#pragma once

#include <string>
#include <vector>

#include "motionplan/config.hpp"
#include "motionplan/eval.hpp"
#include "motionplan/generator.hpp"

namespace motionplan {

// Staged pipeline over a run directory. Every stage derives its randomness
// from the root seed via RngState::split with a fixed stream id
// (synth-data=1, train-tokenizer=2, train-flow=3, train-generator=4,
// generate=5, evaluate=6, sweeps=7/8/9), writes its artifacts under
// config.out_dir, and records a manifest of input-file hashes.

// Artifact locations within a run directory.
std::string corpus_path(const RunConfig& config);
std::string norm_path(const RunConfig& config);
std::string tokenizer_path(const RunConfig& config);
std::string flow_path(const RunConfig& config);
std::string generator_path(const RunConfig& config);

// Throws "missing checkpoint ...; run <stage> first" when absent.
void require_artifact(const std::string& path, const std::string& stage);

// min(config.threads, MOTIONPLAN_THREADS if set), at least 1
int effective_threads(const RunConfig& config);

// Loaded bundle of trained artifacts (whatever exists so far).
struct PipelineState {
    CorpusManifest manifest;
    std::map<uint64_t, MotionSequence> motions;  // raw, by id
    NormStats stats;
    ParameterStore tokenizer_store;
    Codebook codebook;
    ParameterStore flow_store;
    ParameterStore generator_store;
    GeneratorConfig generator_config;  // vocab layout resolved
};

VocabularyLayout make_layout(const RunConfig& config);
PipelineState load_state(const RunConfig& config, bool need_tokenizer,
                         bool need_flow, bool need_generator);

void run_synth_data(const RunConfig& config);
TokenizerTrainReport run_train_tokenizer(const RunConfig& config);
FlowTrainReport run_train_flow(const RunConfig& config);
GeneratorTrainReport run_train_generator(const RunConfig& config);

// prompt: comma-separated segment types, e.g. "2,5,1"
GenerateMotionResult run_generate(const RunConfig& config,
                                  const std::string& prompt);

// suite in {tokenizer, flow, generator, ablation}; returns the rows written
// to <out>/metrics_<suite>.csv (timings go to a separate timing CSV so the
// metric files stay byte-reproducible).
std::vector<MetricRow> run_evaluate(const RunConfig& config,
                                    const std::string& suite);

std::vector<MetricRow> run_sweep_granularity(const RunConfig& config);
std::vector<MetricRow> run_sweep_plans(const RunConfig& config);
std::vector<MetricRow> run_sweep_flow_steps(const RunConfig& config);

// The seven interval sets of the plan ablation grid.
const std::vector<std::vector<int>>& plan_sweep_grid();

}  // namespace motionplan
