#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motionplan/corpus.hpp"
#include "motionplan/flow.hpp"
#include "motionplan/nn.hpp"
#include "motionplan/plan.hpp"
#include "motionplan/tokenizer.hpp"

namespace motionplan {

// Decoder-only autoregressive model over assembled plan sequences, with
// temperature/top-k sampling and single-pass coarse-to-fine inference.

struct GeneratorConfig {
    int layers = 4;
    int heads = 8;
    int width = 256;
    int context = 1024;
    float dropout = 0.1f;
    VocabularyLayout vocab;

    void validate() const;
};

struct SamplingParams {
    float temperature = 1.0f;
    int top_k = 64;
    int max_new_tokens = -1;  // -1: context minus prompt length
    uint64_t seed = 0;
};

void init_generator_params(const GeneratorConfig& config, ParameterStore& store,
                           RngState& rng);

// Training-path forward (autodiff): ids -> logits [T, vocab].
Tensor generator_forward(const GeneratorConfig& config, ParameterStore& store,
                         const std::vector<int>& ids, RngState& dropout_rng,
                         bool training);

struct GeneratorExample {
    uint64_t id = 0;
    std::vector<int> prompt_ids;     // layout prompt space
    std::vector<int> motion_tokens;  // raw ids in [0, K)
};

struct GeneratorTrainReport {
    std::vector<double> train_loss;
    std::vector<double> valid_loss;
    double initial_loss = 0.0;
};

struct GeneratorTrainOptions {
    int epochs = 15;
    int batch_size = 8;
    float learning_rate = 3e-4f;
    int warmup_steps = 100;
};

GeneratorTrainReport train_generator(const std::vector<GeneratorExample>& train,
                                     const std::vector<GeneratorExample>& valid,
                                     const GeneratorConfig& config,
                                     ParameterStore& store,
                                     const GeneratorTrainOptions& options,
                                     RngState& rng);

// Keep top_k logits, divide by temperature, softmax, sample. The
// temperature -> 0 limit is argmax (ties to lowest index).
int sample_next(const std::vector<float>& logits, const SamplingParams& params,
                RngState& rng);

// Incremental inference state (per-request; float path, no autodiff).
class GeneratorSession {
public:
    GeneratorSession(const GeneratorConfig& config, ParameterStore& store);
    // Feeds one token, returns logits for the next position.
    std::vector<float> step(int token);
    int position() const { return pos_; }

private:
    const GeneratorConfig& config_;
    ParameterStore& store_;
    int pos_ = 0;
    // per layer, row-major [t][width]
    std::vector<std::vector<float>> key_cache_;
    std::vector<std::vector<float>> value_cache_;
};

struct GenerateResult {
    std::vector<int> ids;  // prompt followed by generated tokens
    int new_tokens = 0;
    bool truncated = false;  // hit context or max_new_tokens without EOS
};

GenerateResult generate(const std::vector<int>& prompt_ids,
                        const GeneratorConfig& config, ParameterStore& store,
                        const SamplingParams& sampling);

struct GenerateMotionResult {
    MotionSequence motion;  // denormalized
    PlanHierarchy hierarchy;
    std::vector<std::string> diagnostics;
    int retries = 0;
    // wall-clock per stage, for timing reports
    double generate_ms = 0.0;
    double decode_ms = 0.0;
    double refine_ms = 0.0;
};

// generate -> parse -> fine tokens -> decode_base -> refine -> denormalize.
// Re-samples the whole stream (fresh seed split) up to 3 times when the fine
// level comes back empty.
GenerateMotionResult generate_motion(
    const std::vector<int>& prompt_ids, const GeneratorConfig& gen_config,
    ParameterStore& gen_store, const TokenizerConfig& tok_config,
    ParameterStore& tok_store, const Codebook& codebook,
    const FlowConfig& flow_config, ParameterStore& flow_store,
    const FlowSchedule& schedule, const NormStats& stats,
    const SamplingParams& sampling, double frame_rate_hz);

}  // namespace motionplan
