#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motionplan/checkpoint.hpp"
#include "motionplan/corpus.hpp"
#include "motionplan/nn.hpp"

namespace motionplan {

// Temporal VQ tokenizer: strided convolutional encoder, nearest-neighbor
// codebook lookup with straight-through gradients, mirrored transposed-conv
// decoder producing the coarse reconstruction y0.

struct TokenizerConfig {
    int downsample_rate = 2;  // r in {2, 4}
    int codebook_size = 4096;  // K
    int code_dim = 64;         // d
    int channels = 64;
    int d_m = 16;

    void validate() const;
};

struct Codebook {
    int size = 0;      // K
    int code_dim = 0;  // d
    std::vector<float> codes;       // K x d
    std::vector<float> ema_counts;  // K
    std::vector<float> ema_sums;    // K x d
    std::vector<int64_t> last_used_step;  // K
    int64_t step = 0;

    static Codebook init(int size, int code_dim, RngState& rng);
    const float* code(int k) const { return codes.data() + static_cast<size_t>(k) * code_dim; }
};

struct LatentSequence {
    int length = 0;         // l
    int code_dim = 0;       // d
    int source_frames = 0;  // n
    int rate = 0;           // r, with l = floor(n / r)
    std::vector<float> vectors;  // l x d
};

struct TokenSequence {
    std::vector<int> ids;
    int codebook_size = 0;  // K
    int rate = 0;           // r
};

struct QuantizeResult {
    TokenSequence tokens;
    LatentSequence quantized;      // values are the selected codes, bit-exact
    float commitment_loss = 0.0f;  // beta * mean ||z - sg(e)||^2, beta = 0.25
};

// Parameter construction / forward graphs. Input layout [d_m, n], latent
// layout [d, l].
void init_tokenizer_params(const TokenizerConfig& config, ParameterStore& store,
                           RngState& rng);
Tensor encoder_forward(const TokenizerConfig& config, ParameterStore& store,
                       const Tensor& x);
Tensor decoder_forward(const TokenizerConfig& config, ParameterStore& store,
                       const Tensor& z);

// Inference-path wrappers over the graphs above.
LatentSequence encode(const MotionSequence& motion, const TokenizerConfig& config,
                      ParameterStore& store);
QuantizeResult quantize(const LatentSequence& latents, const Codebook& codebook);
MotionSequence decode_base(const TokenSequence& tokens, const Codebook& codebook,
                           const TokenizerConfig& config, ParameterStore& store,
                           double frame_rate_hz);
// encode -> quantize -> decode_base; output lives in normalized feature space
// and has l*r frames.
MotionSequence reconstruct(const MotionSequence& normalized_motion,
                           const TokenizerConfig& config, ParameterStore& store,
                           const Codebook& codebook);

// EMA codebook learning (decay 0.99) with dead-code reset: a code unused for
// 256 consecutive steps is reset to a random latent from the current batch.
void codebook_update(Codebook& codebook, const std::vector<float>& latents,
                     const std::vector<int>& assignments, RngState& rng);

struct CodebookUsage {
    double fraction_used = 0.0;
    double perplexity = 0.0;
};
CodebookUsage codebook_utilization(const std::vector<int>& token_stream, int K);

struct TokenizerTrainReport {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_valid_error;  // mean per-frame L2 vs ground truth
    double initial_valid_error = 0.0;
    double final_valid_error = 0.0;
    CodebookUsage usage;
};

struct TokenizerTrainOptions {
    int epochs = 30;
    int batch_size = 32;
    int clip_frames = 64;
    float learning_rate = 2e-4f;
    int warmup_steps = 100;
};

TokenizerTrainReport train_tokenizer(
    const std::vector<MotionSequence>& train_motions,
    const std::vector<MotionSequence>& valid_motions,
    const TokenizerConfig& config, ParameterStore& store, Codebook& codebook,
    const TokenizerTrainOptions& options, RngState& rng);

// u32 K, u32 r, then u32 ids
void save_tokens(const std::string& path, const TokenSequence& tokens);
TokenSequence load_tokens(const std::string& path);

// Codebook state <-> checkpoint extra arrays
ArrayMap codebook_to_arrays(const Codebook& codebook);
Codebook codebook_from_arrays(const ArrayMap& arrays);

}  // namespace motionplan
