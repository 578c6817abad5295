#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "motionplan/rng.hpp"
#include "motionplan/tensor.hpp"

namespace motionplan {

// Named parameter arrays with matching gradient accumulators and Adam state.
struct ParameterStore {
    struct Entry {
        Tensor tensor;
        std::vector<float> adam_m;
        std::vector<float> adam_v;
    };

    std::map<std::string, Entry> entries;  // ordered: deterministic iteration
    int64_t step = 0;

    Tensor& create(const std::string& name, const Shape& shape);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return entries.count(name) != 0; }
    int64_t total_parameters() const;

    void zero_grad();

    // Adaptive-moment update, beta1=0.9 beta2=0.99 eps=1e-8, with bias
    // correction. Throws on non-finite gradients (step rejected) and on
    // non-finite parameters after the update. Gradients are zeroed on success.
    void adam_step(float learning_rate);

    // Fills weights with fan-in scaled uniform values, biases with zeros.
    Tensor& create_weight(const std::string& name, const Shape& shape,
                          int fan_in, RngState& rng);
    Tensor& create_bias(const std::string& name, int size);
    Tensor& create_embedding(const std::string& name, int vocab, int width,
                             RngState& rng);
    // gain=1, bias=0 pair for a normalization layer
    void create_norm(const std::string& prefix, int channels);
};

// Linear warm-up to the base rate over `warmup_steps`, then constant.
float warmup_lr(float base_lr, int64_t step, int64_t warmup_steps);

// ---------------------------------------------------------------------------
// Declarative layer stacks. Downstream modules compose these; bespoke
// topologies (U-Net skips, transformer blocks) wire the same primitives by
// hand.

struct LayerSpec {
    enum class Kind {
        Linear,
        Conv1d,
        TransposedConv1d,
        Activation,
        GroupNorm,
        SelfAttention,
        Embedding,
    };
    enum class Act { ReLU, GELU };

    Kind kind;
    // Linear
    int in_features = 0, out_features = 0;
    // Conv
    int in_channels = 0, out_channels = 0, kernel = 3, stride = 1, padding = 1;
    // Activation
    Act act = Act::ReLU;
    // GroupNorm
    int channels = 0, groups = 1;
    // SelfAttention
    int heads = 1, width = 0;
    // Embedding
    int table_size = 0;

    static LayerSpec make_linear(int in, int out);
    static LayerSpec make_conv1d(int cin, int cout, int kernel, int stride,
                                 int padding);
    static LayerSpec make_transposed_conv1d(int cin, int cout, int kernel,
                                            int stride, int padding);
    static LayerSpec make_activation(Act a);
    static LayerSpec make_group_norm(int channels, int groups);
    static LayerSpec make_self_attention(int heads, int width);
    static LayerSpec make_embedding(int table_size, int width);
};

struct Sequential {
    std::vector<LayerSpec> layers;
    std::string prefix;  // parameter name prefix

    void init(ParameterStore& store, RngState& rng) const;
    // Errors mention the failing layer index.
    Tensor forward(const Tensor& input, ParameterStore& store) const;
};

// Multi-head causal or full self-attention over x[T,W] given projection
// parameters. Used by Sequential and by the generator blocks.
Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& bq,
                      const Tensor& wk, const Tensor& bk, const Tensor& wv,
                      const Tensor& bv, const Tensor& wo, const Tensor& bo,
                      int heads, bool causal);

// Causal variant with rotary position embeddings applied to q and k: pair
// (2i, 2i+1) of each head is rotated by pos * 10000^(-2i/dh). Relative
// offsets, not absolute positions, determine the attention pattern, so the
// model generalizes across sequence-layout shifts. Head dim must be even.
Tensor self_attention_rope(const Tensor& x, const Tensor& wq, const Tensor& bq,
                           const Tensor& wk, const Tensor& bk, const Tensor& wv,
                           const Tensor& bv, const Tensor& wo, const Tensor& bo,
                           int heads);

// Central-difference gradient verification. `loss_fn` rebuilds the scalar loss
// graph from the store's current parameter values. Returns the max error over
// `samples` randomly chosen parameter entries (>= 64), relative to the larger
// gradient magnitude but floored at 1 so that near-zero gradients compare
// absolutely.
double finite_difference_check(const std::function<Tensor()>& loss_fn,
                               ParameterStore& store, RngState& rng,
                               double epsilon = 1e-4, int samples = 64);

}  // namespace motionplan
