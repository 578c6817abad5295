#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "motionplan/rng.hpp"

namespace motionplan {

// Reverse-mode autodiff over dense float tensors (rank <= 3).
// Each op builds a node holding the forward value and a closure that routes
// the upstream gradient into its parents. backward() runs the closures in
// reverse topological order.

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct Tensor {
    NodePtr node;

    Tensor() = default;
    explicit Tensor(NodePtr n) : node(std::move(n)) {}

    bool defined() const { return node != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    std::vector<float>& value();
    const std::vector<float>& value() const;
    std::vector<float>& grad();
    float item() const;  // scalar tensors only

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float v);

    Tensor detach() const;
};

struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // allocated lazily when a backward pass touches it
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backward_fn;  // null for leaves
    bool visited = false;  // scratch for topo sort

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

// Runs reverse-mode accumulation from a scalar loss. Gradients of leaf nodes
// with requires_grad stay populated afterwards; intermediate grads are freed.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
// x[C,L] + b[C] broadcast over L
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute3(const Tensor& a, int p0, int p1, int p2);
Tensor concat_axis0(const Tensor& a, const Tensor& b);  // [Ca,L]+[Cb,L] -> [Ca+Cb,L]
Tensor slice_axis0(const Tensor& a, int start, int count);
Tensor time_diff(const Tensor& a);  // last-axis first difference

// ---- linear algebra ----
// matmul: [M,K]x[K,N]. bmm: [H,M,K]x[H,K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor bmm(const Tensor& a, const Tensor& b);
// x[...,K] * W[K,N] + b[N]; x rank 2 or 3
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- convolution (per-sample layout [C,L]) ----
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding);
Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride, int padding);

// ---- normalization ----
// x[C,L]; gain/bias per channel; normalizes each group of channels jointly
// over (channels_in_group x L).
Tensor group_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  int groups, float eps = 1e-5f);
// x[T,W]; normalizes over the last axis per position.
Tensor position_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     float eps = 1e-5f);

// ---- attention pieces ----
Tensor causal_softmax(const Tensor& scores);  // [H,T,T], row i attends cols <= i
Tensor softmax_lastdim(const Tensor& a);

// ---- lookup ----
Tensor embedding(const Tensor& table, const std::vector<int>& ids);  // -> [T,W]

// ---- reductions / losses ----
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, float beta = 1.0f);
// logits [T,V]; loss averaged over positions where mask[t] is true
Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<char>& mask);

// Value equals `hard` bit-exactly; gradient flows to `soft` unchanged.
Tensor straight_through(const Tensor& soft, const std::vector<float>& hard);

Tensor dropout(const Tensor& a, float p, RngState& rng, bool training);

}  // namespace motionplan
