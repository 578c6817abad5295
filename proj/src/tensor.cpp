#include "motionplan/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace motionplan {

using RowMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

NodePtr make_node(Shape shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(numel(n->shape));
    n->parents = std::move(parents);
    for (auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void check(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

void check_finite(const std::vector<float>& v, const char* what) {
    for (float x : v)
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("non-finite value in ") + what);
}

}  // namespace

const Shape& Tensor::shape() const { return node->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(node->value.size()); }
std::vector<float>& Tensor::value() { return node->value; }
const std::vector<float>& Tensor::value() const { return node->value; }
std::vector<float>& Tensor::grad() {
    node->ensure_grad();
    return node->grad;
}

float Tensor::item() const {
    check(node->value.size() == 1, "item() on non-scalar tensor");
    return node->value[0];
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto n = make_node(shape, {});
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<float> data,
                         bool requires_grad) {
    check(static_cast<int64_t>(data.size()) == numel(shape),
          "from_data: size mismatch for shape " + shape_str(shape));
    auto n = make_node(shape, {});
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

Tensor Tensor::detach() const {
    auto n = make_node(node->shape, {});
    n->value = node->value;
    n->requires_grad = false;
    return Tensor(n);
}

void backward(const Tensor& loss) {
    check(loss.node->value.size() == 1, "backward: loss must be scalar");
    std::vector<TensorNode*> order;
    std::vector<TensorNode*> stack{loss.node.get()};
    // iterative DFS post-order
    std::vector<std::pair<TensorNode*, size_t>> frames;
    frames.emplace_back(loss.node.get(), 0);
    loss.node->visited = true;
    while (!frames.empty()) {
        auto& [n, idx] = frames.back();
        if (idx < n->parents.size()) {
            TensorNode* p = n->parents[idx++].get();
            if (!p->visited) {
                p->visited = true;
                frames.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            frames.pop_back();
        }
    }
    for (TensorNode* n : order) {
        n->visited = false;
        n->ensure_grad();
        std::fill(n->grad.begin(), n->grad.end(), 0.0f);
    }
    loss.node->grad[0] = 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
    // free intermediate grads, keep leaves
    for (TensorNode* n : order)
        if (n->backward_fn || !n->requires_grad) {
            if (n->backward_fn) n->grad = {};
        }
}

// ---------------------------------------------------------------------------
// elementwise

namespace {
Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name,
                         void (*fwd)(const float*, const float*, float*, int64_t),
                         void (*bwd)(TensorNode&)) {
    check(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
    auto n = make_node(a.shape(), {a.node, b.node});
    fwd(a.value().data(), b.value().data(), n->value.data(),
        static_cast<int64_t>(n->value.size()));
    if (n->requires_grad) n->backward_fn = bwd;
    return Tensor(n);
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "add",
        [](const float* x, const float* y, float* o, int64_t n) {
            for (int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
        },
        [](TensorNode& n) {
            for (int k = 0; k < 2; ++k) {
                auto& p = *n.parents[k];
                if (!p.requires_grad) continue;
                p.ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
            }
        });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    check(x.shape().size() == 2 && b.shape() == Shape{x.shape()[0]},
          "add_channel_bias: expect x[C,L], b[C]");
    int C = x.shape()[0], L = x.shape()[1];
    auto n = make_node(x.shape(), {x.node, b.node});
    for (int c = 0; c < C; ++c)
        for (int l = 0; l < L; ++l)
            n->value[static_cast<int64_t>(c) * L + l] =
                x.value()[static_cast<int64_t>(c) * L + l] + b.value()[c];
    if (n->requires_grad)
        n->backward_fn = [C, L](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pb = *n.parents[1];
            if (px.requires_grad) {
                px.ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) px.grad[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int c = 0; c < C; ++c)
                    for (int l = 0; l < L; ++l)
                        pb.grad[c] += n.grad[static_cast<int64_t>(c) * L + l];
            }
        };
    return Tensor(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub",
        [](const float* x, const float* y, float* o, int64_t n) {
            for (int64_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
        },
        [](TensorNode& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul",
        [](const float* x, const float* y, float* o, int64_t n) {
            for (int64_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
        },
        [](TensorNode& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i)
                    pa.grad[i] += n.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < n.grad.size(); ++i)
                    pb.grad[i] += n.grad[i] * pa.value[i];
            }
        });
}

Tensor scale(const Tensor& a, float s) {
    auto n = make_node(a.shape(), {a.node});
    for (size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * s;
    if (n->requires_grad)
        n->backward_fn = [s](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * s;
        };
    return Tensor(n);
}

Tensor relu(const Tensor& a) {
    auto n = make_node(a.shape(), {a.node});
    for (size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.value()[i] > 0.0f ? a.value()[i] : 0.0f;
    if (n->requires_grad)
        n->backward_fn = [](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i)
                if (p.value[i] > 0.0f) p.grad[i] += n.grad[i];
        };
    return Tensor(n);
}

Tensor gelu(const Tensor& a) {
    auto n = make_node(a.shape(), {a.node});
    constexpr float inv_sqrt2 = 0.7071067811865476f;
    for (size_t i = 0; i < n->value.size(); ++i) {
        float x = a.value()[i];
        n->value[i] = 0.5f * x * (1.0f + std::erf(x * inv_sqrt2));
    }
    if (n->requires_grad)
        n->backward_fn = [](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            constexpr float inv_sqrt2 = 0.7071067811865476f;
            constexpr float inv_sqrt2pi = 0.3989422804014327f;
            for (size_t i = 0; i < n.grad.size(); ++i) {
                float x = p.value[i];
                float cdf = 0.5f * (1.0f + std::erf(x * inv_sqrt2));
                float pdf = inv_sqrt2pi * std::exp(-0.5f * x * x);
                p.grad[i] += n.grad[i] * (cdf + x * pdf);
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// shape

Tensor reshape(const Tensor& a, const Shape& shape) {
    check(numel(shape) == a.size(), "reshape: element count mismatch " +
                                        shape_str(a.shape()) + " -> " +
                                        shape_str(shape));
    auto n = make_node(shape, {a.node});
    n->value = a.value();
    if (n->requires_grad)
        n->backward_fn = [](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        };
    return Tensor(n);
}

namespace {
void permute3_copy(const float* src, const Shape& s, int p0, int p1, int p2,
                   float* dst) {
    int d[3] = {s[0], s[1], s[2]};
    int out[3] = {d[p0], d[p1], d[p2]};
    int64_t stride_in[3] = {static_cast<int64_t>(d[1]) * d[2], d[2], 1};
    for (int i0 = 0; i0 < out[0]; ++i0)
        for (int i1 = 0; i1 < out[1]; ++i1)
            for (int i2 = 0; i2 < out[2]; ++i2) {
                int idx[3];
                idx[p0] = i0;
                idx[p1] = i1;
                idx[p2] = i2;
                dst[(static_cast<int64_t>(i0) * out[1] + i1) * out[2] + i2] =
                    src[idx[0] * stride_in[0] + idx[1] * stride_in[1] +
                        idx[2] * stride_in[2]];
            }
}
}  // namespace

Tensor permute3(const Tensor& a, int p0, int p1, int p2) {
    check(a.shape().size() == 3, "permute3: rank must be 3");
    const Shape& s = a.shape();
    Shape out{s[p0], s[p1], s[p2]};
    auto n = make_node(out, {a.node});
    permute3_copy(a.value().data(), s, p0, p1, p2, n->value.data());
    if (n->requires_grad) {
        // inverse permutation
        int inv[3];
        int p[3] = {p0, p1, p2};
        for (int i = 0; i < 3; ++i) inv[p[i]] = i;
        int i0 = inv[0], i1 = inv[1], i2 = inv[2];
        n->backward_fn = [i0, i1, i2](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            std::vector<float> tmp(n.grad.size());
            permute3_copy(n.grad.data(), n.shape, i0, i1, i2, tmp.data());
            for (size_t i = 0; i < tmp.size(); ++i) p.grad[i] += tmp[i];
        };
    }
    return Tensor(n);
}

Tensor concat_axis0(const Tensor& a, const Tensor& b) {
    check(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.shape()[1] == b.shape()[1],
          "concat_axis0: need [Ca,L] and [Cb,L] with equal L");
    int ca = a.shape()[0], cb = b.shape()[0], L = a.shape()[1];
    auto n = make_node({ca + cb, L}, {a.node, b.node});
    std::copy(a.value().begin(), a.value().end(), n->value.begin());
    std::copy(b.value().begin(), b.value().end(),
              n->value.begin() + static_cast<int64_t>(ca) * L);
    if (n->requires_grad)
        n->backward_fn = [ca, L](TensorNode& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            int64_t na = static_cast<int64_t>(ca) * L;
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (int64_t i = 0; i < na; ++i) pa.grad[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = na; i < n.grad.size(); ++i)
                    pb.grad[i - na] += n.grad[i];
            }
        };
    return Tensor(n);
}

Tensor slice_axis0(const Tensor& a, int start, int count) {
    check(a.shape().size() >= 1 && start >= 0 && start + count <= a.shape()[0],
          "slice_axis0: out of range");
    Shape out = a.shape();
    out[0] = count;
    int64_t row = a.size() / a.shape()[0];
    auto n = make_node(out, {a.node});
    std::copy(a.value().begin() + start * row,
              a.value().begin() + (start + count) * row, n->value.begin());
    if (n->requires_grad)
        n->backward_fn = [start, row](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i)
                p.grad[start * row + i] += n.grad[i];
        };
    return Tensor(n);
}

Tensor time_diff(const Tensor& a) {
    const Shape& s = a.shape();
    check(!s.empty() && s.back() >= 2, "time_diff: last axis must be >= 2");
    int L = s.back();
    int64_t rows = a.size() / L;
    Shape out = s;
    out.back() = L - 1;
    auto n = make_node(out, {a.node});
    for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i + 1 < L; ++i)
            n->value[r * (L - 1) + i] =
                a.value()[r * L + i + 1] - a.value()[r * L + i];
    if (n->requires_grad)
        n->backward_fn = [L, rows](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i + 1 < L; ++i) {
                    float g = n.grad[r * (L - 1) + i];
                    p.grad[r * L + i + 1] += g;
                    p.grad[r * L + i] -= g;
                }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.shape()[1] == b.shape()[0],
          "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
    int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
    auto n = make_node({m, nn}, {a.node, b.node});
    CMapMat A(a.value().data(), m, k), B(b.value().data(), k, nn);
    MapMat C(n->value.data(), m, nn);
    C.noalias() = A * B;
    if (n->requires_grad)
        n->backward_fn = [m, k, nn](TensorNode& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            CMapMat G(n.grad.data(), m, nn);
            if (pa.requires_grad) {
                pa.ensure_grad();
                CMapMat B(pb.value.data(), k, nn);
                MapMat GA(pa.grad.data(), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                CMapMat A(pa.value.data(), m, k);
                MapMat GB(pb.grad.data(), k, nn);
                GB.noalias() += A.transpose() * G;
            }
        };
    return Tensor(n);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    check(a.shape().size() == 3 && b.shape().size() == 3 &&
              a.shape()[0] == b.shape()[0] && a.shape()[2] == b.shape()[1],
          "bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()));
    int H = a.shape()[0], m = a.shape()[1], k = a.shape()[2], nn = b.shape()[2];
    auto n = make_node({H, m, nn}, {a.node, b.node});
    for (int h = 0; h < H; ++h) {
        CMapMat A(a.value().data() + static_cast<int64_t>(h) * m * k, m, k);
        CMapMat B(b.value().data() + static_cast<int64_t>(h) * k * nn, k, nn);
        MapMat C(n->value.data() + static_cast<int64_t>(h) * m * nn, m, nn);
        C.noalias() = A * B;
    }
    if (n->requires_grad)
        n->backward_fn = [H, m, k, nn](TensorNode& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int h = 0; h < H; ++h) {
                CMapMat G(n.grad.data() + static_cast<int64_t>(h) * m * nn, m, nn);
                if (pa.requires_grad) {
                    CMapMat B(pb.value.data() + static_cast<int64_t>(h) * k * nn,
                              k, nn);
                    MapMat GA(pa.grad.data() + static_cast<int64_t>(h) * m * k, m,
                              k);
                    GA.noalias() += G * B.transpose();
                }
                if (pb.requires_grad) {
                    CMapMat A(pa.value.data() + static_cast<int64_t>(h) * m * k, m,
                              k);
                    MapMat GB(pb.grad.data() + static_cast<int64_t>(h) * k * nn, k,
                              nn);
                    GB.noalias() += A.transpose() * G;
                }
            }
        };
    return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const Shape& xs = x.shape();
    check(xs.size() == 2 || xs.size() == 3, "linear: x must be rank 2 or 3");
    int K = xs.back();
    check(w.shape().size() == 2 && w.shape()[0] == K,
          "linear: weight shape " + shape_str(w.shape()) +
              " incompatible with input " + shape_str(xs));
    int N = w.shape()[1];
    check(b.shape() == Shape{N}, "linear: bias shape mismatch");
    int64_t rows = x.size() / K;
    Shape out = xs;
    out.back() = N;
    auto n = make_node(out, {x.node, w.node, b.node});
    CMapMat X(x.value().data(), rows, K), W(w.value().data(), K, N);
    MapMat Y(n->value.data(), rows, N);
    Y.noalias() = X * W;
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b.value().data(), N);
    if (n->requires_grad)
        n->backward_fn = [rows, K, N](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            CMapMat G(n.grad.data(), rows, N);
            if (px.requires_grad) {
                px.ensure_grad();
                CMapMat W(pw.value.data(), K, N);
                MapMat GX(px.grad.data(), rows, K);
                GX.noalias() += G * W.transpose();
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                CMapMat X(px.value.data(), rows, K);
                MapMat GW(pw.grad.data(), K, N);
                GW.noalias() += X.transpose() * G;
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                Eigen::Map<Eigen::RowVectorXf> GB(pb.grad.data(), N);
                GB += G.colwise().sum();
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// convolution

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int padding) {
    check(x.shape().size() == 2 && w.shape().size() == 3,
          "conv1d: expect x[C,L], w[Cout,Cin,k]");
    int cin = x.shape()[0], L = x.shape()[1];
    int cout = w.shape()[0], kcin = w.shape()[1], K = w.shape()[2];
    check(kcin == cin, "conv1d: channel mismatch (x has " + std::to_string(cin) +
                           ", w expects " + std::to_string(kcin) + ")");
    check(b.shape() == Shape{cout}, "conv1d: bias shape mismatch");
    int lout = (L + 2 * padding - K) / stride + 1;
    check(lout >= 1, "conv1d: output length < 1");
    auto n = make_node({cout, lout}, {x.node, w.node, b.node});
    // im2col: Col[ci*K+j, o] = x[ci, o*stride - padding + j], zero outside
    auto im2col = [cin, L, K, lout, stride, padding](const float* X) {
        RowMat col = RowMat::Zero(static_cast<int64_t>(cin) * K, lout);
        for (int ci = 0; ci < cin; ++ci) {
            const float* xr = X + static_cast<int64_t>(ci) * L;
            for (int j = 0; j < K; ++j) {
                float* cr = col.data() +
                            (static_cast<int64_t>(ci) * K + j) * lout;
                for (int o = 0; o < lout; ++o) {
                    int i = o * stride - padding + j;
                    if (i >= 0 && i < L) cr[o] = xr[i];
                }
            }
        }
        return col;
    };
    {
        RowMat col = im2col(x.value().data());
        CMapMat Wm(w.value().data(), cout, static_cast<int64_t>(cin) * K);
        MapMat Y(n->value.data(), cout, lout);
        Y.noalias() = Wm * col;
        Y.colwise() += Eigen::Map<const Eigen::VectorXf>(b.value().data(), cout);
    }
    if (n->requires_grad)
        n->backward_fn = [cin, L, cout, K, stride, padding, lout,
                          im2col](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            CMapMat G(n.grad.data(), cout, lout);
            if (pb.requires_grad) {
                pb.ensure_grad();
                Eigen::Map<Eigen::VectorXf>(pb.grad.data(), cout) +=
                    G.rowwise().sum();
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                RowMat col = im2col(px.value.data());
                MapMat GW(pw.grad.data(), cout, static_cast<int64_t>(cin) * K);
                GW.noalias() += G * col.transpose();
            }
            if (px.requires_grad) {
                px.ensure_grad();
                CMapMat Wm(pw.value.data(), cout, static_cast<int64_t>(cin) * K);
                RowMat gcol(static_cast<int64_t>(cin) * K, lout);
                gcol.noalias() = Wm.transpose() * G;
                for (int ci = 0; ci < cin; ++ci) {
                    float* gx = px.grad.data() + static_cast<int64_t>(ci) * L;
                    for (int j = 0; j < K; ++j) {
                        const float* gr = gcol.data() +
                                          (static_cast<int64_t>(ci) * K + j) * lout;
                        for (int o = 0; o < lout; ++o) {
                            int i = o * stride - padding + j;
                            if (i >= 0 && i < L) gx[i] += gr[o];
                        }
                    }
                }
            }
        };
    return Tensor(n);
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride, int padding) {
    check(x.shape().size() == 2 && w.shape().size() == 3,
          "conv_transpose1d: expect x[Cin,L], w[Cin,Cout,k]");
    int cin = x.shape()[0], L = x.shape()[1];
    int wcin = w.shape()[0], cout = w.shape()[1], K = w.shape()[2];
    check(wcin == cin, "conv_transpose1d: channel mismatch");
    check(b.shape() == Shape{cout}, "conv_transpose1d: bias shape mismatch");
    int lout = (L - 1) * stride - 2 * padding + K;
    check(lout >= 1, "conv_transpose1d: output length < 1");
    auto n = make_node({cout, lout}, {x.node, w.node, b.node});
    // Gather of a [cout, lout] map into col layout: Col[co*K+j, o] =
    // m[co, o*stride - padding + j] (zero outside). The forward is then the
    // transpose of the matching conv1d: scatter P = Wm^T X into the output.
    auto gather_cols = [cout, K, L, lout, stride, padding](const float* m) {
        RowMat col = RowMat::Zero(static_cast<int64_t>(cout) * K, L);
        for (int co = 0; co < cout; ++co) {
            const float* mr = m + static_cast<int64_t>(co) * lout;
            for (int j = 0; j < K; ++j) {
                float* cr = col.data() + (static_cast<int64_t>(co) * K + j) * L;
                for (int o = 0; o < L; ++o) {
                    int t = o * stride - padding + j;
                    if (t >= 0 && t < lout) cr[o] = mr[t];
                }
            }
        }
        return col;
    };
    {
        CMapMat Wm(w.value().data(), cin, static_cast<int64_t>(cout) * K);
        CMapMat Xm(x.value().data(), cin, L);
        RowMat P(static_cast<int64_t>(cout) * K, L);
        P.noalias() = Wm.transpose() * Xm;
        MapMat Y(n->value.data(), cout, lout);
        Y.colwise() = Eigen::Map<const Eigen::VectorXf>(b.value().data(), cout);
        for (int co = 0; co < cout; ++co) {
            float* yr = n->value.data() + static_cast<int64_t>(co) * lout;
            for (int j = 0; j < K; ++j) {
                const float* pr =
                    P.data() + (static_cast<int64_t>(co) * K + j) * L;
                for (int o = 0; o < L; ++o) {
                    int t = o * stride - padding + j;
                    if (t >= 0 && t < lout) yr[t] += pr[o];
                }
            }
        }
    }
    if (n->requires_grad)
        n->backward_fn = [cin, L, cout, K, lout, gather_cols](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            CMapMat G(n.grad.data(), cout, lout);
            if (pb.requires_grad) {
                pb.ensure_grad();
                Eigen::Map<Eigen::VectorXf>(pb.grad.data(), cout) +=
                    G.rowwise().sum();
            }
            RowMat gcol = gather_cols(n.grad.data());  // [cout*K, L]
            if (px.requires_grad) {
                px.ensure_grad();
                CMapMat Wm(pw.value.data(), cin, static_cast<int64_t>(cout) * K);
                MapMat GX(px.grad.data(), cin, L);
                GX.noalias() += Wm * gcol;
            }
            if (pw.requires_grad) {
                pw.ensure_grad();
                CMapMat Xm(px.value.data(), cin, L);
                MapMat GW(pw.grad.data(), cin, static_cast<int64_t>(cout) * K);
                GW.noalias() += Xm * gcol.transpose();
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// normalization

Tensor group_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  int groups, float eps) {
    check(x.shape().size() == 2, "group_norm: expect x[C,L]");
    int C = x.shape()[0], L = x.shape()[1];
    check(C % groups == 0, "group_norm: groups (" + std::to_string(groups) +
                               ") must divide channels (" + std::to_string(C) +
                               ")");
    check(gain.shape() == Shape{C} && bias.shape() == Shape{C},
          "group_norm: gain/bias must be per-channel");
    int cpg = C / groups;
    int64_t m = static_cast<int64_t>(cpg) * L;
    auto n = make_node({C, L}, {x.node, gain.node, bias.node});
    std::vector<float> mean(groups), inv_std(groups);
    for (int g = 0; g < groups; ++g) {
        double s = 0.0, s2 = 0.0;
        for (int c = g * cpg; c < (g + 1) * cpg; ++c)
            for (int l = 0; l < L; ++l) {
                float v = x.value()[static_cast<int64_t>(c) * L + l];
                s += v;
                s2 += static_cast<double>(v) * v;
            }
        double mu = s / m;
        double var = s2 / m - mu * mu;
        if (var < 0.0) var = 0.0;
        mean[g] = static_cast<float>(mu);
        inv_std[g] = static_cast<float>(1.0 / std::sqrt(var + eps));
    }
    for (int c = 0; c < C; ++c) {
        int g = c / cpg;
        for (int l = 0; l < L; ++l) {
            int64_t i = static_cast<int64_t>(c) * L + l;
            float xhat = (x.value()[i] - mean[g]) * inv_std[g];
            n->value[i] = gain.value()[c] * xhat + bias.value()[c];
        }
    }
    if (n->requires_grad)
        n->backward_fn = [C, L, groups, cpg, m, mean, inv_std](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            if (px.requires_grad) px.ensure_grad();
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int g = 0; g < groups; ++g) {
                // accumulate sums of dxhat and dxhat*xhat over the group
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                    for (int l = 0; l < L; ++l) {
                        int64_t i = static_cast<int64_t>(c) * L + l;
                        float xhat = (px.value[i] - mean[g]) * inv_std[g];
                        float dxh = n.grad[i] * pg.value[c];
                        sum_dxh += dxh;
                        sum_dxh_xh += static_cast<double>(dxh) * xhat;
                        if (pg.requires_grad) pg.grad[c] += n.grad[i] * xhat;
                        if (pb.requires_grad) pb.grad[c] += n.grad[i];
                    }
                if (px.requires_grad)
                    for (int c = g * cpg; c < (g + 1) * cpg; ++c)
                        for (int l = 0; l < L; ++l) {
                            int64_t i = static_cast<int64_t>(c) * L + l;
                            float xhat = (px.value[i] - mean[g]) * inv_std[g];
                            float dxh = n.grad[i] * pg.value[c];
                            px.grad[i] +=
                                inv_std[g] *
                                (dxh - static_cast<float>(sum_dxh / m) -
                                 xhat * static_cast<float>(sum_dxh_xh / m));
                        }
            }
        };
    return Tensor(n);
}

Tensor position_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                     float eps) {
    check(x.shape().size() == 2, "position_norm: expect x[T,W]");
    int T = x.shape()[0], W = x.shape()[1];
    check(gain.shape() == Shape{W} && bias.shape() == Shape{W},
          "position_norm: gain/bias must be per-feature");
    auto n = make_node({T, W}, {x.node, gain.node, bias.node});
    std::vector<float> mean(T), inv_std(T);
    for (int t = 0; t < T; ++t) {
        double s = 0.0, s2 = 0.0;
        for (int w = 0; w < W; ++w) {
            float v = x.value()[static_cast<int64_t>(t) * W + w];
            s += v;
            s2 += static_cast<double>(v) * v;
        }
        double mu = s / W;
        double var = s2 / W - mu * mu;
        if (var < 0.0) var = 0.0;
        mean[t] = static_cast<float>(mu);
        inv_std[t] = static_cast<float>(1.0 / std::sqrt(var + eps));
        for (int w = 0; w < W; ++w) {
            int64_t i = static_cast<int64_t>(t) * W + w;
            float xhat = (x.value()[i] - mean[t]) * inv_std[t];
            n->value[i] = gain.value()[w] * xhat + bias.value()[w];
        }
    }
    if (n->requires_grad)
        n->backward_fn = [T, W, mean, inv_std](TensorNode& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            if (px.requires_grad) px.ensure_grad();
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int t = 0; t < T; ++t) {
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (int w = 0; w < W; ++w) {
                    int64_t i = static_cast<int64_t>(t) * W + w;
                    float xhat = (px.value[i] - mean[t]) * inv_std[t];
                    float dxh = n.grad[i] * pg.value[w];
                    sum_dxh += dxh;
                    sum_dxh_xh += static_cast<double>(dxh) * xhat;
                    if (pg.requires_grad) pg.grad[w] += n.grad[i] * xhat;
                    if (pb.requires_grad) pb.grad[w] += n.grad[i];
                }
                if (px.requires_grad)
                    for (int w = 0; w < W; ++w) {
                        int64_t i = static_cast<int64_t>(t) * W + w;
                        float xhat = (px.value[i] - mean[t]) * inv_std[t];
                        float dxh = n.grad[i] * pg.value[w];
                        px.grad[i] += inv_std[t] *
                                      (dxh - static_cast<float>(sum_dxh / W) -
                                       xhat * static_cast<float>(sum_dxh_xh / W));
                    }
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// softmax

namespace {
// softmax over a contiguous row prefix [0, valid); entries beyond are zeroed
void softmax_row(const float* in, float* out, int valid, int width) {
    float mx = in[0];
    for (int j = 1; j < valid; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (int j = 0; j < valid; ++j) denom += std::exp(static_cast<double>(in[j] - mx));
    for (int j = 0; j < valid; ++j)
        out[j] = static_cast<float>(std::exp(static_cast<double>(in[j] - mx)) / denom);
    for (int j = valid; j < width; ++j) out[j] = 0.0f;
}

void softmax_row_backward(const float* p, const float* dp, float* dx, int valid,
                          int width) {
    double dot = 0.0;
    for (int j = 0; j < valid; ++j) dot += static_cast<double>(dp[j]) * p[j];
    for (int j = 0; j < valid; ++j)
        dx[j] += p[j] * (dp[j] - static_cast<float>(dot));
    (void)width;
}
}  // namespace

Tensor causal_softmax(const Tensor& scores) {
    check(scores.shape().size() == 3 && scores.shape()[1] == scores.shape()[2],
          "causal_softmax: expect [H,T,T]");
    int H = scores.shape()[0], T = scores.shape()[1];
    auto n = make_node(scores.shape(), {scores.node});
    for (int h = 0; h < H; ++h)
        for (int t = 0; t < T; ++t) {
            int64_t off = (static_cast<int64_t>(h) * T + t) * T;
            softmax_row(scores.value().data() + off, n->value.data() + off, t + 1,
                        T);
        }
    if (n->requires_grad)
        n->backward_fn = [H, T](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (int h = 0; h < H; ++h)
                for (int t = 0; t < T; ++t) {
                    int64_t off = (static_cast<int64_t>(h) * T + t) * T;
                    softmax_row_backward(n.value.data() + off,
                                         n.grad.data() + off,
                                         p.grad.data() + off, t + 1, T);
                }
        };
    return Tensor(n);
}

Tensor softmax_lastdim(const Tensor& a) {
    const Shape& s = a.shape();
    check(!s.empty(), "softmax_lastdim: empty shape");
    int W = s.back();
    int64_t rows = a.size() / W;
    auto n = make_node(s, {a.node});
    for (int64_t r = 0; r < rows; ++r)
        softmax_row(a.value().data() + r * W, n->value.data() + r * W, W, W);
    if (n->requires_grad)
        n->backward_fn = [rows, W](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                softmax_row_backward(n.value.data() + r * W, n.grad.data() + r * W,
                                     p.grad.data() + r * W, W, W);
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// lookup

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    check(table.shape().size() == 2, "embedding: table must be [V,W]");
    int V = table.shape()[0], W = table.shape()[1];
    int T = static_cast<int>(ids.size());
    for (int t = 0; t < T; ++t)
        check(ids[t] >= 0 && ids[t] < V,
              "embedding: id " + std::to_string(ids[t]) + " out of range [0," +
                  std::to_string(V) + ") at position " + std::to_string(t));
    auto n = make_node({T, W}, {table.node});
    for (int t = 0; t < T; ++t)
        std::copy(table.value().begin() + static_cast<int64_t>(ids[t]) * W,
                  table.value().begin() + static_cast<int64_t>(ids[t] + 1) * W,
                  n->value.begin() + static_cast<int64_t>(t) * W);
    if (n->requires_grad)
        n->backward_fn = [ids, W](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t t = 0; t < ids.size(); ++t)
                for (int w = 0; w < W; ++w)
                    p.grad[static_cast<int64_t>(ids[t]) * W + w] +=
                        n.grad[t * W + w];
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// reductions / losses

Tensor mean_all(const Tensor& a) {
    auto n = make_node({1}, {a.node});
    double s = 0.0;
    for (float v : a.value()) s += v;
    int64_t m = a.size();
    n->value[0] = static_cast<float>(s / m);
    if (n->requires_grad)
        n->backward_fn = [m](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            float g = n.grad[0] / m;
            for (auto& v : p.grad) v += g;
        };
    return Tensor(n);
}

Tensor sum_all(const Tensor& a) {
    auto n = make_node({1}, {a.node});
    double s = 0.0;
    for (float v : a.value()) s += v;
    n->value[0] = static_cast<float>(s);
    if (n->requires_grad)
        n->backward_fn = [](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (auto& v : p.grad) v += n.grad[0];
        };
    return Tensor(n);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    check(pred.shape() == target.shape(), "mse_loss: shape mismatch");
    auto n = make_node({1}, {pred.node, target.node});
    int64_t m = pred.size();
    double s = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        double d = static_cast<double>(pred.value()[i]) - target.value()[i];
        s += d * d;
    }
    n->value[0] = static_cast<float>(s / m);
    if (n->requires_grad)
        n->backward_fn = [m](TensorNode& n) {
            auto& pp = *n.parents[0];
            auto& pt = *n.parents[1];
            float g = 2.0f * n.grad[0] / m;
            if (pp.requires_grad) {
                pp.ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    pp.grad[i] += g * (pp.value[i] - pt.value[i]);
            }
            if (pt.requires_grad) {
                pt.ensure_grad();
                for (int64_t i = 0; i < m; ++i)
                    pt.grad[i] -= g * (pp.value[i] - pt.value[i]);
            }
        };
    return Tensor(n);
}

Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target, float beta) {
    check(pred.shape() == target.shape(), "smooth_l1_loss: shape mismatch");
    auto n = make_node({1}, {pred.node, target.node});
    int64_t m = pred.size();
    double s = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        float d = pred.value()[i] - target.value()[i];
        float a = std::fabs(d);
        s += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
    }
    n->value[0] = static_cast<float>(s / m);
    if (n->requires_grad)
        n->backward_fn = [m, beta](TensorNode& n) {
            auto& pp = *n.parents[0];
            float g = n.grad[0] / m;
            if (!pp.requires_grad) return;
            pp.ensure_grad();
            auto& pt = *n.parents[1];
            for (int64_t i = 0; i < m; ++i) {
                float d = pp.value[i] - pt.value[i];
                float dd = std::fabs(d) < beta ? d / beta : (d > 0 ? 1.0f : -1.0f);
                pp.grad[i] += g * dd;
            }
        };
    return Tensor(n);
}

Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<char>& mask) {
    check(logits.shape().size() == 2, "cross_entropy_masked: expect [T,V]");
    int T = logits.shape()[0], V = logits.shape()[1];
    check(static_cast<int>(targets.size()) == T &&
              static_cast<int>(mask.size()) == T,
          "cross_entropy_masked: targets/mask length mismatch");
    int64_t count = 0;
    for (int t = 0; t < T; ++t)
        if (mask[t]) ++count;
    check(count > 0, "cross_entropy_masked: empty mask");
    auto n = make_node({1}, {logits.node});
    // keep probabilities for backward
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(T) * V, 0.0f);
    double total = 0.0;
    for (int t = 0; t < T; ++t) {
        if (!mask[t]) continue;
        check(targets[t] >= 0 && targets[t] < V,
              "cross_entropy_masked: target out of range at position " +
                  std::to_string(t));
        const float* row = logits.value().data() + static_cast<int64_t>(t) * V;
        float* prow = probs->data() + static_cast<int64_t>(t) * V;
        softmax_row(row, prow, V, V);
        total -= std::log(std::max(static_cast<double>(prow[targets[t]]), 1e-30));
    }
    n->value[0] = static_cast<float>(total / count);
    if (n->requires_grad)
        n->backward_fn = [T, V, count, probs, targets, mask](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            float g = n.grad[0] / count;
            for (int t = 0; t < T; ++t) {
                if (!mask[t]) continue;
                const float* prow = probs->data() + static_cast<int64_t>(t) * V;
                float* grow = p.grad.data() + static_cast<int64_t>(t) * V;
                for (int v = 0; v < V; ++v) grow[v] += g * prow[v];
                grow[targets[t]] -= g;
            }
        };
    return Tensor(n);
}

Tensor straight_through(const Tensor& soft, const std::vector<float>& hard) {
    check(static_cast<int64_t>(hard.size()) == soft.size(),
          "straight_through: size mismatch");
    auto n = make_node(soft.shape(), {soft.node});
    n->value = hard;
    if (n->requires_grad)
        n->backward_fn = [](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        };
    return Tensor(n);
}

Tensor dropout(const Tensor& a, float p, RngState& rng, bool training) {
    if (!training || p <= 0.0f) return a;
    auto n = make_node(a.shape(), {a.node});
    auto keep = std::make_shared<std::vector<char>>(a.size());
    float inv = 1.0f / (1.0f - p);
    for (int64_t i = 0; i < a.size(); ++i) {
        bool k = rng.uniform() >= p;
        (*keep)[i] = k;
        n->value[i] = k ? a.value()[i] * inv : 0.0f;
    }
    if (n->requires_grad)
        n->backward_fn = [keep, inv](TensorNode& n) {
            auto& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i)
                if ((*keep)[i]) p.grad[i] += n.grad[i] * inv;
        };
    return Tensor(n);
}

}  // namespace motionplan
