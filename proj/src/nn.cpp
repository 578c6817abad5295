#include "motionplan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace motionplan {

Tensor& ParameterStore::create(const std::string& name, const Shape& shape) {
    if (entries.count(name))
        throw std::runtime_error("parameter already exists: " + name);
    Entry e;
    e.tensor = Tensor::zeros(shape, /*requires_grad=*/true);
    e.adam_m.assign(e.tensor.size(), 0.0f);
    e.adam_v.assign(e.tensor.size(), 0.0f);
    return entries.emplace(name, std::move(e)).first->second.tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = entries.find(name);
    if (it == entries.end())
        throw std::runtime_error("unknown parameter: " + name);
    return it->second.tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end())
        throw std::runtime_error("unknown parameter: " + name);
    return it->second.tensor;
}

int64_t ParameterStore::total_parameters() const {
    int64_t n = 0;
    for (auto& [k, e] : entries) n += e.tensor.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [k, e] : entries) {
        auto& g = e.tensor.grad();
        std::fill(g.begin(), g.end(), 0.0f);
    }
}

void ParameterStore::adam_step(float learning_rate) {
    constexpr float beta1 = 0.9f, beta2 = 0.99f, eps = 1e-8f;
    for (auto& [name, e] : entries)
        for (float g : e.tensor.grad())
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient in parameter " +
                                         name + "; step rejected");
    ++step;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (auto& [name, e] : entries) {
        auto& v = e.tensor.value();
        auto& g = e.tensor.grad();
        for (size_t i = 0; i < v.size(); ++i) {
            e.adam_m[i] = beta1 * e.adam_m[i] + (1.0f - beta1) * g[i];
            e.adam_v[i] = beta2 * e.adam_v[i] + (1.0f - beta2) * g[i] * g[i];
            float mhat = static_cast<float>(e.adam_m[i] / bc1);
            float vhat = static_cast<float>(e.adam_v[i] / bc2);
            v[i] -= learning_rate * mhat / (std::sqrt(vhat) + eps);
            if (!std::isfinite(v[i]))
                throw std::runtime_error("non-finite parameter after update: " +
                                         name);
            g[i] = 0.0f;
        }
    }
}

Tensor& ParameterStore::create_weight(const std::string& name, const Shape& shape,
                                      int fan_in, RngState& rng) {
    Tensor& t = create(name, shape);
    float bound = std::sqrt(1.0f / static_cast<float>(fan_in > 0 ? fan_in : 1));
    for (auto& v : t.value())
        v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

Tensor& ParameterStore::create_bias(const std::string& name, int size) {
    return create(name, {size});
}

Tensor& ParameterStore::create_embedding(const std::string& name, int vocab,
                                         int width, RngState& rng) {
    Tensor& t = create(name, {vocab, width});
    for (auto& v : t.value())
        v = static_cast<float>(rng.normal() * 0.02);
    return t;
}

void ParameterStore::create_norm(const std::string& prefix, int channels) {
    Tensor& g = create(prefix + ".gain", {channels});
    std::fill(g.value().begin(), g.value().end(), 1.0f);
    create(prefix + ".bias", {channels});
}

float warmup_lr(float base_lr, int64_t step, int64_t warmup_steps) {
    if (warmup_steps <= 0 || step >= warmup_steps) return base_lr;
    return base_lr * static_cast<float>(step + 1) /
           static_cast<float>(warmup_steps);
}

// ---------------------------------------------------------------------------

LayerSpec LayerSpec::make_linear(int in, int out) {
    LayerSpec s;
    s.kind = Kind::Linear;
    s.in_features = in;
    s.out_features = out;
    return s;
}
LayerSpec LayerSpec::make_conv1d(int cin, int cout, int kernel, int stride,
                                 int padding) {
    LayerSpec s;
    s.kind = Kind::Conv1d;
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
}
LayerSpec LayerSpec::make_transposed_conv1d(int cin, int cout, int kernel,
                                            int stride, int padding) {
    LayerSpec s = make_conv1d(cin, cout, kernel, stride, padding);
    s.kind = Kind::TransposedConv1d;
    return s;
}
LayerSpec LayerSpec::make_activation(Act a) {
    LayerSpec s;
    s.kind = Kind::Activation;
    s.act = a;
    return s;
}
LayerSpec LayerSpec::make_group_norm(int channels, int groups) {
    LayerSpec s;
    s.kind = Kind::GroupNorm;
    s.channels = channels;
    s.groups = groups;
    return s;
}
LayerSpec LayerSpec::make_self_attention(int heads, int width) {
    LayerSpec s;
    s.kind = Kind::SelfAttention;
    s.heads = heads;
    s.width = width;
    return s;
}
LayerSpec LayerSpec::make_embedding(int table_size, int width) {
    LayerSpec s;
    s.kind = Kind::Embedding;
    s.table_size = table_size;
    s.width = width;
    return s;
}

namespace {
std::string layer_name(const std::string& prefix, size_t i) {
    return prefix + ".layer" + std::to_string(i);
}
}  // namespace

void Sequential::init(ParameterStore& store, RngState& rng) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        std::string name = layer_name(prefix, i);
        switch (l.kind) {
            case LayerSpec::Kind::Linear:
                store.create_weight(name + ".weight",
                                    {l.in_features, l.out_features},
                                    l.in_features, rng);
                store.create_bias(name + ".bias", l.out_features);
                break;
            case LayerSpec::Kind::Conv1d:
                store.create_weight(name + ".weight",
                                    {l.out_channels, l.in_channels, l.kernel},
                                    l.in_channels * l.kernel, rng);
                store.create_bias(name + ".bias", l.out_channels);
                break;
            case LayerSpec::Kind::TransposedConv1d:
                store.create_weight(name + ".weight",
                                    {l.in_channels, l.out_channels, l.kernel},
                                    l.in_channels * l.kernel, rng);
                store.create_bias(name + ".bias", l.out_channels);
                break;
            case LayerSpec::Kind::Activation:
                break;
            case LayerSpec::Kind::GroupNorm:
                store.create_norm(name, l.channels);
                break;
            case LayerSpec::Kind::SelfAttention: {
                int w = l.width;
                for (const char* p : {"q", "k", "v", "o"}) {
                    store.create_weight(name + ".w" + p, {w, w}, w, rng);
                    store.create_bias(name + ".b" + p, w);
                }
                break;
            }
            case LayerSpec::Kind::Embedding:
                store.create_embedding(name + ".table", l.table_size, l.width,
                                       rng);
                break;
        }
    }
}

Tensor Sequential::forward(const Tensor& input, ParameterStore& store) const {
    Tensor x = input;
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        std::string name = layer_name(prefix, i);
        try {
            switch (l.kind) {
                case LayerSpec::Kind::Linear:
                    x = linear(x, store.get(name + ".weight"),
                               store.get(name + ".bias"));
                    break;
                case LayerSpec::Kind::Conv1d:
                    x = conv1d(x, store.get(name + ".weight"),
                               store.get(name + ".bias"), l.stride, l.padding);
                    break;
                case LayerSpec::Kind::TransposedConv1d:
                    x = conv_transpose1d(x, store.get(name + ".weight"),
                                         store.get(name + ".bias"), l.stride,
                                         l.padding);
                    break;
                case LayerSpec::Kind::Activation:
                    x = l.act == LayerSpec::Act::ReLU ? relu(x) : gelu(x);
                    break;
                case LayerSpec::Kind::GroupNorm:
                    x = group_norm(x, store.get(name + ".gain"),
                                   store.get(name + ".bias"), l.groups);
                    break;
                case LayerSpec::Kind::SelfAttention:
                    x = self_attention(
                        x, store.get(name + ".wq"), store.get(name + ".bq"),
                        store.get(name + ".wk"), store.get(name + ".bk"),
                        store.get(name + ".wv"), store.get(name + ".bv"),
                        store.get(name + ".wo"), store.get(name + ".bo"),
                        l.heads, /*causal=*/false);
                    break;
                case LayerSpec::Kind::Embedding:
                    throw std::runtime_error(
                        "embedding layers need id input; use embedding() "
                        "directly");
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("layer " + std::to_string(i) + " (" +
                                     prefix + "): " + e.what());
        }
    }
    return x;
}

Tensor self_attention(const Tensor& x, const Tensor& wq, const Tensor& bq,
                      const Tensor& wk, const Tensor& bk, const Tensor& wv,
                      const Tensor& bv, const Tensor& wo, const Tensor& bo,
                      int heads, bool causal) {
    const Shape& s = x.shape();
    if (s.size() != 2) throw std::runtime_error("self_attention: expect x[T,W]");
    int T = s[0], W = s[1];
    if (W % heads != 0)
        throw std::runtime_error("self_attention: width not divisible by heads");
    int dh = W / heads;
    Tensor q = linear(x, wq, bq);
    Tensor k = linear(x, wk, bk);
    Tensor v = linear(x, wv, bv);
    // [T,W] -> [H,T,dh]
    auto split = [&](const Tensor& t) {
        return permute3(reshape(t, {T, heads, dh}), 1, 0, 2);
    };
    Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor scores =
        scale(bmm(qh, permute3(kh, 0, 2, 1)), 1.0f / std::sqrt((float)dh));
    Tensor attn = causal ? causal_softmax(scores) : softmax_lastdim(scores);
    Tensor ctx = bmm(attn, vh);                       // [H,T,dh]
    Tensor merged = reshape(permute3(ctx, 1, 0, 2), {T, W});
    return linear(merged, wo, bo);
}

Tensor self_attention_rope(const Tensor& x, const Tensor& wq, const Tensor& bq,
                           const Tensor& wk, const Tensor& bk, const Tensor& wv,
                           const Tensor& bv, const Tensor& wo, const Tensor& bo,
                           int heads) {
    const Shape& s = x.shape();
    if (s.size() != 2)
        throw std::runtime_error("self_attention_rope: expect x[T,W]");
    int T = s[0], W = s[1];
    if (W % heads != 0)
        throw std::runtime_error("self_attention_rope: width not divisible by heads");
    int dh = W / heads;
    if (dh % 2 != 0)
        throw std::runtime_error("self_attention_rope: head dim must be even");

    // cos/sin tables [T,W] (every head repeats the same frequency ladder) and
    // a constant [W,W] matrix P with q*P = rotate-half(q)
    std::vector<float> cos_t(static_cast<size_t>(T) * W);
    std::vector<float> sin_t(static_cast<size_t>(T) * W);
    for (int t = 0; t < T; ++t) {
        for (int h = 0; h < heads; ++h) {
            int off = h * dh;
            for (int i = 0; i < dh / 2; ++i) {
                double theta =
                    std::pow(10000.0, -2.0 * i / static_cast<double>(dh));
                float c = static_cast<float>(std::cos(t * theta));
                float sn = static_cast<float>(std::sin(t * theta));
                size_t base = static_cast<size_t>(t) * W + off + 2 * i;
                cos_t[base] = c;
                cos_t[base + 1] = c;
                sin_t[base] = sn;
                sin_t[base + 1] = sn;
            }
        }
    }
    std::vector<float> perm(static_cast<size_t>(W) * W, 0.0f);
    for (int h = 0; h < heads; ++h) {
        int off = h * dh;
        for (int i = 0; i < dh / 2; ++i) {
            // out[2i] = -in[2i+1], out[2i+1] = in[2i]
            perm[static_cast<size_t>(off + 2 * i + 1) * W + off + 2 * i] = -1.0f;
            perm[static_cast<size_t>(off + 2 * i) * W + off + 2 * i + 1] = 1.0f;
        }
    }
    Tensor C = Tensor::from_data({T, W}, cos_t);
    Tensor S = Tensor::from_data({T, W}, sin_t);
    Tensor P = Tensor::from_data({W, W}, perm);
    auto rotate = [&](const Tensor& t) {
        return add(mul(t, C), mul(matmul(t, P), S));
    };

    Tensor q = rotate(linear(x, wq, bq));
    Tensor k = rotate(linear(x, wk, bk));
    Tensor v = linear(x, wv, bv);
    auto split = [&](const Tensor& t) {
        return permute3(reshape(t, {T, heads, dh}), 1, 0, 2);
    };
    Tensor qh = split(q), kh = split(k), vh = split(v);
    Tensor scores =
        scale(bmm(qh, permute3(kh, 0, 2, 1)), 1.0f / std::sqrt((float)dh));
    Tensor attn = causal_softmax(scores);
    Tensor ctx = bmm(attn, vh);
    Tensor merged = reshape(permute3(ctx, 1, 0, 2), {T, W});
    return linear(merged, wo, bo);
}

double finite_difference_check(const std::function<Tensor()>& loss_fn,
                               ParameterStore& store, RngState& rng,
                               double epsilon, int samples) {
    if (samples < 64) samples = 64;
    store.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);
    // snapshot analytic grads
    std::map<std::string, std::vector<float>> analytic;
    for (auto& [name, e] : store.entries) analytic[name] = e.tensor.grad();

    std::vector<std::string> names;
    for (auto& [name, e] : store.entries) names.push_back(name);

    double max_rel = 0.0;
    for (int s = 0; s < samples; ++s) {
        const std::string& name =
            names[static_cast<size_t>(rng.uniform_int(0, (int64_t)names.size() - 1))];
        auto& val = store.get(name).value();
        int64_t idx = rng.uniform_int(0, (int64_t)val.size() - 1);
        float orig = val[idx];
        val[idx] = orig + static_cast<float>(epsilon);
        double lp = loss_fn().item();
        val[idx] = orig - static_cast<float>(epsilon);
        double lm = loss_fn().item();
        val[idx] = orig;
        double numeric = (lp - lm) / (2.0 * epsilon);
        double exact = analytic[name][idx];
        // floor the denominator at 1: near-zero gradients (including exact
        // structural zeros) would otherwise amplify float roundoff in the
        // central difference into a meaningless relative error
        double rel = std::fabs(exact - numeric) /
                     std::max({std::fabs(exact), std::fabs(numeric), 1.0});
        max_rel = std::max(max_rel, rel);
    }
    store.zero_grad();
    return max_rel;
}

}  // namespace motionplan
