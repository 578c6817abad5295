#include "motionplan/generator.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace motionplan {

using RowMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::VectorXf>;
using MapVec = Eigen::Map<Eigen::VectorXf>;

void GeneratorConfig::validate() const {
    vocab.validate();
    if (width % heads != 0)
        throw std::runtime_error("generator: width must be divisible by heads");
    if (layers < 1 || context < 8)
        throw std::runtime_error("generator: invalid layers/context");
}

namespace {

std::string layer_prefix(int i) { return "gen.block" + std::to_string(i); }

void init_linear(ParameterStore& store, const std::string& name, int in, int out,
                 RngState& rng) {
    store.create_weight(name + ".weight", {in, out}, in, rng);
    store.create_bias(name + ".bias", out);
}

}  // namespace

void init_generator_params(const GeneratorConfig& config, ParameterStore& store,
                           RngState& rng) {
    config.validate();
    int W = config.width;
    store.create_embedding("gen.tok_emb", config.vocab.vocab_size(), W, rng);
    for (int i = 0; i < config.layers; ++i) {
        std::string p = layer_prefix(i);
        store.create_norm(p + ".norm1", W);
        for (const char* s : {"q", "k", "v", "o"}) {
            store.create_weight(p + ".attn.w" + s, {W, W}, W, rng);
            store.create_bias(p + ".attn.b" + s, W);
        }
        store.create_norm(p + ".norm2", W);
        init_linear(store, p + ".mlp.fc1", W, 4 * W, rng);
        init_linear(store, p + ".mlp.fc2", 4 * W, W, rng);
    }
    store.create_norm("gen.norm_f", W);
    init_linear(store, "gen.head", W, config.vocab.vocab_size(), rng);
    // damp the output head so the initial distribution is near uniform and
    // the starting loss sits at ln(vocab)
    for (float& v : store.get("gen.head.weight").value()) v *= 0.1f;
}

Tensor generator_forward(const GeneratorConfig& config, ParameterStore& store,
                         const std::vector<int>& ids, RngState& dropout_rng,
                         bool training) {
    int T = static_cast<int>(ids.size());
    if (T < 1) throw std::runtime_error("generator_forward: empty input");
    if (T > config.context)
        throw std::runtime_error("generator_forward: sequence length " +
                                 std::to_string(T) + " exceeds context " +
                                 std::to_string(config.context));
    // positions enter through the rotary attention below, not an embedding
    Tensor x = embedding(store.get("gen.tok_emb"), ids);
    x = dropout(x, config.dropout, dropout_rng, training);
    for (int i = 0; i < config.layers; ++i) {
        std::string p = layer_prefix(i);
        Tensor h = position_norm(x, store.get(p + ".norm1.gain"),
                                 store.get(p + ".norm1.bias"));
        h = self_attention_rope(
            h, store.get(p + ".attn.wq"), store.get(p + ".attn.bq"),
            store.get(p + ".attn.wk"), store.get(p + ".attn.bk"),
            store.get(p + ".attn.wv"), store.get(p + ".attn.bv"),
            store.get(p + ".attn.wo"), store.get(p + ".attn.bo"), config.heads);
        x = add(x, dropout(h, config.dropout, dropout_rng, training));
        h = position_norm(x, store.get(p + ".norm2.gain"),
                          store.get(p + ".norm2.bias"));
        h = linear(gelu(linear(h, store.get(p + ".mlp.fc1.weight"),
                               store.get(p + ".mlp.fc1.bias"))),
                   store.get(p + ".mlp.fc2.weight"),
                   store.get(p + ".mlp.fc2.bias"));
        x = add(x, dropout(h, config.dropout, dropout_rng, training));
    }
    x = position_norm(x, store.get("gen.norm_f.gain"),
                      store.get("gen.norm_f.bias"));
    return linear(x, store.get("gen.head.weight"), store.get("gen.head.bias"));
}

GeneratorTrainReport train_generator(const std::vector<GeneratorExample>& train,
                                     const std::vector<GeneratorExample>& valid,
                                     const GeneratorConfig& config,
                                     ParameterStore& store,
                                     const GeneratorTrainOptions& options,
                                     RngState& rng) {
    config.validate();
    if (train.empty())
        throw std::runtime_error("train_generator: empty training set");

    auto example_loss = [&](const GeneratorExample& ex, int offset,
                            RngState& drop_rng, bool training) {
        AssembledSequence seq =
            assemble(ex.prompt_ids, ex.motion_tokens, offset, config.vocab);
        int T = static_cast<int>(seq.ids.size());
        if (T > config.context)
            throw std::runtime_error("sequence " + std::to_string(ex.id) +
                                     " of length " + std::to_string(T) +
                                     " exceeds context " +
                                     std::to_string(config.context));
        std::vector<int> input(seq.ids.begin(), seq.ids.end() - 1);
        std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
        std::vector<char> mask(seq.loss_mask.begin() + 1, seq.loss_mask.end());
        Tensor logits =
            generator_forward(config, store, input, drop_rng, training);
        return cross_entropy_masked(logits, targets, mask);
    };

    auto eval_loss = [&](const std::vector<GeneratorExample>& set) {
        if (set.empty()) return 0.0;
        RngState no_drop(0);
        double total = 0.0;
        for (const auto& ex : set) {
            // fixed offset for evaluation comparability
            total += example_loss(ex, 1, no_drop, false).item();
        }
        return total / set.size();
    };

    GeneratorTrainReport report;
    report.initial_loss = eval_loss(valid.empty() ? train : valid);

    int64_t global_step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::vector<int> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(rng.uniform_int(0, i - 1))]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t pos = 0; pos < order.size(); pos += options.batch_size) {
            size_t end = std::min(pos + options.batch_size, order.size());
            store.zero_grad();
            Tensor total = Tensor::scalar(0.0f);
            for (size_t i = pos; i < end; ++i) {
                const auto& ex = train[static_cast<size_t>(order[i])];
                int offset = draw_offset(rng, config.vocab.t_max());
                total = add(total, example_loss(ex, offset, rng, true));
            }
            total = scale(total, 1.0f / static_cast<float>(end - pos));
            float lv = total.item();
            if (!std::isfinite(lv))
                throw std::runtime_error("train_generator: loss diverged at "
                                         "step " +
                                         std::to_string(global_step));
            backward(total);
            store.adam_step(warmup_lr(options.learning_rate, global_step,
                                      options.warmup_steps));
            ++global_step;
            epoch_loss += lv;
            ++batches;
        }
        report.train_loss.push_back(epoch_loss / std::max(batches, 1));
        report.valid_loss.push_back(eval_loss(valid));
    }
    return report;
}

int sample_next(const std::vector<float>& logits, const SamplingParams& params,
                RngState& rng) {
    if (params.top_k < 1)
        throw std::runtime_error("sample_next: top_k must be >= 1");
    if (params.temperature <= 0.0f)
        throw std::runtime_error("sample_next: temperature must be > 0");
    int vocab = static_cast<int>(logits.size());
    for (float v : logits)
        if (!std::isfinite(v))
            throw std::runtime_error("sample_next: non-finite logits");

    int k = std::min(params.top_k, vocab);
    // indices of the k largest logits (stable: ties keep lowest index first)
    std::vector<int> idx(logits.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    idx.resize(static_cast<size_t>(k));

    // near-zero temperature degenerates to argmax
    if (params.temperature < 1e-6f || k == 1) return idx[0];

    double mx = logits[idx[0]];
    std::vector<double> probs(idx.size());
    double denom = 0.0;
    for (size_t i = 0; i < idx.size(); ++i) {
        probs[i] = std::exp((logits[idx[i]] - mx) / params.temperature);
        denom += probs[i];
    }
    double draw = rng.uniform() * denom;
    double acc = 0.0;
    for (size_t i = 0; i < idx.size(); ++i) {
        acc += probs[i];
        if (draw < acc) return idx[i];
    }
    return idx.back();
}

// ---------------------------------------------------------------------------
// incremental inference

namespace {

void layer_norm_inplace(std::vector<float>& x, const std::vector<float>& gain,
                        const std::vector<float>& bias) {
    int W = static_cast<int>(x.size());
    double s = 0.0, s2 = 0.0;
    for (float v : x) {
        s += v;
        s2 += static_cast<double>(v) * v;
    }
    double mu = s / W;
    double var = s2 / W - mu * mu;
    if (var < 0.0) var = 0.0;
    float inv = static_cast<float>(1.0 / std::sqrt(var + 1e-5));
    for (int i = 0; i < W; ++i)
        x[i] = gain[i] * ((x[i] - static_cast<float>(mu)) * inv) + bias[i];
}

// y = W^T-free row-major [in,out] linear: y[out] = x.W + b
std::vector<float> apply_linear(const std::vector<float>& x, const Tensor& w,
                                const Tensor& b) {
    int in = w.shape()[0], out = w.shape()[1];
    std::vector<float> y(static_cast<size_t>(out));
    CMapMat W(w.value().data(), in, out);
    CMapVec X(x.data(), in);
    MapVec Y(y.data(), out);
    Y.noalias() = W.transpose() * X;
    Y += CMapVec(b.value().data(), out);
    return y;
}

void gelu_inplace(std::vector<float>& x) {
    constexpr float inv_sqrt2 = 0.7071067811865476f;
    for (auto& v : x) v = 0.5f * v * (1.0f + std::erf(v * inv_sqrt2));
}

}  // namespace

GeneratorSession::GeneratorSession(const GeneratorConfig& config,
                                   ParameterStore& store)
    : config_(config), store_(store) {
    key_cache_.resize(static_cast<size_t>(config.layers));
    value_cache_.resize(static_cast<size_t>(config.layers));
}

std::vector<float> GeneratorSession::step(int token) {
    if (pos_ >= config_.context)
        throw std::runtime_error("generator session: context overflow");
    int W = config_.width;
    int heads = config_.heads;
    int dh = W / heads;

    const auto& tok_emb = store_.get("gen.tok_emb");
    if (token < 0 || token >= config_.vocab.vocab_size())
        throw std::runtime_error("generator session: token out of range");
    std::vector<float> x(tok_emb.value().begin() +
                             static_cast<size_t>(token) * W,
                         tok_emb.value().begin() +
                             static_cast<size_t>(token + 1) * W);

    // rotary rotation at this absolute position; cached keys are stored
    // already rotated, so attention scores depend on relative offsets only
    auto rope_inplace = [&](std::vector<float>& vec) {
        for (int head = 0; head < heads; ++head) {
            int off = head * dh;
            for (int i = 0; i < dh / 2; ++i) {
                double theta =
                    std::pow(10000.0, -2.0 * i / static_cast<double>(dh));
                float c = static_cast<float>(std::cos(pos_ * theta));
                float sn = static_cast<float>(std::sin(pos_ * theta));
                float a = vec[static_cast<size_t>(off + 2 * i)];
                float b = vec[static_cast<size_t>(off + 2 * i + 1)];
                vec[static_cast<size_t>(off + 2 * i)] = a * c - b * sn;
                vec[static_cast<size_t>(off + 2 * i + 1)] = b * c + a * sn;
            }
        }
    };

    for (int layer = 0; layer < config_.layers; ++layer) {
        std::string p = layer_prefix(layer);
        std::vector<float> h = x;
        layer_norm_inplace(h, store_.get(p + ".norm1.gain").value(),
                           store_.get(p + ".norm1.bias").value());
        std::vector<float> q = apply_linear(h, store_.get(p + ".attn.wq"),
                                            store_.get(p + ".attn.bq"));
        std::vector<float> k = apply_linear(h, store_.get(p + ".attn.wk"),
                                            store_.get(p + ".attn.bk"));
        std::vector<float> v = apply_linear(h, store_.get(p + ".attn.wv"),
                                            store_.get(p + ".attn.bv"));
        auto& kc = key_cache_[static_cast<size_t>(layer)];
        auto& vc = value_cache_[static_cast<size_t>(layer)];
        kc.insert(kc.end(), k.begin(), k.end());
        vc.insert(vc.end(), v.begin(), v.end());
        int T = pos_ + 1;

        std::vector<float> ctx(static_cast<size_t>(W), 0.0f);
        float scale_factor = 1.0f / std::sqrt(static_cast<float>(dh));
        std::vector<double> scores(static_cast<size_t>(T));
        for (int head = 0; head < heads; ++head) {
            int off = head * dh;
            double mx = -1e30;
            for (int t = 0; t < T; ++t) {
                double s = 0.0;
                const float* krow = kc.data() + static_cast<size_t>(t) * W + off;
                for (int j = 0; j < dh; ++j) s += q[off + j] * krow[j];
                scores[static_cast<size_t>(t)] = s * scale_factor;
                mx = std::max(mx, scores[static_cast<size_t>(t)]);
            }
            double denom = 0.0;
            for (int t = 0; t < T; ++t) {
                scores[static_cast<size_t>(t)] =
                    std::exp(scores[static_cast<size_t>(t)] - mx);
                denom += scores[static_cast<size_t>(t)];
            }
            for (int t = 0; t < T; ++t) {
                float w = static_cast<float>(scores[static_cast<size_t>(t)] / denom);
                const float* vrow = vc.data() + static_cast<size_t>(t) * W + off;
                for (int j = 0; j < dh; ++j) ctx[off + j] += w * vrow[j];
            }
        }
        std::vector<float> attn_out = apply_linear(
            ctx, store_.get(p + ".attn.wo"), store_.get(p + ".attn.bo"));
        for (int i = 0; i < W; ++i) x[i] += attn_out[i];

        h = x;
        layer_norm_inplace(h, store_.get(p + ".norm2.gain").value(),
                           store_.get(p + ".norm2.bias").value());
        std::vector<float> m = apply_linear(h, store_.get(p + ".mlp.fc1.weight"),
                                            store_.get(p + ".mlp.fc1.bias"));
        gelu_inplace(m);
        m = apply_linear(m, store_.get(p + ".mlp.fc2.weight"),
                         store_.get(p + ".mlp.fc2.bias"));
        for (int i = 0; i < W; ++i) x[i] += m[i];
    }
    layer_norm_inplace(x, store_.get("gen.norm_f.gain").value(),
                       store_.get("gen.norm_f.bias").value());
    ++pos_;
    return apply_linear(x, store_.get("gen.head.weight"),
                        store_.get("gen.head.bias"));
}

GenerateResult generate(const std::vector<int>& prompt_ids,
                        const GeneratorConfig& config, ParameterStore& store,
                        const SamplingParams& sampling) {
    if (prompt_ids.empty()) throw std::runtime_error("generate: empty prompt");
    RngState rng(sampling.seed);
    GeneratorSession session(config, store);
    GenerateResult res;
    res.ids = prompt_ids;

    std::vector<float> logits;
    for (int id : prompt_ids) logits = session.step(id);

    int budget = sampling.max_new_tokens >= 0
                     ? sampling.max_new_tokens
                     : config.context - static_cast<int>(prompt_ids.size());
    res.truncated = true;
    for (int i = 0; i < budget; ++i) {
        if (session.position() >= config.context) break;
        int next = sample_next(logits, sampling, rng);
        res.ids.push_back(next);
        ++res.new_tokens;
        if (next == config.vocab.eos_id()) {
            res.truncated = false;
            break;
        }
        if (session.position() < config.context) logits = session.step(next);
    }
    return res;
}

GenerateMotionResult generate_motion(
    const std::vector<int>& prompt_ids, const GeneratorConfig& gen_config,
    ParameterStore& gen_store, const TokenizerConfig& tok_config,
    ParameterStore& tok_store, const Codebook& codebook,
    const FlowConfig& flow_config, ParameterStore& flow_store,
    const FlowSchedule& schedule, const NormStats& stats,
    const SamplingParams& sampling, double frame_rate_hz) {
    GenerateMotionResult out;
    ParseResult parsed;
    const PlanLevel* fine = nullptr;
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0)
            .count();
    };
    auto t_gen = clock::now();
    for (int attempt = 0; attempt <= 3; ++attempt) {
        SamplingParams sp = sampling;
        sp.seed = RngState::mix(sampling.seed ^ static_cast<uint64_t>(attempt));
        GenerateResult gen = generate(prompt_ids, gen_config, gen_store, sp);
        parsed = parse(gen.ids, gen_config.vocab);
        fine = parsed.hierarchy.level_with_interval(1);
        out.retries = attempt;
        if (fine && !fine->token_ids.empty()) break;
        fine = nullptr;
    }
    out.hierarchy = parsed.hierarchy;
    out.diagnostics = parsed.diagnostics;
    if (!fine) {
        std::string msg = "generate_motion: empty fine-level token sequence";
        for (const auto& d : out.diagnostics) msg += "; " + d;
        throw std::runtime_error(msg);
    }
    out.generate_ms = ms_since(t_gen);
    TokenSequence tokens;
    tokens.ids = fine->token_ids;
    tokens.codebook_size = codebook.size;
    tokens.rate = tok_config.downsample_rate;
    auto t_dec = clock::now();
    MotionSequence y0 =
        decode_base(tokens, codebook, tok_config, tok_store, frame_rate_hz);
    out.decode_ms = ms_since(t_dec);
    auto t_ref = clock::now();
    MotionSequence refined = refine(y0, flow_config, flow_store, schedule);
    out.refine_ms = ms_since(t_ref);
    out.motion = denormalize(refined, stats);
    return out;
}

}  // namespace motionplan
