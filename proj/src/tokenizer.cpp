#include "motionplan/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace motionplan {

void TokenizerConfig::validate() const {
    if (downsample_rate != 2 && downsample_rate != 4)
        throw std::runtime_error("tokenizer: downsample rate must be 2 or 4");
    if (codebook_size < 2)
        throw std::runtime_error("tokenizer: codebook size must be >= 2");
    if (code_dim < 1 || channels < 1 || d_m < 1)
        throw std::runtime_error("tokenizer: invalid dimensions");
}

Codebook Codebook::init(int size, int code_dim, RngState& rng) {
    Codebook cb;
    cb.size = size;
    cb.code_dim = code_dim;
    cb.codes.resize(static_cast<size_t>(size) * code_dim);
    for (auto& v : cb.codes) v = static_cast<float>(rng.normal() * 0.5);
    cb.ema_counts.assign(size, 0.0f);
    cb.ema_sums.assign(static_cast<size_t>(size) * code_dim, 0.0f);
    cb.last_used_step.assign(size, 0);
    return cb;
}

namespace {

int num_halvings(int rate) { return rate == 2 ? 1 : 2; }

void init_conv(ParameterStore& store, const std::string& name, int cin, int cout,
               int k, RngState& rng) {
    store.create_weight(name + ".weight", {cout, cin, k}, cin * k, rng);
    store.create_bias(name + ".bias", cout);
}

void init_convt(ParameterStore& store, const std::string& name, int cin,
                int cout, int k, RngState& rng) {
    store.create_weight(name + ".weight", {cin, cout, k}, cin * k, rng);
    store.create_bias(name + ".bias", cout);
}

Tensor conv(ParameterStore& store, const std::string& name, const Tensor& x,
            int stride, int padding) {
    return conv1d(x, store.get(name + ".weight"), store.get(name + ".bias"),
                  stride, padding);
}

Tensor convt(ParameterStore& store, const std::string& name, const Tensor& x,
             int stride, int padding) {
    return conv_transpose1d(x, store.get(name + ".weight"),
                            store.get(name + ".bias"), stride, padding);
}

Tensor res_block(ParameterStore& store, const std::string& name,
                 const Tensor& x) {
    Tensor h = conv(store, name + ".res1", gelu(x), 1, 1);
    h = conv(store, name + ".res2", gelu(h), 1, 1);
    return add(x, h);
}

// motion [n][d_m] row-major -> tensor [d_m, n]
Tensor motion_to_tensor(const MotionSequence& m, int frames) {
    std::vector<float> buf(static_cast<size_t>(m.d_m) * frames);
    for (int c = 0; c < m.d_m; ++c)
        for (int i = 0; i < frames; ++i)
            buf[static_cast<size_t>(c) * frames + i] = m.at(i, c);
    return Tensor::from_data({m.d_m, frames}, std::move(buf));
}

MotionSequence tensor_to_motion(const Tensor& t, double frame_rate_hz) {
    int d_m = t.shape()[0], n = t.shape()[1];
    MotionSequence m;
    m.d_m = d_m;
    m.frame_rate_hz = frame_rate_hz;
    m.data.resize(static_cast<size_t>(n) * d_m);
    for (int c = 0; c < d_m; ++c)
        for (int i = 0; i < n; ++i)
            m.at(i, c) = t.value()[static_cast<size_t>(c) * n + i];
    return m;
}

}  // namespace

void init_tokenizer_params(const TokenizerConfig& config, ParameterStore& store,
                           RngState& rng) {
    config.validate();
    int C = config.channels;
    init_conv(store, "tok.enc.in", config.d_m, C, 3, rng);
    for (int h = 0; h < num_halvings(config.downsample_rate); ++h) {
        std::string p = "tok.enc.h" + std::to_string(h);
        init_conv(store, p + ".conv_a", C, C, 3, rng);
        init_conv(store, p + ".conv_b", C, C, 3, rng);
        init_conv(store, p + ".down", C, C, 4, rng);
        init_conv(store, p + ".res1", C, C, 3, rng);
        init_conv(store, p + ".res2", C, C, 3, rng);
    }
    init_conv(store, "tok.enc.out", C, config.code_dim, 3, rng);

    init_conv(store, "tok.dec.in", config.code_dim, C, 3, rng);
    for (int h = 0; h < num_halvings(config.downsample_rate); ++h) {
        std::string p = "tok.dec.h" + std::to_string(h);
        init_conv(store, p + ".res1", C, C, 3, rng);
        init_conv(store, p + ".res2", C, C, 3, rng);
        init_convt(store, p + ".up", C, C, 4, rng);
        init_conv(store, p + ".conv_a", C, C, 3, rng);
        init_conv(store, p + ".conv_b", C, C, 3, rng);
    }
    init_conv(store, "tok.dec.out", C, config.d_m, 3, rng);
}

Tensor encoder_forward(const TokenizerConfig& config, ParameterStore& store,
                       const Tensor& x) {
    if (x.shape().size() != 2 || x.shape()[0] != config.d_m)
        throw std::runtime_error("encoder: expect input [d_m, n]");
    if (x.shape()[1] < config.downsample_rate)
        throw std::runtime_error("encoder: n < downsample rate");
    Tensor h = conv(store, "tok.enc.in", x, 1, 1);
    for (int i = 0; i < num_halvings(config.downsample_rate); ++i) {
        std::string p = "tok.enc.h" + std::to_string(i);
        h = gelu(conv(store, p + ".conv_a", h, 1, 1));
        h = gelu(conv(store, p + ".conv_b", h, 1, 1));
        h = gelu(conv(store, p + ".down", h, 2, 1));
        h = res_block(store, p, h);
    }
    return conv(store, "tok.enc.out", h, 1, 1);
}

Tensor decoder_forward(const TokenizerConfig& config, ParameterStore& store,
                       const Tensor& z) {
    if (z.shape().size() != 2 || z.shape()[0] != config.code_dim)
        throw std::runtime_error("decoder: expect input [d, l]");
    Tensor h = conv(store, "tok.dec.in", z, 1, 1);
    for (int i = 0; i < num_halvings(config.downsample_rate); ++i) {
        std::string p = "tok.dec.h" + std::to_string(i);
        h = res_block(store, p, h);
        h = gelu(convt(store, p + ".up", h, 2, 1));
        h = gelu(conv(store, p + ".conv_a", h, 1, 1));
        h = gelu(conv(store, p + ".conv_b", h, 1, 1));
    }
    return conv(store, "tok.dec.out", h, 1, 1);
}

LatentSequence encode(const MotionSequence& motion, const TokenizerConfig& config,
                      ParameterStore& store) {
    int n = motion.frames();
    int r = config.downsample_rate;
    if (n < r)
        throw std::runtime_error("encode: motion has " + std::to_string(n) +
                                 " frames, need at least " + std::to_string(r));
    int l = n / r;
    Tensor x = motion_to_tensor(motion, l * r);  // crop to floor(n/r)*r
    Tensor z = encoder_forward(config, store, x);
    LatentSequence out;
    out.length = l;
    out.code_dim = config.code_dim;
    out.source_frames = n;
    out.rate = r;
    out.vectors.resize(static_cast<size_t>(l) * config.code_dim);
    // [d, l] -> row-major [l][d]
    for (int i = 0; i < l; ++i)
        for (int d = 0; d < config.code_dim; ++d)
            out.vectors[static_cast<size_t>(i) * config.code_dim + d] =
                z.value()[static_cast<size_t>(d) * l + i];
    return out;
}

QuantizeResult quantize(const LatentSequence& latents, const Codebook& codebook) {
    if (latents.length == 0)
        throw std::runtime_error("quantize: empty latent sequence");
    if (latents.code_dim != codebook.code_dim)
        throw std::runtime_error("quantize: code_dim mismatch");
    QuantizeResult res;
    res.tokens.codebook_size = codebook.size;
    res.tokens.rate = latents.rate;
    res.quantized = latents;
    double commit = 0.0;
    int d = latents.code_dim;
    for (int i = 0; i < latents.length; ++i) {
        const float* z = latents.vectors.data() + static_cast<size_t>(i) * d;
        int best = 0;
        float best_dist = 0.0f;
        for (int k = 0; k < codebook.size; ++k) {
            const float* c = codebook.code(k);
            float dist = 0.0f;
            for (int j = 0; j < d; ++j) {
                float diff = z[j] - c[j];
                dist += diff * diff;
            }
            if (k == 0 || dist < best_dist) {  // strict <: ties keep lowest index
                best_dist = dist;
                best = k;
            }
        }
        res.tokens.ids.push_back(best);
        std::memcpy(res.quantized.vectors.data() + static_cast<size_t>(i) * d,
                    codebook.code(best), static_cast<size_t>(d) * 4);
        commit += best_dist;
    }
    res.commitment_loss = static_cast<float>(
        0.25 * commit / (static_cast<double>(latents.length) * d));
    return res;
}

MotionSequence decode_base(const TokenSequence& tokens, const Codebook& codebook,
                           const TokenizerConfig& config, ParameterStore& store,
                           double frame_rate_hz) {
    if (tokens.ids.empty())
        throw std::runtime_error("decode_base: empty token sequence");
    int l = static_cast<int>(tokens.ids.size());
    int d = config.code_dim;
    std::vector<float> buf(static_cast<size_t>(d) * l);
    for (int i = 0; i < l; ++i) {
        int id = tokens.ids[i];
        if (id < 0 || id >= codebook.size)
            throw std::runtime_error("decode_base: token id " +
                                     std::to_string(id) + " out of range [0," +
                                     std::to_string(codebook.size) + ")");
        for (int j = 0; j < d; ++j)
            buf[static_cast<size_t>(j) * l + i] = codebook.code(id)[j];
    }
    Tensor z = Tensor::from_data({d, l}, std::move(buf));
    Tensor y = decoder_forward(config, store, z);
    return tensor_to_motion(y, frame_rate_hz);
}

MotionSequence reconstruct(const MotionSequence& normalized_motion,
                           const TokenizerConfig& config, ParameterStore& store,
                           const Codebook& codebook) {
    LatentSequence z = encode(normalized_motion, config, store);
    QuantizeResult q = quantize(z, codebook);
    return decode_base(q.tokens, codebook, config, store,
                       normalized_motion.frame_rate_hz);
}

void codebook_update(Codebook& codebook, const std::vector<float>& latents,
                     const std::vector<int>& assignments, RngState& rng) {
    constexpr float decay = 0.99f;
    constexpr int64_t dead_after = 256;
    int d = codebook.code_dim;
    int count = static_cast<int>(assignments.size());
    if (latents.size() != static_cast<size_t>(count) * d)
        throw std::runtime_error("codebook_update: latents/assignments mismatch");
    ++codebook.step;

    std::vector<float> batch_counts(codebook.size, 0.0f);
    std::vector<float> batch_sums(static_cast<size_t>(codebook.size) * d, 0.0f);
    for (int i = 0; i < count; ++i) {
        int k = assignments[i];
        batch_counts[k] += 1.0f;
        const float* z = latents.data() + static_cast<size_t>(i) * d;
        float* s = batch_sums.data() + static_cast<size_t>(k) * d;
        for (int j = 0; j < d; ++j) s[j] += z[j];
    }
    for (int k = 0; k < codebook.size; ++k) {
        codebook.ema_counts[k] =
            decay * codebook.ema_counts[k] + (1.0f - decay) * batch_counts[k];
        float* s = codebook.ema_sums.data() + static_cast<size_t>(k) * d;
        const float* b = batch_sums.data() + static_cast<size_t>(k) * d;
        for (int j = 0; j < d; ++j)
            s[j] = decay * s[j] + (1.0f - decay) * b[j];
        if (batch_counts[k] > 0.0f) codebook.last_used_step[k] = codebook.step;

        if (codebook.step - codebook.last_used_step[k] >= dead_after &&
            count > 0) {
            // dead code: restart from a random latent of this batch
            int pick = static_cast<int>(rng.uniform_int(0, count - 1));
            const float* z = latents.data() + static_cast<size_t>(pick) * d;
            float* c = codebook.codes.data() + static_cast<size_t>(k) * d;
            for (int j = 0; j < d; ++j) {
                c[j] = z[j];
                s[j] = (1.0f - decay) * z[j];
            }
            codebook.ema_counts[k] = 1.0f - decay;
            codebook.last_used_step[k] = codebook.step;
            continue;
        }
        float denom = std::max(codebook.ema_counts[k], 1e-5f);
        float* c = codebook.codes.data() + static_cast<size_t>(k) * d;
        for (int j = 0; j < d; ++j) c[j] = s[j] / denom;
    }
}

CodebookUsage codebook_utilization(const std::vector<int>& token_stream, int K) {
    if (token_stream.empty())
        throw std::runtime_error("codebook_utilization: empty stream");
    std::vector<int64_t> counts(K, 0);
    for (int id : token_stream) {
        if (id < 0 || id >= K)
            throw std::runtime_error("codebook_utilization: id out of range");
        ++counts[id];
    }
    int used = 0;
    double entropy = 0.0;
    double total = static_cast<double>(token_stream.size());
    for (int k = 0; k < K; ++k) {
        if (counts[k] == 0) continue;
        ++used;
        double p = counts[k] / total;
        entropy -= p * std::log(p);
    }
    return {static_cast<double>(used) / K, std::exp(entropy)};
}

namespace {

double mean_frame_error(const MotionSequence& a, const MotionSequence& b) {
    int n = std::min(a.frames(), b.frames());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int d = 0; d < a.d_m; ++d) {
            double diff = a.at(i, d) - b.at(i, d);
            s += diff * diff;
        }
        total += std::sqrt(s);
    }
    return total / n;
}

MotionSequence sample_clip(const MotionSequence& m, int clip_frames,
                           RngState& rng) {
    MotionSequence clip;
    clip.d_m = m.d_m;
    clip.frame_rate_hz = m.frame_rate_hz;
    clip.data.reserve(static_cast<size_t>(clip_frames) * m.d_m);
    int n = m.frames();
    int start = n > clip_frames
                    ? static_cast<int>(rng.uniform_int(0, n - clip_frames))
                    : 0;
    for (int i = 0; i < clip_frames; ++i) {
        int src = std::min(start + i, n - 1);  // repeat last frame when short
        for (int d = 0; d < m.d_m; ++d) clip.data.push_back(m.at(src, d));
    }
    return clip;
}

}  // namespace

TokenizerTrainReport train_tokenizer(
    const std::vector<MotionSequence>& train_motions,
    const std::vector<MotionSequence>& valid_motions,
    const TokenizerConfig& config, ParameterStore& store, Codebook& codebook,
    const TokenizerTrainOptions& options, RngState& rng) {
    config.validate();
    if (train_motions.empty())
        throw std::runtime_error("train_tokenizer: empty training set");

    auto valid_error = [&]() {
        if (valid_motions.empty()) return 0.0;
        double total = 0.0;
        for (const auto& m : valid_motions)
            total += mean_frame_error(reconstruct(m, config, store, codebook), m);
        return total / valid_motions.size();
    };

    TokenizerTrainReport report;
    report.initial_valid_error = valid_error();

    int64_t global_step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        // shuffled order, derived from the epoch so reruns match
        std::vector<int> order(train_motions.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(rng.uniform_int(0, i - 1))]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t pos = 0; pos < order.size(); pos += options.batch_size) {
            size_t batch_end = std::min(pos + options.batch_size, order.size());
            store.zero_grad();
            Tensor total_loss = Tensor::scalar(0.0f);
            std::vector<float> batch_latents;
            std::vector<int> batch_assignments;
            for (size_t bi = pos; bi < batch_end; ++bi) {
                MotionSequence clip = sample_clip(train_motions[order[bi]],
                                                  options.clip_frames, rng);
                Tensor x = motion_to_tensor(clip, clip.frames());
                Tensor z = encoder_forward(config, store, x);
                int l = z.shape()[1];
                // graph latent layout is [d, l]; quantizer wants [l][d]
                LatentSequence lat;
                lat.length = l;
                lat.code_dim = config.code_dim;
                lat.source_frames = clip.frames();
                lat.rate = config.downsample_rate;
                lat.vectors.resize(static_cast<size_t>(l) * config.code_dim);
                for (int i = 0; i < l; ++i)
                    for (int d = 0; d < config.code_dim; ++d)
                        lat.vectors[static_cast<size_t>(i) * config.code_dim + d] =
                            z.value()[static_cast<size_t>(d) * l + i];
                QuantizeResult q = quantize(lat, codebook);
                batch_latents.insert(batch_latents.end(), lat.vectors.begin(),
                                     lat.vectors.end());
                batch_assignments.insert(batch_assignments.end(),
                                         q.tokens.ids.begin(),
                                         q.tokens.ids.end());
                // selected codes back to [d, l] for the decoder path
                std::vector<float> code_values(z.size());
                for (int i = 0; i < l; ++i)
                    for (int d = 0; d < config.code_dim; ++d)
                        code_values[static_cast<size_t>(d) * l + i] =
                            q.quantized
                                .vectors[static_cast<size_t>(i) * config.code_dim +
                                         d];
                Tensor zq = straight_through(z, code_values);
                Tensor recon = decoder_forward(config, store, zq);
                Tensor codes_const =
                    Tensor::from_data(z.shape(), std::move(code_values));
                Tensor loss = smooth_l1_loss(recon, x);
                loss = add(loss, scale(mse_loss(time_diff(recon), time_diff(x)),
                                       0.5f));
                loss = add(loss, scale(mse_loss(z, codes_const), 0.25f));
                total_loss = add(total_loss, loss);
            }
            total_loss = scale(total_loss,
                               1.0f / static_cast<float>(batch_end - pos));
            float loss_value = total_loss.item();
            if (!std::isfinite(loss_value))
                throw std::runtime_error(
                    "train_tokenizer: loss diverged (non-finite) at step " +
                    std::to_string(global_step));
            backward(total_loss);
            codebook_update(codebook, batch_latents, batch_assignments, rng);
            store.adam_step(warmup_lr(options.learning_rate, global_step,
                                      options.warmup_steps));
            ++global_step;
            epoch_loss += loss_value;
            ++batches;
        }
        report.epoch_loss.push_back(epoch_loss / std::max(batches, 1));
        report.epoch_valid_error.push_back(valid_error());
    }
    report.final_valid_error =
        report.epoch_valid_error.empty() ? report.initial_valid_error
                                         : report.epoch_valid_error.back();

    // usage measured over the full training token stream
    std::vector<int> stream;
    for (const auto& m : train_motions) {
        QuantizeResult q = quantize(encode(m, config, store), codebook);
        stream.insert(stream.end(), q.tokens.ids.begin(), q.tokens.ids.end());
    }
    report.usage = codebook_utilization(stream, config.codebook_size);
    return report;
}

void save_tokens(const std::string& path, const TokenSequence& tokens) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write token file: " + path);
    auto w32 = [&](uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
        out.write(b, 4);
    };
    w32(static_cast<uint32_t>(tokens.codebook_size));
    w32(static_cast<uint32_t>(tokens.rate));
    for (int id : tokens.ids) w32(static_cast<uint32_t>(id));
}

TokenSequence load_tokens(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open token file: " + path);
    std::vector<uint8_t> buf(std::istreambuf_iterator<char>(in), {});
    if (buf.size() < 8 || buf.size() % 4 != 0)
        throw std::runtime_error("token file parse error: bad size");
    auto r32 = [&](size_t off) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + i]) << (8 * i);
        return v;
    };
    TokenSequence t;
    t.codebook_size = static_cast<int>(r32(0));
    t.rate = static_cast<int>(r32(4));
    for (size_t off = 8; off < buf.size(); off += 4)
        t.ids.push_back(static_cast<int>(r32(off)));
    return t;
}

ArrayMap codebook_to_arrays(const Codebook& codebook) {
    ArrayMap m;
    m["codebook.codes"] = {{codebook.size, codebook.code_dim}, codebook.codes};
    m["codebook.ema_counts"] = {{codebook.size}, codebook.ema_counts};
    m["codebook.ema_sums"] = {{codebook.size, codebook.code_dim},
                              codebook.ema_sums};
    std::vector<float> last(codebook.last_used_step.begin(),
                            codebook.last_used_step.end());
    m["codebook.last_used_step"] = {{codebook.size}, std::move(last)};
    m["codebook.step"] = {{1}, {static_cast<float>(codebook.step)}};
    return m;
}

Codebook codebook_from_arrays(const ArrayMap& arrays) {
    Codebook cb;
    const NamedArray& codes = arrays.at("codebook.codes");
    cb.size = codes.shape.at(0);
    cb.code_dim = codes.shape.at(1);
    cb.codes = codes.data;
    cb.ema_counts = arrays.at("codebook.ema_counts").data;
    cb.ema_sums = arrays.at("codebook.ema_sums").data;
    const auto& last = arrays.at("codebook.last_used_step").data;
    cb.last_used_step.assign(last.begin(), last.end());
    cb.step = static_cast<int64_t>(arrays.at("codebook.step").data.at(0));
    return cb;
}

}  // namespace motionplan
