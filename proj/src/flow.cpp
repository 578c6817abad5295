#include "motionplan/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace motionplan {

void FlowSchedule::throw_invalid() {
    throw std::runtime_error("flow schedule: num_steps must be >= 1");
}

PathPoint sample_path_point(const FlowPair& pair, float t) {
    if (pair.y0.size() != pair.y1.size())
        throw std::runtime_error("sample_path_point: clip shape mismatch");
    if (t < 0.0f || t > 1.0f)
        throw std::runtime_error("sample_path_point: t outside [0,1]");
    PathPoint p;
    p.y_t.resize(pair.y0.size());
    p.target_u.resize(pair.y0.size());
    for (size_t i = 0; i < pair.y0.size(); ++i) {
        p.target_u[i] = pair.y1[i] - pair.y0[i];
        // endpoints bit-exact
        p.y_t[i] = t == 0.0f ? pair.y0[i]
                 : t == 1.0f ? pair.y1[i]
                             : (1.0f - t) * pair.y0[i] + t * pair.y1[i];
    }
    return p;
}

namespace {

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

void init_linear(ParameterStore& store, const std::string& name, int in, int out,
                 RngState& rng) {
    store.create_weight(name + ".weight", {in, out}, in, rng);
    store.create_bias(name + ".bias", out);
}

Tensor conv(ParameterStore& store, const std::string& name, const Tensor& x,
            int stride = 1, int padding = 1) {
    return conv1d(x, store.get(name + ".weight"), store.get(name + ".bias"),
                  stride, padding);
}

Tensor convt(ParameterStore& store, const std::string& name, const Tensor& x) {
    return conv_transpose1d(x, store.get(name + ".weight"),
                            store.get(name + ".bias"), 2, 1);
}

Tensor gn(ParameterStore& store, const std::string& name, const Tensor& x,
          int groups) {
    return group_norm(x, store.get(name + ".gain"), store.get(name + ".bias"),
                      groups);
}

Tensor lin(ParameterStore& store, const std::string& name, const Tensor& x) {
    return linear(x, store.get(name + ".weight"), store.get(name + ".bias"));
}

// sinusoidal embedding of the scalar time, passed through a two-layer stem
Tensor time_embedding(const FlowConfig& config, ParameterStore& store, float t) {
    int dim = config.time_embed_dim;
    int half = dim / 2;
    std::vector<float> emb(static_cast<size_t>(dim), 0.0f);
    for (int j = 0; j < half; ++j) {
        double freq = std::exp(-std::log(10000.0) * j / (half - 1));
        double angle = static_cast<double>(t) * 1000.0 * freq;
        emb[j] = static_cast<float>(std::sin(angle));
        emb[half + j] = static_cast<float>(std::cos(angle));
    }
    Tensor e = Tensor::from_data({1, dim}, std::move(emb));
    e = gelu(lin(store, "flow.temb.l1", e));
    return lin(store, "flow.temb.l2", e);  // [1, dim]
}

Tensor block(const FlowConfig& config, ParameterStore& store,
             const std::string& name, const Tensor& x, const Tensor& temb,
             int cin_unused, int cout) {
    (void)cin_unused;
    Tensor h = conv(store, name + ".conv_a", gelu(gn(store, name + ".gn_a", x,
                                                     config.norm_groups)));
    Tensor tb = reshape(lin(store, name + ".tproj", temb), {cout});
    h = add_channel_bias(h, tb);
    h = conv(store, name + ".conv_b",
             gelu(gn(store, name + ".gn_b", h, config.norm_groups)));
    return h;
}

void init_block(const FlowConfig& config, ParameterStore& store,
                const std::string& name, int cin, int cout, RngState& rng) {
    store.create_norm(name + ".gn_a", cin);
    init_conv(store, name + ".conv_a", cin, cout, 3, rng);
    init_linear(store, name + ".tproj", config.time_embed_dim, cout, rng);
    store.create_norm(name + ".gn_b", cout);
    init_conv(store, name + ".conv_b", cout, cout, 3, rng);
}

}  // namespace

void init_flow_params(const FlowConfig& config, ParameterStore& store,
                      RngState& rng) {
    init_linear(store, "flow.temb.l1", config.time_embed_dim,
                config.time_embed_dim, rng);
    init_linear(store, "flow.temb.l2", config.time_embed_dim,
                config.time_embed_dim, rng);
    int c0 = config.level_channels(0);
    init_conv(store, "flow.in", config.d_m, c0, 3, rng);
    int prev = c0;
    for (int i = 0; i < config.levels; ++i) {
        int c = config.level_channels(i);
        std::string p = "flow.down" + std::to_string(i);
        init_block(config, store, p, prev, c, rng);
        init_conv(store, p + ".down", c, c, 4, rng);
        prev = c;
    }
    init_block(config, store, "flow.mid", prev, prev, rng);
    for (int i = config.levels - 1; i >= 0; --i) {
        int c = config.level_channels(i);
        std::string p = "flow.up" + std::to_string(i);
        init_convt(store, p + ".up", prev, c, 4, rng);
        init_block(config, store, p, 2 * c, c, rng);
        prev = c;
    }
    store.create_norm("flow.out_gn", prev);
    init_conv(store, "flow.out", prev, config.d_m, 3, rng);
}

Tensor flow_forward(const FlowConfig& config, ParameterStore& store,
                    const Tensor& y, float t) {
    if (y.shape().size() != 2 || y.shape()[0] != config.d_m)
        throw std::runtime_error("flow_forward: expect input [d_m, L]");
    int L = y.shape()[1];
    if (L % (1 << config.levels) != 0)
        throw std::runtime_error("flow_forward: clip length must be divisible "
                                 "by 2^levels");
    Tensor temb = time_embedding(config, store, t);
    Tensor h = conv(store, "flow.in", y);
    std::vector<Tensor> skips;
    int prev = config.level_channels(0);
    for (int i = 0; i < config.levels; ++i) {
        int c = config.level_channels(i);
        std::string p = "flow.down" + std::to_string(i);
        h = block(config, store, p, h, temb, prev, c);
        skips.push_back(h);
        h = conv(store, p + ".down", h, 2, 1);
        prev = c;
    }
    h = block(config, store, "flow.mid", h, temb, prev, prev);
    for (int i = config.levels - 1; i >= 0; --i) {
        int c = config.level_channels(i);
        std::string p = "flow.up" + std::to_string(i);
        h = convt(store, p + ".up", h);
        h = concat_axis0(h, skips[static_cast<size_t>(i)]);
        h = block(config, store, p, h, temb, 2 * c, c);
        prev = c;
    }
    h = gelu(gn(store, "flow.out_gn", h, config.norm_groups));
    return conv(store, "flow.out", h);
}

namespace {

// clip [frames][d_m] row-major -> tensor [d_m, frames]
Tensor clip_to_tensor(const std::vector<float>& clip, int d_m, int frames) {
    std::vector<float> buf(clip.size());
    for (int i = 0; i < frames; ++i)
        for (int c = 0; c < d_m; ++c)
            buf[static_cast<size_t>(c) * frames + i] =
                clip[static_cast<size_t>(i) * d_m + c];
    return Tensor::from_data({d_m, frames}, std::move(buf));
}

std::vector<float> tensor_to_clip(const Tensor& t) {
    int d_m = t.shape()[0], frames = t.shape()[1];
    std::vector<float> clip(t.value().size());
    for (int i = 0; i < frames; ++i)
        for (int c = 0; c < d_m; ++c)
            clip[static_cast<size_t>(i) * d_m + c] =
                t.value()[static_cast<size_t>(c) * frames + i];
    return clip;
}

}  // namespace

Tensor cfm_loss(const std::vector<FlowPair>& batch, const FlowConfig& config,
                ParameterStore& store, RngState& rng) {
    if (batch.empty()) throw std::runtime_error("cfm_loss: empty batch");
    Tensor total = Tensor::scalar(0.0f);
    for (const FlowPair& pair : batch) {
        float t = static_cast<float>(rng.uniform());
        PathPoint p = sample_path_point(pair, t);
        Tensor y_t = clip_to_tensor(p.y_t, config.d_m, config.clip_frames);
        Tensor u = clip_to_tensor(p.target_u, config.d_m, config.clip_frames);
        Tensor pred = flow_forward(config, store, y_t, t);
        for (float v : pred.value())
            if (!std::isfinite(v))
                throw std::runtime_error("cfm_loss: non-finite model output");
        total = add(total, mse_loss(pred, u));
    }
    return scale(total, 1.0f / static_cast<float>(batch.size()));
}

std::vector<double> integrate_field(const std::vector<double>& y0,
                                    const FlowSchedule& schedule,
                                    const FieldFn& field) {
    std::vector<double> y = y0;
    int T = schedule.num_steps;
    double dt = 1.0 / T;
    for (int i = 0; i < T; ++i) {
        double t = static_cast<double>(i) / T;
        std::vector<double> f = field(y, t);
        if (f.size() != y.size())
            throw std::runtime_error("integrate_field: field size mismatch");
        for (size_t j = 0; j < y.size(); ++j) {
            y[j] += f[j] * dt;
            if (!std::isfinite(y[j]))
                throw std::runtime_error(
                    "integrate_field: non-finite state at step " +
                    std::to_string(i));
        }
    }
    return y;
}

std::vector<float> integrate(const std::vector<float>& y0_clip,
                             const FlowConfig& config, ParameterStore& store,
                             const FlowSchedule& schedule) {
    if (y0_clip.size() !=
        static_cast<size_t>(config.clip_frames) * config.d_m)
        throw std::runtime_error("integrate: clip size mismatch");
    std::vector<double> y0(y0_clip.begin(), y0_clip.end());
    auto model_field = [&](const std::vector<double>& y, double t) {
        std::vector<float> yf(y.begin(), y.end());
        Tensor field = flow_forward(
            config, store, clip_to_tensor(yf, config.d_m, config.clip_frames),
            static_cast<float>(t));
        std::vector<float> f = tensor_to_clip(field);
        return std::vector<double>(f.begin(), f.end());
    };
    std::vector<double> y = integrate_field(y0, schedule, model_field);
    return std::vector<float>(y.begin(), y.end());
}

MotionSequence refine(const MotionSequence& y0, const FlowConfig& config,
                      ParameterStore& store, const FlowSchedule& schedule) {
    int n = y0.frames();
    if (n < 1) throw std::runtime_error("refine: empty motion");
    MotionSequence out = y0;
    int clip = config.clip_frames;
    for (int start = 0; start < n; start += clip) {
        int count = std::min(clip, n - start);
        std::vector<float> buf(static_cast<size_t>(clip) * config.d_m);
        for (int i = 0; i < clip; ++i) {
            int src = std::min(start + i, n - 1);  // pad by repeating last frame
            for (int c = 0; c < config.d_m; ++c)
                buf[static_cast<size_t>(i) * config.d_m + c] = y0.at(src, c);
        }
        std::vector<float> refined = integrate(buf, config, store, schedule);
        for (int i = 0; i < count; ++i)
            for (int c = 0; c < config.d_m; ++c)
                out.at(start + i, c) =
                    refined[static_cast<size_t>(i) * config.d_m + c];
    }
    return out;
}

std::vector<FlowPair> build_flow_pairs(const MotionSequence& normalized_motion,
                                       const TokenizerConfig& tok_config,
                                       ParameterStore& tok_store,
                                       const Codebook& codebook,
                                       int clip_frames) {
    MotionSequence y0 =
        reconstruct(normalized_motion, tok_config, tok_store, codebook);
    int n = y0.frames();  // l * r, <= ground-truth length
    std::vector<FlowPair> pairs;
    for (int start = 0; start < n; start += clip_frames) {
        FlowPair pair;
        pair.y0.resize(static_cast<size_t>(clip_frames) * y0.d_m);
        pair.y1.resize(pair.y0.size());
        for (int i = 0; i < clip_frames; ++i) {
            int src = std::min(start + i, n - 1);
            for (int c = 0; c < y0.d_m; ++c) {
                pair.y0[static_cast<size_t>(i) * y0.d_m + c] = y0.at(src, c);
                pair.y1[static_cast<size_t>(i) * y0.d_m + c] =
                    normalized_motion.at(src, c);
            }
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
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

}  // namespace

FlowTrainReport train_flow(const std::vector<MotionSequence>& train_motions,
                           const std::vector<MotionSequence>& holdout_motions,
                           const TokenizerConfig& tok_config,
                           ParameterStore& tok_store, const Codebook& codebook,
                           const FlowConfig& config, ParameterStore& store,
                           const FlowTrainOptions& options, RngState& rng) {
    std::vector<FlowPair> pairs;
    for (const auto& m : train_motions) {
        auto p = build_flow_pairs(m, tok_config, tok_store, codebook,
                                  config.clip_frames);
        pairs.insert(pairs.end(), p.begin(), p.end());
    }
    if (pairs.empty()) throw std::runtime_error("train_flow: no training pairs");

    FlowTrainReport report;
    {
        std::vector<FlowPair> probe(
            pairs.begin(),
            pairs.begin() + std::min<size_t>(pairs.size(), 8));
        RngState probe_rng = rng.split(17);
        report.initial_loss = cfm_loss(probe, config, store, probe_rng).item();
    }

    int64_t global_step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::vector<int> order(pairs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<size_t>(rng.uniform_int(0, i - 1))]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t pos = 0; pos < order.size(); pos += options.batch_size) {
            size_t end = std::min(pos + options.batch_size, order.size());
            std::vector<FlowPair> batch;
            for (size_t i = pos; i < end; ++i)
                batch.push_back(pairs[static_cast<size_t>(order[i])]);
            store.zero_grad();
            Tensor loss = cfm_loss(batch, config, store, rng);
            float lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error(
                    "train_flow: loss diverged at step " +
                    std::to_string(global_step));
            backward(loss);
            store.adam_step(warmup_lr(options.learning_rate, global_step,
                                      options.warmup_steps));
            ++global_step;
            epoch_loss += lv;
            ++batches;
        }
        report.epoch_loss.push_back(epoch_loss / std::max(batches, 1));
    }

    if (!holdout_motions.empty()) {
        FlowSchedule schedule(options.eval_steps);
        double coarse = 0.0, refined = 0.0;
        int improved = 0;
        for (const auto& m : holdout_motions) {
            MotionSequence y0 = reconstruct(m, tok_config, tok_store, codebook);
            MotionSequence yr = refine(y0, config, store, schedule);
            double ec = mean_frame_error(y0, m);
            double er = mean_frame_error(yr, m);
            coarse += ec;
            refined += er;
            if (er < ec) ++improved;
        }
        report.holdout_coarse_error = coarse / holdout_motions.size();
        report.holdout_refined_error = refined / holdout_motions.size();
        report.improved_fraction =
            static_cast<double>(improved) / holdout_motions.size();
    }
    return report;
}

}  // namespace motionplan
