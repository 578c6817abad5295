#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "motionplan/flow.hpp"

using namespace motionplan;

namespace {

FlowConfig tiny_flow_config() {
    FlowConfig cfg;
    cfg.base_channels = 8;
    cfg.max_channels = 16;
    cfg.levels = 2;
    cfg.norm_groups = 4;
    cfg.time_embed_dim = 16;
    return cfg;
}

}  // namespace

TEST_CASE("path point endpoints are bit-exact") {
    FlowPair pair;
    pair.y0 = {1.0f, -2.0f, 0.5f};
    pair.y1 = {4.0f, 0.0f, -1.5f};
    PathPoint p0 = sample_path_point(pair, 0.0f);
    CHECK(p0.y_t == pair.y0);
    PathPoint p1 = sample_path_point(pair, 1.0f);
    CHECK(p1.y_t == pair.y1);
    for (size_t i = 0; i < pair.y0.size(); ++i) {
        CHECK(p0.target_u[i] == pair.y1[i] - pair.y0[i]);
        CHECK(p1.target_u[i] == pair.y1[i] - pair.y0[i]);
    }
}

TEST_CASE("path point scalar example: y0=0, y1=2, t=0.25") {
    FlowPair pair;
    pair.y0 = {0.0f};
    pair.y1 = {2.0f};
    PathPoint p = sample_path_point(pair, 0.25f);
    CHECK(p.y_t[0] == doctest::Approx(0.5f));
    CHECK(p.target_u[0] == doctest::Approx(2.0f));
}

TEST_CASE("Euler with a constant field lands on y0 + c") {
    std::vector<double> y0 = {1.0, -3.0, 0.25};
    std::vector<double> c = {2.0, 0.5, -1.0};
    for (int T : {1, 7, 30}) {
        auto out = integrate_field(
            y0, FlowSchedule(T),
            [&](const std::vector<double>&, double) { return c; });
        for (size_t i = 0; i < y0.size(); ++i)
            CHECK(out[i] == doctest::Approx(y0[i] + c[i]).epsilon(1e-12));
    }
}

TEST_CASE("Euler with the zero field is the identity") {
    std::vector<double> y0 = {0.125, -7.5};
    auto out = integrate_field(
        y0, FlowSchedule(13), [](const std::vector<double>& y, double) {
            return std::vector<double>(y.size(), 0.0);
        });
    CHECK(out == y0);
}

TEST_CASE("Euler with F = y compounds to (1 + 1/T)^T") {
    std::vector<double> y0 = {1.0, -2.0};
    for (int T : {1, 5, 30, 50}) {
        auto out = integrate_field(
            y0, FlowSchedule(T),
            [](const std::vector<double>& y, double) { return y; });
        double factor = std::pow(1.0 + 1.0 / T, T);
        for (size_t i = 0; i < y0.size(); ++i)
            CHECK(std::fabs(out[i] - y0[i] * factor) < 1e-9);
    }
}

TEST_CASE("integrate_field rejects mismatched field output") {
    std::vector<double> y0 = {1.0, 2.0};
    CHECK_THROWS(integrate_field(
        y0, FlowSchedule(2), [](const std::vector<double>&, double) {
            return std::vector<double>{1.0};
        }));
}

TEST_CASE("schedule rejects non-positive step counts") {
    CHECK_THROWS(FlowSchedule(0));
    CHECK_THROWS(FlowSchedule(-3));
}

TEST_CASE("refine preserves length for 64, 130 and 1 input frames") {
    FlowConfig cfg = tiny_flow_config();
    RngState rng(61);
    ParameterStore store;
    init_flow_params(cfg, store, rng);
    for (int n : {64, 130, 1}) {
        MotionSequence m;
        m.d_m = cfg.d_m;
        m.data.resize(static_cast<size_t>(n) * cfg.d_m);
        RngState data_rng(n);
        for (auto& v : m.data) v = static_cast<float>(data_rng.normal());
        MotionSequence out = refine(m, cfg, store, FlowSchedule(3));
        CHECK(out.frames() == n);
        CHECK(out.d_m == cfg.d_m);
        for (float v : out.data) CHECK(std::isfinite(v));
    }
}

TEST_CASE("refine with a zeroed output head is the exact identity") {
    FlowConfig cfg = tiny_flow_config();
    RngState rng(62);
    ParameterStore store;
    init_flow_params(cfg, store, rng);
    // with the head zeroed the field is identically zero, so any padding,
    // splitting and restitching inside refine must cancel exactly
    auto& head_w = store.get("flow.out.weight").value();
    std::fill(head_w.begin(), head_w.end(), 0.0f);
    auto& head_b = store.get("flow.out.bias").value();
    std::fill(head_b.begin(), head_b.end(), 0.0f);
    for (int n : {64, 130, 1, 97}) {
        MotionSequence m;
        m.d_m = cfg.d_m;
        m.data.resize(static_cast<size_t>(n) * cfg.d_m);
        RngState data_rng(1000 + n);
        for (auto& v : m.data) v = static_cast<float>(data_rng.normal());
        MotionSequence out = refine(m, cfg, store, FlowSchedule(5));
        CHECK(out.data == m.data);
    }
}

TEST_CASE("flow_forward output matches the input shape and is finite") {
    FlowConfig cfg = tiny_flow_config();
    RngState rng(63);
    ParameterStore store;
    init_flow_params(cfg, store, rng);
    std::vector<float> data(static_cast<size_t>(cfg.d_m) * cfg.clip_frames);
    for (auto& v : data) v = static_cast<float>(rng.normal());
    Tensor y = Tensor::from_data({cfg.d_m, cfg.clip_frames}, std::move(data));
    Tensor field = flow_forward(cfg, store, y, 0.5f);
    CHECK(field.shape() == y.shape());
    for (float v : field.value()) CHECK(std::isfinite(v));
}

TEST_CASE("build_flow_pairs aligns y1 with the cropped ground truth") {
    TokenizerConfig tok;
    tok.downsample_rate = 2;
    tok.codebook_size = 16;
    tok.channels = 16;
    tok.code_dim = 8;
    RngState rng(64);
    ParameterStore tok_store;
    init_tokenizer_params(tok, tok_store, rng);
    Codebook cb = Codebook::init(tok.codebook_size, tok.code_dim, rng);

    MotionSequence m = synthesize_motion(
        SegmentScript::from_string("2:40,5:37"), 8);  // 77 frames -> crop 76
    NormStats stats = compute_norm_stats({m});
    MotionSequence norm = normalize(m, stats);

    auto pairs = build_flow_pairs(norm, tok, tok_store, cb, 64);
    REQUIRE(pairs.size() == 2);  // 76 frames -> clips [0,64) and [64,128) padded
    size_t clip_elems = static_cast<size_t>(64) * tok.d_m;
    for (const auto& p : pairs) {
        CHECK(p.y0.size() == clip_elems);
        CHECK(p.y1.size() == clip_elems);
    }
    // first clip of y1 is the normalized motion verbatim
    for (size_t i = 0; i < clip_elems; ++i)
        CHECK(pairs[0].y1[i] == norm.data[i]);
    // padded tail of the second clip repeats frame 75
    for (int f = 76 - 64; f < 64; ++f)
        for (int d = 0; d < tok.d_m; ++d)
            CHECK(pairs[1].y1[static_cast<size_t>(f) * tok.d_m + d] ==
                  norm.data[static_cast<size_t>(75) * tok.d_m + d]);
}

TEST_CASE("cfm loss gradients pass the finite-difference check") {
    FlowConfig cfg = tiny_flow_config();
    cfg.clip_frames = 16;
    RngState rng(65);
    ParameterStore store;
    init_flow_params(cfg, store, rng);

    std::vector<FlowPair> batch(2);
    RngState data_rng(66);
    for (auto& p : batch) {
        p.y0.resize(static_cast<size_t>(cfg.clip_frames) * cfg.d_m);
        p.y1.resize(p.y0.size());
        for (auto& v : p.y0) v = 0.3f * static_cast<float>(data_rng.normal());
        for (auto& v : p.y1) v = 0.3f * static_cast<float>(data_rng.normal());
    }
    RngState check_rng(67);
    double max_rel = finite_difference_check(
        [&]() {
            RngState loss_rng(42);  // same t draw on every evaluation
            return cfm_loss(batch, cfg, store, loss_rng);
        },
        store, check_rng, 1e-2, 32);
    CHECK(max_rel <= 1e-3);
}
