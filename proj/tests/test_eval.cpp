#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "motionplan/eval.hpp"

using namespace motionplan;

TEST_CASE("reconstruction error of a sequence against itself is zero") {
    MotionSequence m = synthesize_motion(
        SegmentScript::from_string("1:40,3:36"), 5);
    CHECK(reconstruction_error(m, m) == doctest::Approx(0.0));
}

TEST_CASE("reconstruction error of a constant offset is its norm") {
    MotionSequence a, b;
    a.d_m = b.d_m = 4;
    a.data.assign(10 * 4, 0.0f);
    b.data.assign(10 * 4, 1.0f);
    // per-frame difference vector is (1,1,1,1), norm 2
    CHECK(reconstruction_error(a, b) == doctest::Approx(2.0));
}

TEST_CASE("reconstruction error compares over the shorter length") {
    MotionSequence a, b;
    a.d_m = b.d_m = 2;
    a.data.assign(4 * 2, 0.0f);
    b.data.assign(9 * 2, 0.0f);
    b.data[0] = 2.0f;  // frame 0 differs by (2,0)
    CHECK(reconstruction_error(a, b) == doctest::Approx(2.0 / 4));
}

TEST_CASE("frechet distance of identical sets is zero") {
    std::vector<std::vector<float>> set;
    RngState rng(90);
    for (int i = 0; i < 8; ++i) {
        std::vector<float> f(3);
        for (auto& v : f) v = static_cast<float>(rng.normal());
        set.push_back(f);
    }
    FrechetResult r = frechet_distance(set, set);
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("frechet distance 1-D worked example") {
    // {-1, 1} vs {-1, 3}: means 0 and 1, population variances 1 and 4,
    // FD = (0-1)^2 + 1 + 4 - 2*sqrt(4) = 2
    std::vector<std::vector<float>> a = {{-1.0f}, {1.0f}};
    std::vector<std::vector<float>> b = {{-1.0f}, {3.0f}};
    FrechetResult r = frechet_distance(a, b);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("frechet distance falls back to diagonal covariance on tiny sets") {
    std::vector<std::vector<float>> a = {{0.0f, 0.0f}, {1.0f, 1.0f}};
    std::vector<std::vector<float>> b = {{0.0f, 1.0f}, {1.0f, 0.0f}};
    FrechetResult r = frechet_distance(a, b);  // 2 samples < d+1 = 3
    CHECK(r.diagonal_fallback);
    CHECK(r.value >= 0.0);
}

TEST_CASE("diversity of two points is their distance") {
    std::vector<std::vector<float>> feats = {{0.0f, 0.0f}, {3.0f, 4.0f}};
    CHECK(diversity_score(feats) == doctest::Approx(5.0));
}

TEST_CASE("diversity of identical points is zero") {
    std::vector<std::vector<float>> feats(5, std::vector<float>{1.0f, 2.0f});
    CHECK(diversity_score(feats) == doctest::Approx(0.0));
}

TEST_CASE("segment order accuracy is exact-match only") {
    SegmentScript script = SegmentScript::from_string("1:40,4:40");
    MotionSequence m = synthesize_motion(script, 3);
    CHECK(segment_order_accuracy(m, script) == 1);
    SegmentScript wrong = SegmentScript::from_string("4:40,1:40");
    CHECK(segment_order_accuracy(m, wrong) == 0);
    SegmentScript partial = SegmentScript::from_string("1:40");
    CHECK(segment_order_accuracy(m, partial) == 0);
}

TEST_CASE("seam smoothness flags a discontinuity at a clip boundary") {
    MotionSequence m;
    m.d_m = 2;
    m.data.assign(128 * 2, 0.0f);
    // gentle ramp everywhere, with a jump entering frame 64
    for (int t = 0; t < 128; ++t)
        for (int d = 0; d < 2; ++d)
            m.at(t, d) = 0.01f * t + (t >= 64 ? 5.0f : 0.0f);
    CHECK(seam_smoothness(m, 64) > 2.0);

    MotionSequence smooth;
    smooth.d_m = 2;
    smooth.data.assign(128 * 2, 0.0f);
    for (int t = 0; t < 128; ++t)
        for (int d = 0; d < 2; ++d) smooth.at(t, d) = 0.01f * t;
    CHECK(seam_smoothness(smooth, 64) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("seam smoothness of a constant signal is 1") {
    MotionSequence m;
    m.d_m = 3;
    m.data.assign(100 * 3, 2.0f);
    CHECK(seam_smoothness(m, 64) == doctest::Approx(1.0));
}

TEST_CASE("seam smoothness with no interior boundary is 1") {
    MotionSequence m;
    m.d_m = 2;
    m.data.assign(30 * 2, 0.5f);
    CHECK(seam_smoothness(m, 64) == doctest::Approx(1.0));
}

TEST_CASE("timing report computes mean, median and p95") {
    std::map<std::string, std::vector<double>> times;
    times["stage"] = {};
    for (int i = 1; i <= 100; ++i) times["stage"].push_back(i);
    auto report = timing_report(times);
    REQUIRE(report.count("stage") == 1);
    CHECK(report["stage"].count == 100);
    CHECK(report["stage"].mean_ms == doctest::Approx(50.5));
    CHECK(report["stage"].median_ms == doctest::Approx(50.5));
    CHECK(report["stage"].p95_ms == doctest::Approx(95.0));

    std::map<std::string, std::vector<double>> single;
    single["s"] = {7.0};
    auto r1 = timing_report(single);
    CHECK(r1["s"].mean_ms == doctest::Approx(7.0));
    CHECK(r1["s"].median_ms == doctest::Approx(7.0));
    CHECK(r1["s"].p95_ms == doctest::Approx(7.0));
}

TEST_CASE("metrics CSV round trip") {
    std::vector<MetricRow> rows = {
        {"loss", 0.125, "train", "abc123"},
        {"accuracy", 0.75, "test", "abc123"},
    };
    std::string path = "./metrics_test.csv";
    write_metrics_csv(path, rows);
    auto back = read_metrics_csv(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].metric == "loss");
    CHECK(back[0].value == doctest::Approx(0.125));
    CHECK(back[0].split == "train");
    CHECK(back[1].metric == "accuracy");
    CHECK(back[1].config_hash == "abc123");
    std::remove(path.c_str());
}

TEST_CASE("metrics CSV writes are byte-deterministic") {
    std::vector<MetricRow> rows = {{"m", 1.0 / 3.0, "valid", "ffff"}};
    write_metrics_csv("./metrics_a.csv", rows);
    write_metrics_csv("./metrics_b.csv", rows);
    std::ifstream fa("./metrics_a.csv"), fb("./metrics_b.csv");
    std::string sa((std::istreambuf_iterator<char>(fa)), {});
    std::string sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
    CHECK(sa.rfind("metric,value,split,config_hash", 0) == 0);
    std::remove("./metrics_a.csv");
    std::remove("./metrics_b.csv");
}

TEST_CASE("svg plot emits a well-formed document") {
    std::string path = "./plot_test.svg";
    write_svg_plot(path, "loss", {1, 2, 3}, {0.5, 0.25, 0.125});
    std::ifstream f(path);
    std::string body((std::istreambuf_iterator<char>(f)), {});
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("</svg>") != std::string::npos);
    CHECK(body.find("loss") != std::string::npos);
    std::remove(path.c_str());
}

TEST_CASE("extract_feature is deterministic and has code_dim entries") {
    TokenizerConfig cfg;
    cfg.downsample_rate = 2;
    cfg.codebook_size = 16;
    cfg.channels = 16;
    cfg.code_dim = 8;
    RngState rng(95);
    ParameterStore store;
    init_tokenizer_params(cfg, store, rng);
    MotionSequence m = synthesize_motion(
        SegmentScript::from_string("0:40,2:36"), 11);
    auto f1 = extract_feature(m, cfg, store);
    auto f2 = extract_feature(m, cfg, store);
    CHECK(f1.size() == static_cast<size_t>(cfg.code_dim));
    CHECK(f1 == f2);
}
