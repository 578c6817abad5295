// Acceptance gate for the full pipeline: runs ten checks end to end and
// prints exactly one PASS/FAIL line per criterion. Exit code is the number
// of failures. Trained artifacts are shared across criteria where the
// configurations match, so the binary still takes a while — run it via ctest
// or directly from the build directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "motionplan/pipeline.hpp"

using namespace motionplan;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void report(int criterion, const std::string& name, bool pass,
            const std::string& detail, double seconds) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", seconds);
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << criterion << " ("
              << name << "): " << detail << " [" << buf << " s]" << std::endl;
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// criterion 1: plan sampling against an independent index filter, plus
// assemble/parse round trips

std::vector<int> index_filter(const std::vector<int>& tokens, int T, int b) {
    std::vector<int> out;
    for (int i = 1; i <= static_cast<int>(tokens.size()); ++i)
        if (i >= b && (i - b) % T == 0) out.push_back(tokens[i - 1]);
    return out;
}

void criterion_plan_codec() {
    double t0 = now_seconds();
    RngState rng(101);
    int mismatches = 0;
    for (int l = 0; l <= 64; ++l) {
        std::vector<int> tokens(l);
        for (int& t : tokens) t = static_cast<int>(rng.uniform_int(0, 511));
        for (int T : {1, 2, 4})
            for (int b = 1; b <= 4; ++b)
                if (sample_plan(tokens, T, b).token_ids !=
                    index_filter(tokens, T, b))
                    ++mismatches;
    }

    VocabularyLayout layout;
    layout.prompt_count = 8;
    layout.codebook_size = 512;
    layout.plan_intervals = {4, 2};
    int roundtrip_failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<int> prompt(
            static_cast<size_t>(rng.uniform_int(1, 3)));
        for (int& p : prompt) p = static_cast<int>(rng.uniform_int(0, 7));
        std::vector<int> motion(
            static_cast<size_t>(rng.uniform_int(1, 48)));
        for (int& t : motion) t = static_cast<int>(rng.uniform_int(0, 511));
        int offset = draw_offset(rng, layout.t_max());
        AssembledSequence seq = assemble(prompt, motion, offset, layout);
        ParseResult parsed = parse(seq.ids, layout);
        const PlanLevel* fine = parsed.hierarchy.level_with_interval(1);
        bool ok = parsed.well_formed() && parsed.prompt == prompt &&
                  fine != nullptr && fine->token_ids == motion;
        for (int T : {4, 2}) {
            const PlanLevel* lvl = parsed.hierarchy.level_with_interval(T);
            ok = ok && lvl != nullptr &&
                 lvl->token_ids == index_filter(motion, T, offset);
        }
        if (!ok) ++roundtrip_failures;
    }
    double dt = now_seconds() - t0;
    bool pass = mismatches == 0 && roundtrip_failures == 0 && dt < 10.0;
    report(1, "plan-codec exactness", pass,
           std::to_string(mismatches) + " sampling mismatches, " +
               std::to_string(roundtrip_failures) + "/1000 round-trip failures",
           dt);
}

// ---------------------------------------------------------------------------
// criterion 2: nearest-neighbor ids against a scalar brute-force argmin

void criterion_quantizer() {
    double t0 = now_seconds();
    int mismatches = 0;
    for (int K : {8, 512}) {
        RngState rng(200 + K);
        const int d = 8;
        Codebook cb = Codebook::init(K, d, rng);
        LatentSequence z;
        z.length = 10000;
        z.code_dim = d;
        z.vectors.resize(static_cast<size_t>(z.length) * d);
        for (auto& v : z.vectors) v = 0.5f * rng.normal();

        QuantizeResult q = quantize(z, cb);
        for (int i = 0; i < z.length; ++i) {
            const float* zi = z.vectors.data() + static_cast<size_t>(i) * d;
            float best = std::numeric_limits<float>::max();
            int best_k = 0;
            for (int k = 0; k < K; ++k) {
                const float* c = cb.code(k);
                float d2 = 0.0f;
                for (int j = 0; j < d; ++j) {
                    float diff = zi[j] - c[j];
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    best_k = k;
                }
            }
            if (q.tokens.ids[i] != best_k) ++mismatches;
        }
    }
    double dt = now_seconds() - t0;
    bool pass = mismatches == 0 && dt < 10.0;
    report(2, "quantizer exactness", pass,
           std::to_string(mismatches) + " mismatches over 2x10^4 vectors", dt);
}

// ---------------------------------------------------------------------------
// criterion 3: finite-difference gradient checks at init and after 100 steps

void criterion_gradients() {
    double t0 = now_seconds();
    double worst = 0.0;
    std::string worst_where;
    auto run_model = [&](const std::string& name, ParameterStore& store,
                         const std::function<Tensor()>& loss_fn) {
        RngState check_rng(300);
        double at_init = finite_difference_check(loss_fn, store, check_rng,
                                                 1e-2, 32);
        for (int step = 0; step < 100; ++step) {
            Tensor loss = loss_fn();
            backward(loss);
            store.adam_step(1e-3f);
        }
        double after = finite_difference_check(loss_fn, store, check_rng,
                                               1e-2, 32);
        double local = std::max(at_init, after);
        if (local > worst) {
            worst = local;
            worst_where = name;
        }
    };

    {
        TokenizerConfig cfg;
        cfg.downsample_rate = 2;
        cfg.codebook_size = 16;
        cfg.channels = 16;
        cfg.code_dim = 8;
        RngState rng(301);
        ParameterStore store;
        init_tokenizer_params(cfg, store, rng);
        std::vector<float> data(static_cast<size_t>(cfg.d_m) * 16);
        for (auto& v : data) v = 0.3f * rng.normal();
        run_model("tokenizer", store, [&]() {
            Tensor x = Tensor::from_data({cfg.d_m, 16}, data);
            Tensor z = encoder_forward(cfg, store, x);
            Tensor y = decoder_forward(cfg, store, z);
            return mse_loss(y, x);
        });
    }
    {
        FlowConfig cfg;
        cfg.clip_frames = 16;
        cfg.base_channels = 8;
        cfg.max_channels = 16;
        cfg.levels = 2;
        cfg.norm_groups = 4;
        cfg.time_embed_dim = 16;
        RngState rng(302);
        ParameterStore store;
        init_flow_params(cfg, store, rng);
        std::vector<FlowPair> batch(2);
        for (auto& p : batch) {
            p.y0.resize(static_cast<size_t>(cfg.clip_frames) * cfg.d_m);
            p.y1.resize(p.y0.size());
            for (auto& v : p.y0) v = 0.3f * rng.normal();
            for (auto& v : p.y1) v = 0.3f * rng.normal();
        }
        run_model("flow", store, [&]() {
            RngState loss_rng(42);
            return cfm_loss(batch, cfg, store, loss_rng);
        });
    }
    {
        GeneratorConfig cfg;
        cfg.layers = 2;
        cfg.heads = 2;
        cfg.width = 16;
        cfg.context = 64;
        cfg.dropout = 0.0f;
        cfg.vocab.prompt_count = 8;
        cfg.vocab.codebook_size = 16;
        cfg.vocab.plan_intervals = {4, 2};
        RngState rng(303);
        ParameterStore store;
        init_generator_params(cfg, store, rng);
        std::vector<int> ids = {1, 9, 12, 10, 29, 11};
        std::vector<int> inputs(ids.begin(), ids.end() - 1);
        std::vector<int> targets(ids.begin() + 1, ids.end());
        std::vector<char> mask(targets.size(), 1);
        run_model("generator", store, [&]() {
            RngState drop(0);
            Tensor logits = generator_forward(cfg, store, inputs, drop, false);
            return cross_entropy_masked(logits, targets, mask);
        });
    }

    double dt = now_seconds() - t0;
    bool pass = worst <= 1e-3 && dt < 300.0;
    report(3, "gradient validity", pass,
           "max relative error " + fmt(worst) + " (" + worst_where + ")", dt);
}

// ---------------------------------------------------------------------------
// criterion 4: Euler integrator closed forms

void criterion_integrator() {
    double t0 = now_seconds();
    double worst = 0.0;
    std::vector<double> y0 = {1.0, -2.0, 0.25};
    std::vector<double> c = {2.0, 0.5, -1.0};
    for (int T : {1, 5, 10, 30, 50}) {
        FlowSchedule schedule(T);
        auto constant = integrate_field(
            y0, schedule, [&](const std::vector<double>&, double) { return c; });
        for (size_t i = 0; i < y0.size(); ++i)
            worst = std::max(worst, std::fabs(constant[i] - (y0[i] + c[i])));

        auto zero = integrate_field(
            y0, schedule, [](const std::vector<double>& y, double) {
                return std::vector<double>(y.size(), 0.0);
            });
        for (size_t i = 0; i < y0.size(); ++i)
            worst = std::max(worst, std::fabs(zero[i] - y0[i]));

        auto linear = integrate_field(
            y0, schedule,
            [](const std::vector<double>& y, double) { return y; });
        double factor = std::pow(1.0 + 1.0 / T, T);
        for (size_t i = 0; i < y0.size(); ++i)
            worst = std::max(worst, std::fabs(linear[i] - y0[i] * factor));
    }
    double dt = now_seconds() - t0;
    bool pass = worst < 1e-9 && dt < 1.0;
    report(4, "flow integrator exactness", pass,
           "max deviation " + fmt(worst), dt);
}

// ---------------------------------------------------------------------------
// shared run configurations

fs::path work_dir() {
    fs::path p = fs::current_path() / "acceptance_work";
    fs::create_directories(p);
    return p;
}

RunConfig medium_config(const std::string& subdir) {
    RunConfig cfg;
    cfg.seed = 11;
    cfg.out_dir = (work_dir() / subdir).string();
    cfg.corpus.train_count = 100;
    cfg.corpus.valid_count = 20;
    cfg.corpus.test_count = 20;
    cfg.tokenizer.codebook_size = 512;
    cfg.tokenizer.downsample_rate = 2;
    cfg.tokenizer_train.epochs = 60;
    cfg.tokenizer_train.batch_size = 8;
    cfg.tokenizer_train.learning_rate = 1e-3f;
    cfg.flow_train.epochs = 40;
    cfg.flow_train.batch_size = 8;
    cfg.flow_train.learning_rate = 1e-3f;
    cfg.generator_train.batch_size = 8;
    cfg.generator_train.learning_rate = 1e-3f;
    return cfg;
}

std::map<std::string, double> rows_by_split(const std::vector<MetricRow>& rows,
                                            const std::string& metric) {
    std::map<std::string, double> out;
    for (const auto& row : rows)
        if (row.metric == metric) out[row.split] = row.value;
    return out;
}

// ---------------------------------------------------------------------------
// criterion 5: reconstruction error across the (r, K) grid

void criterion_granularity() {
    double t0 = now_seconds();
    RunConfig cfg = medium_config("granularity");
    // the K=4096 codebook converges slower than K=512; give every cell the
    // same longer budget so the comparison is of capacity, not optimisation
    cfg.tokenizer_train.epochs = 150;
    run_synth_data(cfg);
    auto rows = run_sweep_granularity(cfg);
    auto err = rows_by_split(rows, "recon_error");
    bool have_all = err.count("r2-k4096") && err.count("r2-k512") &&
                    err.count("r4-k512") && err.count("r4-k4096");
    double dt = now_seconds() - t0;
    bool pass = have_all && err["r2-k4096"] <= err["r4-k512"] &&
                err["r2-k4096"] <= err["r2-k512"] && dt <= 3600.0;
    std::string detail = "valid error r2-k4096=" + fmt(err["r2-k4096"]) +
                         " r2-k512=" + fmt(err["r2-k512"]) +
                         " r4-k512=" + fmt(err["r4-k512"]) +
                         " r4-k4096=" + fmt(err["r4-k4096"]);
    report(5, "granularity trend", pass, detail, dt);
}

// ---------------------------------------------------------------------------
// criterion 6: flow refinement beats the coarse reconstruction

RunConfig g_flow_config;  // shared with criterion 7

void criterion_flow_refinement() {
    double t0 = now_seconds();
    RunConfig cfg = medium_config("flowline");
    g_flow_config = cfg;
    run_synth_data(cfg);
    run_train_tokenizer(cfg);
    FlowTrainReport rep = run_train_flow(cfg);
    double improvement =
        rep.holdout_coarse_error > 0.0
            ? (rep.holdout_coarse_error - rep.holdout_refined_error) /
                  rep.holdout_coarse_error
            : 0.0;
    double dt = now_seconds() - t0;
    bool pass = rep.improved_fraction >= 0.9 && improvement >= 0.10 &&
                dt <= 1800.0;
    report(6, "flow refinement", pass,
           "improved on " + fmt(100.0 * rep.improved_fraction) +
               "% of held-out sequences, mean improvement " +
               fmt(100.0 * improvement) + "%",
           dt);
}

// ---------------------------------------------------------------------------
// criterion 7: refinement error vs integration step count

void criterion_step_convergence() {
    double t0 = now_seconds();
    auto rows = run_sweep_flow_steps(g_flow_config);
    auto err = rows_by_split(rows, "refined_error");
    const int steps[] = {1, 5, 10, 30, 50};
    bool have_all = true;
    for (int s : steps) have_all = have_all && err.count("T" + std::to_string(s));
    bool monotone = have_all;
    for (int i = 0; have_all && i + 1 < 5; ++i) {
        double a = err["T" + std::to_string(steps[i])];
        double b = err["T" + std::to_string(steps[i + 1])];
        if (b > a * 1.01) monotone = false;  // 1% noise band
    }
    bool converged =
        have_all && std::fabs(err["T30"] - err["T50"]) <= 0.02 * err["T50"];
    double dt = now_seconds() - t0;
    bool pass = have_all && monotone && converged && dt <= 600.0;
    std::string detail = "errors";
    for (int s : steps)
        detail += " T" + std::to_string(s) + "=" +
                  fmt(err["T" + std::to_string(s)]);
    report(7, "step convergence", pass, detail, dt);
}

// ---------------------------------------------------------------------------
// criterion 8: plan-conditioned generator vs the no-plan baseline

RunConfig g_gen_config;  // shared with criterion 9

void copy_artifact(const RunConfig& from, const RunConfig& to,
                   const std::string& file) {
    fs::copy_file(fs::path(from.out_dir) / file, fs::path(to.out_dir) / file,
                  fs::copy_options::overwrite_existing);
}

double generator_accuracy(const RunConfig& cfg) {
    auto rows = run_evaluate(cfg, "generator");
    for (const auto& row : rows)
        if (row.metric == "segment_order_accuracy") return row.value;
    return -1.0;
}

void criterion_plans_help() {
    double t0 = now_seconds();

    RunConfig cfg = medium_config("gen_plans");
    cfg.corpus.train_count = 150;
    cfg.corpus.valid_count = 30;
    cfg.corpus.test_count = 200;
    cfg.flow_train.epochs = 20;
    cfg.generator_train.epochs = 80;
    cfg.plan_intervals = {4, 2};
    cfg.eval_samples = 200;
    g_gen_config = cfg;
    run_synth_data(cfg);
    run_train_tokenizer(cfg);
    run_train_flow(cfg);
    run_train_generator(cfg);
    double acc_plans = generator_accuracy(cfg);

    RunConfig noplan = cfg;
    noplan.out_dir = (work_dir() / "gen_noplan").string();
    noplan.plan_intervals = {};
    fs::create_directories(noplan.out_dir);
    copy_artifact(cfg, noplan, "corpus.bin");
    copy_artifact(cfg, noplan, "corpus.bin.manifest");
    copy_artifact(cfg, noplan, "norm.ckpt");
    copy_artifact(cfg, noplan, "tokenizer.ckpt");
    copy_artifact(cfg, noplan, "flow.ckpt");
    run_train_generator(noplan);
    double acc_noplan = generator_accuracy(noplan);

    // cheap interval-grid sweep; correctness here is "all seven rows emitted"
    RunConfig sweep = medium_config("plansweep");
    sweep.corpus.train_count = 16;
    sweep.corpus.valid_count = 4;
    sweep.corpus.test_count = 8;
    sweep.tokenizer_train.epochs = 5;
    sweep.flow_train.epochs = 2;
    sweep.generator_train.epochs = 2;
    sweep.eval_samples = 4;
    run_synth_data(sweep);
    run_train_tokenizer(sweep);
    run_train_flow(sweep);
    auto sweep_rows = run_sweep_plans(sweep);
    auto sweep_acc = rows_by_split(sweep_rows, "accuracy");
    bool seven_rows = sweep_acc.size() == 7;

    double dt = now_seconds() - t0;
    bool pass = acc_plans >= acc_noplan && seven_rows && dt <= 7200.0;
    report(8, "plans help", pass,
           "accuracy with plans " + fmt(acc_plans) + " vs without " +
               fmt(acc_noplan) + " over 200 prompts; sweep rows " +
               std::to_string(sweep_acc.size()) + "/7",
           dt);
}

// ---------------------------------------------------------------------------
// criterion 9: temperature raises diversity without collapsing accuracy

void criterion_diversity() {
    double t0 = now_seconds();
    RunConfig cfg = g_gen_config;
    PipelineState state = load_state(cfg, true, true, true);
    const auto& test_entries = state.manifest.splits.at("test");
    FlowSchedule schedule(10);  // refinement already converged well below 30

    auto sweep_temperature = [&](float temperature, double& diversity_out,
                                 double& accuracy_out) {
        RngState rng = RngState(cfg.seed).split(
            900 + static_cast<uint64_t>(temperature * 10));
        double div_sum = 0.0, acc_sum = 0.0;
        int prompts = 20, gens = 30, acc_count = 0;
        for (int p = 0; p < prompts; ++p) {
            const CorpusEntry& entry = test_entries[p];
            std::vector<std::vector<float>> features;
            for (int g = 0; g < gens; ++g) {
                SamplingParams sampling = cfg.sampling;
                sampling.temperature = temperature;
                sampling.seed = rng.next_u64();
                try {
                    GenerateMotionResult result = generate_motion(
                        entry.prompt_ids, state.generator_config,
                        state.generator_store, cfg.tokenizer,
                        state.tokenizer_store, state.codebook, cfg.flow,
                        state.flow_store, schedule, state.stats, sampling,
                        cfg.corpus.params.frame_rate_hz);
                    acc_sum += segment_order_accuracy(
                        result.motion, entry.script, cfg.corpus.params);
                    ++acc_count;
                    features.push_back(extract_feature(
                        normalize(result.motion, state.stats), cfg.tokenizer,
                        state.tokenizer_store));
                } catch (const std::exception&) {
                    ++acc_count;  // failed generation counts as inaccurate
                }
            }
            if (features.size() >= 2) div_sum += diversity_score(features);
        }
        diversity_out = div_sum / prompts;
        accuracy_out = acc_count ? acc_sum / acc_count : 0.0;
    };

    double div_hot = 0.0, acc_hot = 0.0, div_cold = 0.0, acc_cold = 0.0;
    sweep_temperature(1.0f, div_hot, acc_hot);
    sweep_temperature(0.2f, div_cold, acc_cold);

    double dt = now_seconds() - t0;
    bool pass = div_hot > div_cold && acc_hot >= acc_cold - 0.10 && dt <= 1200.0;
    report(9, "diversity", pass,
           "diversity " + fmt(div_hot) + " @T=1.0 vs " + fmt(div_cold) +
               " @T=0.2; accuracy " + fmt(acc_hot) + " vs " + fmt(acc_cold),
           dt);
}

// ---------------------------------------------------------------------------
// criterion 10: byte-identical rerun

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

void criterion_determinism() {
    double t0 = now_seconds();
    auto tiny = [&](const std::string& subdir) {
        RunConfig cfg = medium_config(subdir);
        cfg.corpus.train_count = 10;
        cfg.corpus.valid_count = 3;
        cfg.corpus.test_count = 3;
        cfg.tokenizer_train.epochs = 3;
        cfg.flow_train.epochs = 2;
        cfg.generator_train.epochs = 2;
        cfg.flow_steps = 3;
        cfg.eval_samples = 2;
        return cfg;
    };
    auto run_all = [](const RunConfig& cfg) {
        run_synth_data(cfg);
        run_train_tokenizer(cfg);
        run_train_flow(cfg);
        run_train_generator(cfg);
        run_evaluate(cfg, "tokenizer");
        run_evaluate(cfg, "flow");
        run_evaluate(cfg, "generator");
    };
    RunConfig a = tiny("det_a");
    RunConfig b = tiny("det_b");
    fs::remove_all(a.out_dir);
    fs::remove_all(b.out_dir);
    run_all(a);
    run_all(b);

    // compare every checkpoint and every metric CSV; wall-clock timing CSVs
    // are the only files allowed to differ
    std::vector<std::string> mismatched;
    int compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a.out_dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        std::string ext = entry.path().extension().string();
        if (ext != ".ckpt" && ext != ".csv" && ext != ".bin" &&
            ext != ".manifest")
            continue;
        if (name.rfind("timing", 0) == 0 ||
            name.find("_timing") != std::string::npos)
            continue;
        fs::path rel = fs::relative(entry.path(), a.out_dir);
        ++compared;
        if (slurp(entry.path()) != slurp(fs::path(b.out_dir) / rel))
            mismatched.push_back(rel.string());
    }
    double dt = now_seconds() - t0;
    bool pass = compared >= 8 && mismatched.empty();
    std::string detail = std::to_string(compared) + " artifacts compared";
    if (!mismatched.empty()) detail += ", first mismatch " + mismatched.front();
    report(10, "determinism", pass, detail, dt);
}

}  // namespace

int main(int argc, char** argv) {
    // optional arguments select a subset of criteria, e.g. "acceptance 1 4";
    // criteria 7 and 9 reuse artifacts trained by 6 and 8 respectively
    std::vector<bool> enabled(11, argc <= 1);
    for (int i = 1; i < argc; ++i) {
        int c = std::atoi(argv[i]);
        if (c >= 1 && c <= 10) enabled[static_cast<size_t>(c)] = true;
    }
    if (enabled[1]) criterion_plan_codec();
    if (enabled[2]) criterion_quantizer();
    if (enabled[3]) criterion_gradients();
    if (enabled[4]) criterion_integrator();
    if (enabled[5]) criterion_granularity();
    if (enabled[6] || enabled[7]) criterion_flow_refinement();
    if (enabled[7]) criterion_step_convergence();
    if (enabled[8] || enabled[9]) criterion_plans_help();
    if (enabled[9]) criterion_diversity();
    if (enabled[10]) criterion_determinism();
    std::cout << (g_failures == 0 ? "all criteria passed"
                                  : std::to_string(g_failures) +
                                        " criteria failed")
              << std::endl;
    return g_failures;
}
