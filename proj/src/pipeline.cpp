#include "motionplan/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "motionplan/checkpoint.hpp"
#include "motionplan/flow.hpp"
#include "motionplan/plan.hpp"

namespace fs = std::filesystem;

namespace motionplan {

namespace {

constexpr uint64_t kStageSynth = 1;
constexpr uint64_t kStageTokenizer = 2;
constexpr uint64_t kStageFlow = 3;
constexpr uint64_t kStageGenerator = 4;
constexpr uint64_t kStageGenerate = 5;
constexpr uint64_t kStageEvaluate = 6;
constexpr uint64_t kStageSweepGranularity = 7;
constexpr uint64_t kStageSweepPlans = 8;
constexpr uint64_t kStageSweepFlowSteps = 9;

std::string join(const RunConfig& config, const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

uint64_t crc64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string bytes = ss.str();
    return crc64(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
}

void write_stage_manifest(const RunConfig& config, const std::string& stage,
                          const std::vector<std::string>& inputs) {
    std::ofstream out(join(config, stage + ".manifest"));
    out << "config = " << config_hash(config) << "\n";
    for (const auto& path : inputs) {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(crc64_file(path)));
        // record the file name only so manifests compare equal across out dirs
        out << "input " << std::filesystem::path(path).filename().string()
            << " = " << buf << "\n";
    }
}

std::vector<MotionSequence> split_motions(
    const CorpusManifest& manifest,
    const std::map<uint64_t, MotionSequence>& motions, const std::string& split,
    const NormStats& stats) {
    auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) {
        throw std::runtime_error("corpus has no split named " + split);
    }
    std::vector<MotionSequence> out;
    out.reserve(it->second.size());
    for (const auto& entry : it->second) {
        out.push_back(normalize(motions.at(entry.id), stats));
    }
    return out;
}

NormStats load_norm(const RunConfig& config) {
    require_artifact(norm_path(config), "synth-data");
    ArrayMap arrays = load_arrays(norm_path(config));
    NormStats stats;
    stats.mean = arrays.at("mean").data;
    stats.std_dev = arrays.at("std").data;
    stats.clamped = !arrays.at("clamped").data.empty() &&
                    arrays.at("clamped").data[0] != 0.0f;
    return stats;
}

std::vector<GeneratorExample> build_examples(
    const std::vector<CorpusEntry>& entries,
    const std::map<uint64_t, MotionSequence>& motions, const NormStats& stats,
    const TokenizerConfig& tok_config, ParameterStore& tok_store,
    const Codebook& codebook) {
    std::vector<GeneratorExample> examples;
    examples.reserve(entries.size());
    for (const auto& entry : entries) {
        MotionSequence norm = normalize(motions.at(entry.id), stats);
        LatentSequence latents = encode(norm, tok_config, tok_store);
        QuantizeResult q = quantize(latents, codebook);
        GeneratorExample ex;
        ex.id = entry.id;
        ex.prompt_ids = entry.prompt_ids;
        ex.motion_tokens = q.tokens.ids;
        examples.push_back(std::move(ex));
    }
    return examples;
}

std::vector<double> epoch_axis(size_t n) {
    std::vector<double> xs(n);
    for (size_t i = 0; i < n; ++i) xs[i] = static_cast<double>(i + 1);
    return xs;
}

std::vector<int> parse_prompt(const std::string& prompt, int segment_types) {
    std::vector<int> ids;
    std::istringstream ss(prompt);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t pos = 0;
            int v = std::stoi(item, &pos);
            if (pos != item.size() || v < 0 || v >= segment_types) {
                throw std::invalid_argument(item);
            }
            ids.push_back(v);
        } catch (const std::exception&) {
            throw std::runtime_error("bad prompt token '" + item +
                                     "' (want segment types 0.." +
                                     std::to_string(segment_types - 1) + ")");
        }
    }
    if (ids.empty()) throw std::runtime_error("empty prompt");
    return ids;
}

}  // namespace

std::string corpus_path(const RunConfig& c) { return join(c, "corpus.bin"); }
std::string norm_path(const RunConfig& c) { return join(c, "norm.ckpt"); }
std::string tokenizer_path(const RunConfig& c) {
    return join(c, "tokenizer.ckpt");
}
std::string flow_path(const RunConfig& c) { return join(c, "flow.ckpt"); }
std::string generator_path(const RunConfig& c) {
    return join(c, "generator.ckpt");
}

void require_artifact(const std::string& path, const std::string& stage) {
    if (!fs::exists(path)) {
        throw std::runtime_error("missing checkpoint " + path + "; run " +
                                 stage + " first");
    }
}

int effective_threads(const RunConfig& config) {
    int n = config.threads > 0 ? config.threads : 1;
    if (const char* env = std::getenv("MOTIONPLAN_THREADS")) {
        try {
            int cap = std::max(std::stoi(env), 1);
            if (cap < n) n = cap;
        } catch (const std::exception&) {
            throw std::runtime_error(
                std::string("bad MOTIONPLAN_THREADS value: ") + env);
        }
    }
    return n;
}

VocabularyLayout make_layout(const RunConfig& config) {
    VocabularyLayout layout;
    layout.prompt_count = config.corpus.params.num_segment_types;
    layout.codebook_size = config.tokenizer.codebook_size;
    layout.plan_intervals = config.plan_intervals;
    layout.validate();
    return layout;
}

PipelineState load_state(const RunConfig& config, bool need_tokenizer,
                         bool need_flow, bool need_generator) {
    PipelineState state;
    require_artifact(corpus_path(config), "synth-data");
    std::tie(state.manifest, state.motions) = load_corpus(corpus_path(config));
    state.stats = load_norm(config);
    if (need_tokenizer) {
        require_artifact(tokenizer_path(config), "train-tokenizer");
        ArrayMap extra;
        load_checkpoint(tokenizer_path(config), state.tokenizer_store, &extra);
        state.codebook = codebook_from_arrays(extra);
        if (state.codebook.size != config.tokenizer.codebook_size) {
            throw std::runtime_error(
                "tokenizer checkpoint codebook size " +
                std::to_string(state.codebook.size) +
                " does not match configured " +
                std::to_string(config.tokenizer.codebook_size));
        }
    }
    if (need_flow) {
        require_artifact(flow_path(config), "train-flow");
        load_checkpoint(flow_path(config), state.flow_store, nullptr);
    }
    state.generator_config = config.generator;
    state.generator_config.vocab = make_layout(config);
    if (need_generator) {
        require_artifact(generator_path(config), "train-generator");
        load_checkpoint(generator_path(config), state.generator_store, nullptr);
    }
    return state;
}

void run_synth_data(const RunConfig& config) {
    ensure_dir(config.out_dir);
    RngState stage = RngState(config.seed).split(kStageSynth);
    auto [manifest, motions] = build_corpus(config.corpus, stage.next_u64());
    save_corpus(manifest, motions, corpus_path(config));

    std::vector<MotionSequence> train;
    for (const auto& entry : manifest.splits.at("train")) {
        train.push_back(motions.at(entry.id));
    }
    NormStats stats = compute_norm_stats(train);
    ArrayMap arrays;
    arrays["mean"] = {Shape{static_cast<int>(stats.mean.size())}, stats.mean};
    arrays["std"] = {Shape{static_cast<int>(stats.std_dev.size())},
                     stats.std_dev};
    arrays["clamped"] = {Shape{1}, {stats.clamped ? 1.0f : 0.0f}};
    save_arrays(norm_path(config), arrays);
    write_stage_manifest(config, "synth-data", {});
}

TokenizerTrainReport run_train_tokenizer(const RunConfig& config) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, false, false, false);
    auto train = split_motions(state.manifest, state.motions, "train", state.stats);
    auto valid = split_motions(state.manifest, state.motions, "valid", state.stats);

    RngState stage = RngState(config.seed).split(kStageTokenizer);
    ParameterStore store;
    init_tokenizer_params(config.tokenizer, store, stage);
    Codebook codebook =
        Codebook::init(config.tokenizer.codebook_size, config.tokenizer.code_dim, stage);
    TokenizerTrainReport report = train_tokenizer(
        train, valid, config.tokenizer, store, codebook, config.tokenizer_train, stage);

    save_checkpoint(tokenizer_path(config), store, codebook_to_arrays(codebook));

    std::vector<MetricRow> rows;
    std::string hash = config_hash(config);
    rows.push_back({"initial_valid_error", report.initial_valid_error, "valid", hash});
    rows.push_back({"final_valid_error", report.final_valid_error, "valid", hash});
    rows.push_back({"usage_fraction", report.usage.fraction_used, "train", hash});
    rows.push_back({"perplexity", report.usage.perplexity, "train", hash});
    for (size_t i = 0; i < report.epoch_loss.size(); ++i) {
        rows.push_back({"epoch_loss_" + std::to_string(i + 1),
                        report.epoch_loss[i], "train", hash});
    }
    write_metrics_csv(join(config, "report_tokenizer.csv"), rows);
    ensure_dir(join(config, "plots"));
    if (!report.epoch_loss.empty()) {
        write_svg_plot(join(config, "plots/tokenizer_loss.svg"),
                       "tokenizer training loss",
                       epoch_axis(report.epoch_loss.size()), report.epoch_loss);
    }
    write_stage_manifest(config, "train-tokenizer",
                         {corpus_path(config), norm_path(config)});
    return report;
}

FlowTrainReport run_train_flow(const RunConfig& config) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, true, false, false);
    auto train = split_motions(state.manifest, state.motions, "train", state.stats);
    auto valid = split_motions(state.manifest, state.motions, "valid", state.stats);

    RngState stage = RngState(config.seed).split(kStageFlow);
    ParameterStore store;
    init_flow_params(config.flow, store, stage);
    FlowTrainOptions options = config.flow_train;
    options.eval_steps = config.flow_steps;
    FlowTrainReport report =
        train_flow(train, valid, config.tokenizer, state.tokenizer_store,
                   state.codebook, config.flow, store, options, stage);

    save_checkpoint(flow_path(config), store);

    std::vector<MetricRow> rows;
    std::string hash = config_hash(config);
    rows.push_back({"initial_loss", report.initial_loss, "train", hash});
    rows.push_back({"holdout_coarse_error", report.holdout_coarse_error, "valid", hash});
    rows.push_back({"holdout_refined_error", report.holdout_refined_error, "valid", hash});
    rows.push_back({"improved_fraction", report.improved_fraction, "valid", hash});
    for (size_t i = 0; i < report.epoch_loss.size(); ++i) {
        rows.push_back({"epoch_loss_" + std::to_string(i + 1),
                        report.epoch_loss[i], "train", hash});
    }
    write_metrics_csv(join(config, "report_flow.csv"), rows);
    ensure_dir(join(config, "plots"));
    if (!report.epoch_loss.empty()) {
        write_svg_plot(join(config, "plots/flow_loss.svg"), "flow training loss",
                       epoch_axis(report.epoch_loss.size()), report.epoch_loss);
    }
    write_stage_manifest(config, "train-flow",
                         {corpus_path(config), norm_path(config),
                          tokenizer_path(config)});
    return report;
}

GeneratorTrainReport run_train_generator(const RunConfig& config) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, true, false, false);
    auto train_examples =
        build_examples(state.manifest.splits.at("train"), state.motions,
                       state.stats, config.tokenizer, state.tokenizer_store,
                       state.codebook);
    auto valid_examples =
        build_examples(state.manifest.splits.at("valid"), state.motions,
                       state.stats, config.tokenizer, state.tokenizer_store,
                       state.codebook);

    RngState stage = RngState(config.seed).split(kStageGenerator);
    GeneratorConfig gen_config = config.generator;
    gen_config.vocab = make_layout(config);
    ParameterStore store;
    init_generator_params(gen_config, store, stage);
    GeneratorTrainReport report =
        train_generator(train_examples, valid_examples, gen_config, store,
                        config.generator_train, stage);

    save_checkpoint(generator_path(config), store);

    std::vector<MetricRow> rows;
    std::string hash = config_hash(config);
    rows.push_back({"initial_loss", report.initial_loss, "train", hash});
    for (size_t i = 0; i < report.train_loss.size(); ++i) {
        rows.push_back({"epoch_loss_" + std::to_string(i + 1),
                        report.train_loss[i], "train", hash});
    }
    for (size_t i = 0; i < report.valid_loss.size(); ++i) {
        rows.push_back({"valid_loss_" + std::to_string(i + 1),
                        report.valid_loss[i], "valid", hash});
    }
    write_metrics_csv(join(config, "report_generator.csv"), rows);
    ensure_dir(join(config, "plots"));
    if (!report.train_loss.empty()) {
        write_svg_plot(join(config, "plots/generator_loss.svg"),
                       "generator training loss",
                       epoch_axis(report.train_loss.size()), report.train_loss);
    }
    write_stage_manifest(config, "train-generator",
                         {corpus_path(config), norm_path(config),
                          tokenizer_path(config)});
    return report;
}

GenerateMotionResult run_generate(const RunConfig& config,
                                  const std::string& prompt) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, true, true, true);
    std::vector<int> prompt_ids =
        parse_prompt(prompt, config.corpus.params.num_segment_types);

    RngState stage = RngState(config.seed).split(kStageGenerate);
    SamplingParams sampling = config.sampling;
    sampling.seed = stage.next_u64();
    FlowSchedule schedule(config.flow_steps);
    GenerateMotionResult result = generate_motion(
        prompt_ids, state.generator_config, state.generator_store,
        config.tokenizer, state.tokenizer_store, state.codebook, config.flow,
        state.flow_store, schedule, state.stats, sampling,
        config.corpus.params.frame_rate_hz);

    ArrayMap arrays;
    arrays["motion"] = {Shape{result.motion.frames(), result.motion.d_m},
                        result.motion.data};
    arrays["frame_rate_hz"] = {
        Shape{1}, {static_cast<float>(result.motion.frame_rate_hz)}};
    save_arrays(join(config, "generated.bin"), arrays);

    std::ofstream plan_out(join(config, "generated_plan.txt"));
    plan_out << format_hierarchy(result.hierarchy);
    for (const auto& d : result.diagnostics) plan_out << "# " << d << "\n";

    write_stage_manifest(config, "generate",
                         {corpus_path(config), norm_path(config),
                          tokenizer_path(config), flow_path(config),
                          generator_path(config)});
    return result;
}

std::vector<MetricRow> run_evaluate(const RunConfig& config,
                                    const std::string& suite) {
    ensure_dir(config.out_dir);
    std::string hash = config_hash(config);
    std::vector<MetricRow> rows;

    if (suite == "tokenizer") {
        PipelineState state = load_state(config, true, false, false);
        auto valid = split_motions(state.manifest, state.motions, "valid", state.stats);
        auto train = split_motions(state.manifest, state.motions, "train", state.stats);
        double err = 0.0;
        int counted = 0;
        std::vector<int> stream;
        for (const auto& m : valid) {
            MotionSequence recon =
                reconstruct(m, config.tokenizer, state.tokenizer_store, state.codebook);
            err += reconstruction_error(recon, m);
            ++counted;
        }
        for (const auto& m : train) {
            LatentSequence latents = encode(m, config.tokenizer, state.tokenizer_store);
            QuantizeResult q = quantize(latents, state.codebook);
            stream.insert(stream.end(), q.tokens.ids.begin(), q.tokens.ids.end());
        }
        CodebookUsage usage =
            codebook_utilization(stream, config.tokenizer.codebook_size);
        rows.push_back({"recon_error", counted ? err / counted : 0.0, "valid", hash});
        rows.push_back({"usage_fraction", usage.fraction_used, "train", hash});
        rows.push_back({"perplexity", usage.perplexity, "train", hash});
    } else if (suite == "flow") {
        PipelineState state = load_state(config, true, true, false);
        auto valid = split_motions(state.manifest, state.motions, "valid", state.stats);
        FlowSchedule schedule(config.flow_steps);
        double coarse_sum = 0.0, refined_sum = 0.0, seam_sum = 0.0;
        int improved = 0, counted = 0, seam_counted = 0;
        for (const auto& m : valid) {
            MotionSequence y0 =
                reconstruct(m, config.tokenizer, state.tokenizer_store, state.codebook);
            MotionSequence refined =
                refine(y0, config.flow, state.flow_store, schedule);
            double ce = reconstruction_error(y0, m);
            double re = reconstruction_error(refined, m);
            coarse_sum += ce;
            refined_sum += re;
            if (re < ce) ++improved;
            ++counted;
            if (refined.frames() > config.flow.clip_frames) {
                seam_sum += seam_smoothness(refined, config.flow.clip_frames);
                ++seam_counted;
            }
        }
        rows.push_back({"coarse_error", counted ? coarse_sum / counted : 0.0, "valid", hash});
        rows.push_back({"refined_error", counted ? refined_sum / counted : 0.0, "valid", hash});
        rows.push_back({"improved_fraction",
                        counted ? static_cast<double>(improved) / counted : 0.0,
                        "valid", hash});
        if (seam_counted) {
            rows.push_back({"seam_smoothness", seam_sum / seam_counted, "valid", hash});
        }
    } else if (suite == "generator" || suite == "ablation") {
        PipelineState state = load_state(config, true, true, true);
        const auto& test_entries = state.manifest.splits.at("test");
        int count = std::min<int>(config.eval_samples,
                                  static_cast<int>(test_entries.size()));
        if (count < 1) throw std::runtime_error("evaluate: empty test split");

        RngState stage = RngState(config.seed).split(kStageEvaluate);
        FlowSchedule schedule(config.flow_steps);
        std::vector<std::vector<float>> gen_features, real_features;
        std::map<std::string, std::vector<double>> stage_times;
        double accuracy_sum = 0.0;
        double adh41 = 0.0, adh21 = 0.0, adh42 = 0.0;
        int adh_counted = 0, failures = 0;
        for (int i = 0; i < count; ++i) {
            const CorpusEntry& entry = test_entries[i];
            real_features.push_back(extract_feature(
                normalize(state.motions.at(entry.id), state.stats),
                config.tokenizer, state.tokenizer_store));
            SamplingParams sampling = config.sampling;
            sampling.seed = stage.next_u64();
            try {
                GenerateMotionResult result = generate_motion(
                    entry.prompt_ids, state.generator_config,
                    state.generator_store, config.tokenizer,
                    state.tokenizer_store, state.codebook, config.flow,
                    state.flow_store, schedule, state.stats, sampling,
                    config.corpus.params.frame_rate_hz);
                accuracy_sum += segment_order_accuracy(result.motion, entry.script,
                                                       config.corpus.params);
                gen_features.push_back(extract_feature(
                    normalize(result.motion, state.stats), config.tokenizer,
                    state.tokenizer_store));
                AdherenceRates rates = plan_adherence(result.hierarchy);
                adh41 += rates.rate_4_in_1;
                adh21 += rates.rate_2_in_1;
                adh42 += rates.rate_4_in_2;
                ++adh_counted;
                stage_times["generate"].push_back(result.generate_ms);
                stage_times["decode"].push_back(result.decode_ms);
                stage_times["refine"].push_back(result.refine_ms);
            } catch (const std::exception&) {
                ++failures;
            }
        }
        rows.push_back({"segment_order_accuracy", accuracy_sum / count, "test", hash});
        rows.push_back({"generation_failures", static_cast<double>(failures),
                        "test", hash});
        if (gen_features.size() >= 2) {
            FrechetResult fid = frechet_distance(gen_features, real_features);
            rows.push_back({"fid", fid.value, "test", hash});
            rows.push_back({"fid_diagonal_fallback",
                            fid.diagonal_fallback ? 1.0 : 0.0, "test", hash});
            rows.push_back({"diversity", diversity_score(gen_features), "test", hash});
        }
        if (adh_counted && !config.plan_intervals.empty()) {
            rows.push_back({"adherence_coarsest_in_fine", adh41 / adh_counted,
                            "test", hash});
            rows.push_back({"adherence_next_in_fine", adh21 / adh_counted,
                            "test", hash});
            rows.push_back({"adherence_coarsest_in_next", adh42 / adh_counted,
                            "test", hash});
        }

        // timings are wall-clock and deliberately kept out of the metric CSV
        std::vector<MetricRow> timing_rows;
        for (const auto& [name, timing] : timing_report(stage_times)) {
            timing_rows.push_back({name + "_mean_ms", timing.mean_ms, "test", hash});
            timing_rows.push_back({name + "_median_ms", timing.median_ms, "test", hash});
            timing_rows.push_back({name + "_p95_ms", timing.p95_ms, "test", hash});
        }
        write_metrics_csv(join(config, "timing_" + suite + ".csv"), timing_rows);
    } else {
        throw std::runtime_error("unknown evaluate suite: " + suite +
                                 " (want tokenizer|flow|generator|ablation)");
    }

    write_metrics_csv(join(config, "metrics_" + suite + ".csv"), rows);
    ensure_dir(join(config, "plots"));
    std::vector<double> xs, ys;
    for (size_t i = 0; i < rows.size(); ++i) {
        xs.push_back(static_cast<double>(i));
        ys.push_back(rows[i].value);
    }
    if (!rows.empty()) {
        write_svg_plot(join(config, "plots/metrics_" + suite + ".svg"),
                       suite + " metrics", xs, ys, /*bars=*/true);
    }
    write_stage_manifest(config, "evaluate-" + suite, {corpus_path(config)});
    return rows;
}

std::vector<MetricRow> run_sweep_granularity(const RunConfig& config) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, false, false, false);
    auto train = split_motions(state.manifest, state.motions, "train", state.stats);
    auto valid = split_motions(state.manifest, state.motions, "valid", state.stats);
    std::string hash = config_hash(config);

    struct Cell {
        int rate;
        int codebook;
    };
    const Cell cells[] = {{2, 512}, {2, 4096}, {4, 512}, {4, 4096}};
    std::vector<MetricRow> rows;
    std::vector<double> errors;
    for (const Cell& cell : cells) {
        TokenizerConfig tok = config.tokenizer;
        tok.downsample_rate = cell.rate;
        tok.codebook_size = cell.codebook;
        // every cell trains from the same stream: matched budget and seed
        RngState cell_rng = RngState(config.seed).split(kStageSweepGranularity);
        ParameterStore store;
        init_tokenizer_params(tok, store, cell_rng);
        Codebook codebook = Codebook::init(tok.codebook_size, tok.code_dim, cell_rng);
        TokenizerTrainReport report = train_tokenizer(
            train, valid, tok, store, codebook, config.tokenizer_train, cell_rng);

        std::string name =
            "r" + std::to_string(cell.rate) + "-k" + std::to_string(cell.codebook);
        std::string cell_dir = join(config, "sweep-granularity");
        ensure_dir(cell_dir);
        save_checkpoint((fs::path(cell_dir) / (name + ".ckpt")).string(), store,
                        codebook_to_arrays(codebook));
        rows.push_back({"recon_error", report.final_valid_error, name, hash});
        rows.push_back({"usage_fraction", report.usage.fraction_used, name, hash});
        errors.push_back(report.final_valid_error);
    }
    write_metrics_csv(join(config, "sweep_granularity.csv"), rows);
    ensure_dir(join(config, "plots"));
    write_svg_plot(join(config, "plots/sweep_granularity.svg"),
                   "validation error by (r, K)", {0, 1, 2, 3}, errors,
                   /*bars=*/true);
    write_stage_manifest(config, "sweep-granularity",
                         {corpus_path(config), norm_path(config)});
    return rows;
}

const std::vector<std::vector<int>>& plan_sweep_grid() {
    static const std::vector<std::vector<int>> grid = {
        {}, {8}, {4}, {2}, {8, 4}, {4, 2}, {8, 4, 2}};
    return grid;
}

std::vector<MetricRow> run_sweep_plans(const RunConfig& config) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, true, true, false);
    std::string hash = config_hash(config);
    auto train_examples =
        build_examples(state.manifest.splits.at("train"), state.motions,
                       state.stats, config.tokenizer, state.tokenizer_store,
                       state.codebook);
    auto valid_examples =
        build_examples(state.manifest.splits.at("valid"), state.motions,
                       state.stats, config.tokenizer, state.tokenizer_store,
                       state.codebook);
    const auto& test_entries = state.manifest.splits.at("test");
    int count = std::min<int>(config.eval_samples,
                              static_cast<int>(test_entries.size()));
    FlowSchedule schedule(config.flow_steps);

    std::vector<std::vector<float>> real_features;
    for (int i = 0; i < count; ++i) {
        real_features.push_back(extract_feature(
            normalize(state.motions.at(test_entries[i].id), state.stats),
            config.tokenizer, state.tokenizer_store));
    }

    std::vector<MetricRow> rows;
    std::ofstream table(join(config, "sweep_plans.csv"));
    table << "intervals,accuracy,fid,config_hash\n";
    std::string sweep_dir = join(config, "sweep-plans");
    ensure_dir(sweep_dir);
    for (const auto& intervals : plan_sweep_grid()) {
        RunConfig cell_config = config;
        cell_config.plan_intervals = intervals;
        GeneratorConfig gen_config = config.generator;
        gen_config.vocab = make_layout(cell_config);

        // same stream for every cell: matched budget and seed
        RngState cell_rng = RngState(config.seed).split(kStageSweepPlans);
        ParameterStore store;
        init_generator_params(gen_config, store, cell_rng);
        train_generator(train_examples, valid_examples, gen_config, store,
                        config.generator_train, cell_rng);
        std::string name =
            intervals.empty() ? "none" : format_interval_list(intervals);
        std::string file_name = name;
        for (char& c : file_name)
            if (c == ',') c = '-';
        save_checkpoint((fs::path(sweep_dir) / (file_name + ".ckpt")).string(),
                        store);

        RngState eval_rng = cell_rng.split(kStageEvaluate);
        double accuracy_sum = 0.0;
        std::vector<std::vector<float>> gen_features;
        for (int i = 0; i < count; ++i) {
            const CorpusEntry& entry = test_entries[i];
            SamplingParams sampling = config.sampling;
            sampling.seed = eval_rng.next_u64();
            try {
                GenerateMotionResult result = generate_motion(
                    entry.prompt_ids, gen_config, store, config.tokenizer,
                    state.tokenizer_store, state.codebook, config.flow,
                    state.flow_store, schedule, state.stats, sampling,
                    config.corpus.params.frame_rate_hz);
                accuracy_sum += segment_order_accuracy(result.motion, entry.script,
                                                       config.corpus.params);
                gen_features.push_back(extract_feature(
                    normalize(result.motion, state.stats), config.tokenizer,
                    state.tokenizer_store));
            } catch (const std::exception&) {
                // failed generation scores zero accuracy and adds no feature
            }
        }
        double accuracy = count ? accuracy_sum / count : 0.0;
        double fid = gen_features.size() >= 2
                         ? frechet_distance(gen_features, real_features).value
                         : -1.0;
        char value_buf[64];
        std::snprintf(value_buf, sizeof(value_buf), "%.10g,%.10g", accuracy, fid);
        table << "\"" << name << "\"," << value_buf << ',' << hash << "\n";
        rows.push_back({"accuracy", accuracy, name, hash});
        rows.push_back({"fid", fid, name, hash});
    }
    table.close();
    write_metrics_csv(join(config, "sweep_plans_metrics.csv"), rows);
    write_stage_manifest(config, "sweep-plans",
                         {corpus_path(config), norm_path(config),
                          tokenizer_path(config), flow_path(config)});
    return rows;
}

std::vector<MetricRow> run_sweep_flow_steps(const RunConfig& config) {
    ensure_dir(config.out_dir);
    PipelineState state = load_state(config, true, true, false);
    auto valid = split_motions(state.manifest, state.motions, "valid", state.stats);
    std::string hash = config_hash(config);

    const int steps_grid[] = {1, 5, 10, 30, 50};
    std::vector<MetricRow> rows, timing_rows;
    std::vector<double> xs, ys;
    using clock = std::chrono::steady_clock;
    for (int steps : steps_grid) {
        FlowSchedule schedule(steps);
        double refined_sum = 0.0, elapsed_ms = 0.0;
        int counted = 0;
        for (const auto& m : valid) {
            MotionSequence y0 =
                reconstruct(m, config.tokenizer, state.tokenizer_store, state.codebook);
            auto t0 = clock::now();
            MotionSequence refined =
                refine(y0, config.flow, state.flow_store, schedule);
            elapsed_ms +=
                std::chrono::duration<double, std::milli>(clock::now() - t0)
                    .count();
            refined_sum += reconstruction_error(refined, m);
            ++counted;
        }
        std::string name = "T" + std::to_string(steps);
        double err = counted ? refined_sum / counted : 0.0;
        rows.push_back({"refined_error", err, name, hash});
        timing_rows.push_back(
            {"refine_mean_ms", counted ? elapsed_ms / counted : 0.0, name, hash});
        xs.push_back(steps);
        ys.push_back(err);
    }
    write_metrics_csv(join(config, "sweep_flow_steps.csv"), rows);
    write_metrics_csv(join(config, "sweep_flow_steps_timing.csv"), timing_rows);
    ensure_dir(join(config, "plots"));
    write_svg_plot(join(config, "plots/sweep_flow_steps.svg"),
                   "holdout error by integration steps", xs, ys);
    write_stage_manifest(config, "sweep-flow-steps",
                         {corpus_path(config), norm_path(config),
                          tokenizer_path(config), flow_path(config)});
    return rows;
}

}  // namespace motionplan
