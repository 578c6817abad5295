#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "motionplan/pipeline.hpp"
#include "motionplan/plan.hpp"

using namespace motionplan;

namespace {

struct CliOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    // flag overrides; empty/negative means "not given"
    std::string out_dir;
    std::string plan_intervals = "\x01";  // sentinel: not given
    long long seed = -1;
    int codebook_size = -1;
    int downsample_rate = -1;
    int flow_steps = -1;
    double temperature = -1.0;
    int top_k = -1;
};

RunConfig resolve(const CliOptions& opts) {
    ConfigMap map;
    if (!opts.config_path.empty()) map = load_config_file(opts.config_path);
    for (const auto& assignment : opts.overrides) {
        apply_override(map, assignment);
    }
    if (opts.seed >= 0) map["run.seed"] = std::to_string(opts.seed);
    if (!opts.out_dir.empty()) map["run.out_dir"] = opts.out_dir;
    if (opts.codebook_size > 0)
        map["tokenizer.codebook_size"] = std::to_string(opts.codebook_size);
    if (opts.downsample_rate > 0)
        map["tokenizer.downsample_rate"] = std::to_string(opts.downsample_rate);
    if (opts.plan_intervals != "\x01") map["plan.intervals"] = opts.plan_intervals;
    if (opts.flow_steps > 0) map["flow.steps"] = std::to_string(opts.flow_steps);
    if (opts.temperature >= 0.0)
        map["sampling.temperature"] = std::to_string(opts.temperature);
    if (opts.top_k > 0) map["sampling.top_k"] = std::to_string(opts.top_k);
    return RunConfig::from_map(map);
}

void print_rows(const std::vector<MetricRow>& rows) {
    for (const auto& row : rows) {
        std::printf("%-32s %-14s %.6g\n", row.metric.c_str(), row.split.c_str(),
                    row.value);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-to-motion pipeline: corpus synthesis, staged training, "
                 "generation, evaluation, and ablation sweeps"};
    app.require_subcommand(1);

    CliOptions opts;
    app.add_option("--config", opts.config_path, "config file (key = value)");
    app.add_option("--set", opts.overrides,
                   "override a config entry, section.key=value");
    app.add_option("--seed", opts.seed, "root seed");
    app.add_option("--out", opts.out_dir, "output directory");
    app.add_option("--codebook-size", opts.codebook_size, "tokenizer K");
    app.add_option("--downsample-rate", opts.downsample_rate, "tokenizer r");
    app.add_option("--plan-intervals", opts.plan_intervals,
                   "plan intervals, e.g. 4,2 (empty for no plans)");
    app.add_option("--flow-steps", opts.flow_steps, "Euler integration steps");
    app.add_option("--temperature", opts.temperature, "sampling temperature");
    app.add_option("--top-k", opts.top_k, "sampling top-k");

    app.add_subcommand("synth-data", "generate the synthetic corpus");
    app.add_subcommand("train-tokenizer", "train the VQ tokenizer");
    app.add_subcommand("train-flow", "train the flow refiner");
    app.add_subcommand("train-generator", "train the plan generator");

    std::string prompt;
    auto* generate_cmd =
        app.add_subcommand("generate", "generate one motion from a prompt");
    generate_cmd
        ->add_option("--prompt", prompt,
                     "comma-separated segment types, e.g. 2,5,1")
        ->required();

    std::string suite = "generator";
    auto* evaluate_cmd = app.add_subcommand("evaluate", "run a metric suite");
    evaluate_cmd->add_option("--suite", suite,
                             "tokenizer|flow|generator|ablation");

    app.add_subcommand("sweep-granularity",
                       "tokenizer (r, K) grid: reconstruction vs granularity");
    app.add_subcommand("sweep-plans",
                       "generator grid over plan interval sets");
    app.add_subcommand("sweep-flow-steps",
                       "refinement error across integration step counts");

    std::string dump_file;
    auto* dump_cmd = app.add_subcommand(
        "plan-dump", "parse a saved token stream and print the plan hierarchy");
    dump_cmd->add_option("--file", dump_file, "assembled-sequence file")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config = resolve(opts);
        if (app.got_subcommand("synth-data")) {
            run_synth_data(config);
            std::printf("corpus written to %s\n", corpus_path(config).c_str());
        } else if (app.got_subcommand("train-tokenizer")) {
            TokenizerTrainReport report = run_train_tokenizer(config);
            std::printf("final valid error %.6g, codebook usage %.3f\n",
                        report.final_valid_error, report.usage.fraction_used);
        } else if (app.got_subcommand("train-flow")) {
            FlowTrainReport report = run_train_flow(config);
            std::printf(
                "holdout error: coarse %.6g -> refined %.6g (improved %.1f%%)\n",
                report.holdout_coarse_error, report.holdout_refined_error,
                100.0 * report.improved_fraction);
        } else if (app.got_subcommand("train-generator")) {
            GeneratorTrainReport report = run_train_generator(config);
            double final_valid = report.valid_loss.empty()
                                     ? report.initial_loss
                                     : report.valid_loss.back();
            std::printf("valid loss %.6g -> %.6g\n", report.initial_loss,
                        final_valid);
        } else if (app.got_subcommand("generate")) {
            GenerateMotionResult result = run_generate(config, prompt);
            std::printf("generated %d frames (%d retries)\n",
                        result.motion.frames(), result.retries);
            std::fputs(format_hierarchy(result.hierarchy).c_str(), stdout);
        } else if (app.got_subcommand("evaluate")) {
            print_rows(run_evaluate(config, suite));
        } else if (app.got_subcommand("sweep-granularity")) {
            print_rows(run_sweep_granularity(config));
        } else if (app.got_subcommand("sweep-plans")) {
            print_rows(run_sweep_plans(config));
        } else if (app.got_subcommand("sweep-flow-steps")) {
            print_rows(run_sweep_flow_steps(config));
        } else if (app.got_subcommand("plan-dump")) {
            VocabularyLayout layout = make_layout(config);
            AssembledSequence seq = load_assembled(dump_file, layout);
            ParseResult parsed = parse(seq.ids, layout);
            std::fputs(format_hierarchy(parsed.hierarchy).c_str(), stdout);
            for (const auto& d : parsed.diagnostics) {
                std::printf("# %s\n", d.c_str());
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
