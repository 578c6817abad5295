#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "motionplan/corpus.hpp"
#include "motionplan/flow.hpp"
#include "motionplan/generator.hpp"
#include "motionplan/tokenizer.hpp"

namespace motionplan {

// Text configuration: `key = value` lines grouped under [section] headers.
// Keys are addressed as "section.key"; command-line overrides use the same
// form. '#' starts a comment.

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);
// "section.key=value"; errors on malformed input
void apply_override(ConfigMap& map, const std::string& assignment);

struct RunConfig {
    uint64_t seed = 7;
    std::string out_dir = "runs/default";
    int threads = 1;

    // corpus
    CorpusSpec corpus;

    // tokenizer
    TokenizerConfig tokenizer;
    TokenizerTrainOptions tokenizer_train;

    // flow
    FlowConfig flow;
    FlowTrainOptions flow_train;
    int flow_steps = 30;

    // plan / generator
    std::vector<int> plan_intervals{4, 2};
    GeneratorConfig generator;  // vocab layout filled in by the pipeline
    GeneratorTrainOptions generator_train;
    SamplingParams sampling;

    // evaluation
    int eval_samples = 32;

    static RunConfig from_map(const ConfigMap& map);
    ConfigMap to_map() const;  // canonical form, every key present
};

// CRC-64 of the canonical serialization, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// "4,2" <-> {4, 2}; empty string <-> {}
std::vector<int> parse_interval_list(const std::string& s);
std::string format_interval_list(const std::vector<int>& intervals);

}  // namespace motionplan
