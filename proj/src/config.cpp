#include "motionplan/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "motionplan/checkpoint.hpp"

namespace motionplan {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_line(int line_no, const std::string& line) {
    throw std::runtime_error("config parse error at line " +
                             std::to_string(line_no) + ": " + line);
}

int get_int(const ConfigMap& map, const std::string& key, int fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    try {
        size_t pos = 0;
        int v = std::stoi(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad integer for " + key + ": " +
                                 it->second);
    }
}

double get_double(const ConfigMap& map, const std::string& key,
                  double fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    try {
        size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad number for " + key + ": " +
                                 it->second);
    }
}

uint64_t get_u64(const ConfigMap& map, const std::string& key,
                 uint64_t fallback) {
    auto it = map.find(key);
    if (it == map.end()) return fallback;
    try {
        size_t pos = 0;
        unsigned long long v = std::stoull(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw std::runtime_error("config: bad unsigned integer for " + key +
                                 ": " + it->second);
    }
}

std::string get_str(const ConfigMap& map, const std::string& key,
                    const std::string& fallback) {
    auto it = map.find(key);
    return it == map.end() ? fallback : it->second;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap map;
    std::istringstream in(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') bad_line(line_no, line);
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) bad_line(line_no, line);
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) bad_line(line_no, line);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || section.empty()) bad_line(line_no, line);
        map[section + "." + key] = value;
    }
    return map;
}

ConfigMap load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(ConfigMap& map, const std::string& assignment) {
    size_t eq = assignment.find('=');
    std::string key =
        eq == std::string::npos ? "" : trim(assignment.substr(0, eq));
    if (key.empty() || key.find('.') == std::string::npos) {
        throw std::runtime_error("bad override (want section.key=value): " +
                                 assignment);
    }
    map[key] = trim(assignment.substr(eq + 1));
}

std::vector<int> parse_interval_list(const std::string& s) {
    std::vector<int> out;
    std::string t = trim(s);
    if (t.empty()) return out;
    std::istringstream ss(t);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        try {
            size_t pos = 0;
            int v = std::stoi(item, &pos);
            if (pos != item.size() || v < 2) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw std::runtime_error("bad interval list entry: '" + item + "'");
        }
    }
    for (size_t i = 1; i < out.size(); ++i) {
        if (out[i] >= out[i - 1]) {
            throw std::runtime_error(
                "interval list must be strictly descending: " + s);
        }
    }
    return out;
}

std::string format_interval_list(const std::vector<int>& intervals) {
    std::string s;
    for (size_t i = 0; i < intervals.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(intervals[i]);
    }
    return s;
}

RunConfig RunConfig::from_map(const ConfigMap& map) {
    RunConfig c;
    ConfigMap known = RunConfig().to_map();
    for (const auto& [key, value] : map) {
        if (known.count(key) == 0)
            throw std::runtime_error("config: unknown key " + key);
    }
    c.seed = get_u64(map, "run.seed", c.seed);
    c.out_dir = get_str(map, "run.out_dir", c.out_dir);
    c.threads = get_int(map, "run.threads", c.threads);

    c.corpus.train_count = get_int(map, "corpus.train_count", c.corpus.train_count);
    c.corpus.valid_count = get_int(map, "corpus.valid_count", c.corpus.valid_count);
    c.corpus.test_count = get_int(map, "corpus.test_count", c.corpus.test_count);
    c.corpus.max_segments = get_int(map, "corpus.max_segments", c.corpus.max_segments);
    c.corpus.params.d_m = get_int(map, "corpus.d_m", c.corpus.params.d_m);
    c.corpus.params.frame_rate_hz =
        get_double(map, "corpus.frame_rate_hz", c.corpus.params.frame_rate_hz);
    c.corpus.params.num_segment_types =
        get_int(map, "corpus.segment_types", c.corpus.params.num_segment_types);
    c.corpus.params.min_segment_frames =
        get_int(map, "corpus.min_segment_frames", c.corpus.params.min_segment_frames);
    c.corpus.params.max_segment_frames =
        get_int(map, "corpus.max_segment_frames", c.corpus.params.max_segment_frames);

    c.tokenizer.codebook_size =
        get_int(map, "tokenizer.codebook_size", c.tokenizer.codebook_size);
    c.tokenizer.downsample_rate =
        get_int(map, "tokenizer.downsample_rate", c.tokenizer.downsample_rate);
    c.tokenizer.code_dim = get_int(map, "tokenizer.code_dim", c.tokenizer.code_dim);
    c.tokenizer.channels = get_int(map, "tokenizer.channels", c.tokenizer.channels);
    c.tokenizer.d_m = c.corpus.params.d_m;
    c.tokenizer_train.epochs =
        get_int(map, "tokenizer.epochs", c.tokenizer_train.epochs);
    c.tokenizer_train.batch_size =
        get_int(map, "tokenizer.batch_size", c.tokenizer_train.batch_size);
    c.tokenizer_train.learning_rate = static_cast<float>(
        get_double(map, "tokenizer.learning_rate", c.tokenizer_train.learning_rate));

    c.flow.d_m = c.corpus.params.d_m;
    c.flow.base_channels = get_int(map, "flow.base_channels", c.flow.base_channels);
    c.flow.time_embed_dim = get_int(map, "flow.time_embed_dim", c.flow.time_embed_dim);
    c.flow_train.epochs = get_int(map, "flow.epochs", c.flow_train.epochs);
    c.flow_train.batch_size = get_int(map, "flow.batch_size", c.flow_train.batch_size);
    c.flow_train.learning_rate = static_cast<float>(
        get_double(map, "flow.learning_rate", c.flow_train.learning_rate));
    c.flow_steps = get_int(map, "flow.steps", c.flow_steps);
    c.flow_train.eval_steps = c.flow_steps;

    c.plan_intervals = parse_interval_list(
        get_str(map, "plan.intervals", format_interval_list(c.plan_intervals)));

    c.generator.layers = get_int(map, "generator.layers", c.generator.layers);
    c.generator.heads = get_int(map, "generator.heads", c.generator.heads);
    c.generator.width = get_int(map, "generator.width", c.generator.width);
    c.generator.context = get_int(map, "generator.context", c.generator.context);
    c.generator.dropout = static_cast<float>(
        get_double(map, "generator.dropout", c.generator.dropout));
    c.generator_train.epochs =
        get_int(map, "generator.epochs", c.generator_train.epochs);
    c.generator_train.batch_size =
        get_int(map, "generator.batch_size", c.generator_train.batch_size);
    c.generator_train.learning_rate = static_cast<float>(
        get_double(map, "generator.learning_rate", c.generator_train.learning_rate));

    c.sampling.temperature = static_cast<float>(
        get_double(map, "sampling.temperature", c.sampling.temperature));
    c.sampling.top_k = get_int(map, "sampling.top_k", c.sampling.top_k);

    c.eval_samples = get_int(map, "eval.samples", c.eval_samples);
    return c;
}

ConfigMap RunConfig::to_map() const {
    ConfigMap m;
    m["run.seed"] = std::to_string(seed);
    m["run.out_dir"] = out_dir;
    m["run.threads"] = std::to_string(threads);
    m["corpus.train_count"] = std::to_string(corpus.train_count);
    m["corpus.valid_count"] = std::to_string(corpus.valid_count);
    m["corpus.test_count"] = std::to_string(corpus.test_count);
    m["corpus.max_segments"] = std::to_string(corpus.max_segments);
    m["corpus.d_m"] = std::to_string(corpus.params.d_m);
    m["corpus.frame_rate_hz"] = fmt_double(corpus.params.frame_rate_hz);
    m["corpus.segment_types"] = std::to_string(corpus.params.num_segment_types);
    m["corpus.min_segment_frames"] = std::to_string(corpus.params.min_segment_frames);
    m["corpus.max_segment_frames"] = std::to_string(corpus.params.max_segment_frames);
    m["tokenizer.codebook_size"] = std::to_string(tokenizer.codebook_size);
    m["tokenizer.downsample_rate"] = std::to_string(tokenizer.downsample_rate);
    m["tokenizer.code_dim"] = std::to_string(tokenizer.code_dim);
    m["tokenizer.channels"] = std::to_string(tokenizer.channels);
    m["tokenizer.epochs"] = std::to_string(tokenizer_train.epochs);
    m["tokenizer.batch_size"] = std::to_string(tokenizer_train.batch_size);
    m["tokenizer.learning_rate"] = fmt_double(tokenizer_train.learning_rate);
    m["flow.base_channels"] = std::to_string(flow.base_channels);
    m["flow.time_embed_dim"] = std::to_string(flow.time_embed_dim);
    m["flow.epochs"] = std::to_string(flow_train.epochs);
    m["flow.batch_size"] = std::to_string(flow_train.batch_size);
    m["flow.learning_rate"] = fmt_double(flow_train.learning_rate);
    m["flow.steps"] = std::to_string(flow_steps);
    m["plan.intervals"] = format_interval_list(plan_intervals);
    m["generator.layers"] = std::to_string(generator.layers);
    m["generator.heads"] = std::to_string(generator.heads);
    m["generator.width"] = std::to_string(generator.width);
    m["generator.context"] = std::to_string(generator.context);
    m["generator.dropout"] = fmt_double(generator.dropout);
    m["generator.epochs"] = std::to_string(generator_train.epochs);
    m["generator.batch_size"] = std::to_string(generator_train.batch_size);
    m["generator.learning_rate"] = fmt_double(generator_train.learning_rate);
    m["sampling.temperature"] = fmt_double(sampling.temperature);
    m["sampling.top_k"] = std::to_string(sampling.top_k);
    m["eval.samples"] = std::to_string(eval_samples);
    return m;
}

std::string config_hash(const RunConfig& config) {
    ConfigMap m = config.to_map();
    // the hash covers result-determining settings only; where a run lives and
    // how many threads it uses must not change what it computes
    m.erase("run.out_dir");
    m.erase("run.threads");
    std::string canonical;
    for (const auto& [key, value] : m) {
        canonical += key;
        canonical += '=';
        canonical += value;
        canonical += '\n';
    }
    uint64_t h = crc64(reinterpret_cast<const uint8_t*>(canonical.data()),
                       canonical.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace motionplan
