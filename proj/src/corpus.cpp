#include "motionplan/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace motionplan {

namespace {

constexpr double kTwoPi = 6.283185307179586;

double type_frequency(int type) { return 0.5 + 0.25 * type; }
double type_amplitude(int type) { return 1.0 + 0.1 * type; }

// Phase for (seed, segment index, type, dim); pure function, so regeneration
// is bit-identical.
// Phases are type-specific (shared by every motion drawn from the same
// corpus seed); per-motion variety comes from the script and from segment
// start offsets against the global time base.
double segment_phase(uint64_t seed, int type, int dim) {
    uint64_t h = RngState::mix(
        seed ^ RngState::mix((static_cast<uint64_t>(type) << 16) ^
                             static_cast<uint64_t>(dim)));
    return static_cast<double>(h >> 11) * 0x1.0p-53 * kTwoPi;
}

double segment_value(uint64_t seed, int type, int dim, double t) {
    return type_amplitude(type) *
           std::sin(kTwoPi * type_frequency(type) * t +
                    segment_phase(seed, type, dim));
}

}  // namespace

void MotionSequence::validate() const {
    if (d_m <= 0) throw std::runtime_error("motion: d_m must be positive");
    if (data.empty() || data.size() % d_m != 0)
        throw std::runtime_error("motion: frame data size not a multiple of d_m");
    for (float v : data)
        if (!std::isfinite(v))
            throw std::runtime_error("motion: non-finite value");
}

int SegmentScript::total_frames() const {
    int n = 0;
    for (const auto& s : segments) n += s.length_frames;
    return n;
}

void SegmentScript::validate(const CorpusParams& params) const {
    if (segments.empty() || segments.size() > 5)
        throw std::runtime_error("script: must have between 1 and 5 segments");
    for (const auto& s : segments) {
        if (s.type < 0 || s.type >= params.num_segment_types)
            throw std::runtime_error("script: segment type " +
                                     std::to_string(s.type) + " out of range");
        if (s.length_frames < params.min_segment_frames ||
            s.length_frames > params.max_segment_frames)
            throw std::runtime_error("script: segment length " +
                                     std::to_string(s.length_frames) +
                                     " outside [" +
                                     std::to_string(params.min_segment_frames) +
                                     "," +
                                     std::to_string(params.max_segment_frames) +
                                     "]");
    }
    if (total_frames() > 1000)
        throw std::runtime_error("script: total frames exceed 1000");
}

std::string SegmentScript::to_string() const {
    std::ostringstream os;
    for (size_t i = 0; i < segments.size(); ++i) {
        if (i) os << ",";
        os << segments[i].type << ":" << segments[i].length_frames;
    }
    return os.str();
}

SegmentScript SegmentScript::from_string(const std::string& s) {
    SegmentScript script;
    std::istringstream is(s);
    std::string part;
    while (std::getline(is, part, ',')) {
        size_t colon = part.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("script parse error: missing ':' in \"" +
                                     part + "\"");
        ScriptSegment seg;
        seg.type = std::stoi(part.substr(0, colon));
        seg.length_frames = std::stoi(part.substr(colon + 1));
        script.segments.push_back(seg);
    }
    return script;
}

void CorpusManifest::validate() const {
    std::set<uint64_t> seen;
    for (const auto& [split, entries] : splits)
        for (const auto& e : entries)
            if (!seen.insert(e.id).second)
                throw std::runtime_error("manifest: motion id " +
                                         std::to_string(e.id) +
                                         " appears in multiple splits");
}

MotionSequence synthesize_motion(const SegmentScript& script, uint64_t seed,
                                 const CorpusParams& params) {
    script.validate(params);
    MotionSequence out;
    out.d_m = params.d_m;
    out.frame_rate_hz = params.frame_rate_hz;
    int n = script.total_frames();
    out.data.assign(static_cast<size_t>(n) * params.d_m, 0.0f);

    // segment start frames
    std::vector<int> starts(script.segments.size());
    int acc = 0;
    for (size_t s = 0; s < script.segments.size(); ++s) {
        starts[s] = acc;
        acc += script.segments[s].length_frames;
    }

    for (size_t s = 0; s < script.segments.size(); ++s) {
        int type = script.segments[s].type;
        int begin = starts[s];
        int end = begin + script.segments[s].length_frames;
        for (int i = begin; i < end; ++i) {
            double t = i / params.frame_rate_hz;
            for (int dim = 0; dim < params.d_m; ++dim)
                out.at(i, dim) =
                    static_cast<float>(segment_value(seed, type, dim, t));
        }
    }

    // linear cross-fade centred on each interior boundary, so the effective
    // transition point stays at the scripted frame
    for (size_t s = 1; s < script.segments.size(); ++s) {
        int b = starts[s];
        int prev_type = script.segments[s - 1].type;
        int next_type = script.segments[s].type;
        for (int j = 0; j < params.crossfade_frames; ++j) {
            int i = b - params.crossfade_frames / 2 + j;
            if (i < 0 || i >= n) continue;
            double w = static_cast<double>(j + 1) / (params.crossfade_frames + 1);
            double t = i / params.frame_rate_hz;
            for (int dim = 0; dim < params.d_m; ++dim) {
                double pv = segment_value(seed, prev_type, dim, t);
                double nv = segment_value(seed, next_type, dim, t);
                out.at(i, dim) = static_cast<float>((1.0 - w) * pv + w * nv);
            }
        }
    }
    return out;
}

namespace {

// Least-squares residual of window `x` (len frames, d_m dims starting at
// frame `w0`) against type-k's sinusoid basis {sin(2pi f t), cos(2pi f t)},
// free coefficients per dimension. Exact representation of any phase-shifted
// sinusoid at that frequency.
double window_residual(const MotionSequence& m, int w0, int len, int type) {
    double freq = type_frequency(type);
    double fps = m.frame_rate_hz;
    // normal equations for the shared 2-column basis
    double s_ss = 0, s_cc = 0, s_sc = 0;
    std::vector<double> bs(len), bc(len);
    for (int i = 0; i < len; ++i) {
        double t = (w0 + i) / fps;
        bs[i] = std::sin(kTwoPi * freq * t);
        bc[i] = std::cos(kTwoPi * freq * t);
        s_ss += bs[i] * bs[i];
        s_cc += bc[i] * bc[i];
        s_sc += bs[i] * bc[i];
    }
    double det = s_ss * s_cc - s_sc * s_sc;
    double total = 0.0;
    for (int dim = 0; dim < m.d_m; ++dim) {
        double s_sy = 0, s_cy = 0, s_yy = 0;
        for (int i = 0; i < len; ++i) {
            double y = m.at(w0 + i, dim);
            s_sy += bs[i] * y;
            s_cy += bc[i] * y;
            s_yy += y * y;
        }
        double a, b;
        if (std::fabs(det) < 1e-12) {
            a = s_ss > 1e-12 ? s_sy / s_ss : 0.0;
            b = 0.0;
        } else {
            a = (s_cc * s_sy - s_sc * s_cy) / det;
            b = (s_ss * s_cy - s_sc * s_sy) / det;
        }
        double resid = s_yy - a * s_sy - b * s_cy;
        total += std::max(resid, 0.0);
    }
    return total;
}

}  // namespace

std::vector<SegmentRun> classify_segments(const MotionSequence& motion,
                                          const CorpusParams& params) {
    motion.validate();
    if (motion.d_m != params.d_m)
        throw std::runtime_error("classify_segments: d_m mismatch");
    const int window = 16;
    int n = motion.frames();
    if (n < window)
        throw std::runtime_error("classify_segments: motion shorter than " +
                                 std::to_string(window) + " frames");

    int num_windows = n - window + 1;
    std::vector<int> window_label(num_windows);
    for (int w = 0; w < num_windows; ++w) {
        int best = 0;
        double best_resid = window_residual(motion, w, window, 0);
        for (int k = 1; k < params.num_segment_types; ++k) {
            double r = window_residual(motion, w, window, k);
            if (r < best_resid) {
                best_resid = r;
                best = k;
            }
        }
        window_label[w] = best;
    }

    // frame i takes the label of the window centred on it (clamped at the
    // edges); start-aligned labels would shift every boundary early by half
    // a window
    std::vector<int> frame_label(n);
    for (int i = 0; i < n; ++i) {
        int w = std::min(std::max(i - window / 2, 0), num_windows - 1);
        frame_label[i] = window_label[w];
    }

    std::vector<SegmentRun> runs;
    int start = 0;
    for (int i = 1; i <= n; ++i) {
        if (i == n || frame_label[i] != frame_label[start]) {
            SegmentRun r{frame_label[start], start, i - 1};
            if (r.end_frame - r.start_frame + 1 >= 8) runs.push_back(r);
            start = i;
        }
    }
    return runs;
}

NormStats compute_norm_stats(const std::vector<MotionSequence>& corpus) {
    if (corpus.empty())
        throw std::runtime_error("compute_norm_stats: empty corpus");
    int d_m = corpus[0].d_m;
    NormStats stats;
    stats.mean.assign(d_m, 0.0f);
    stats.std_dev.assign(d_m, 0.0f);
    std::vector<double> sum(d_m, 0.0), sum2(d_m, 0.0);
    int64_t count = 0;
    for (const auto& m : corpus) {
        if (m.d_m != d_m)
            throw std::runtime_error("compute_norm_stats: mixed d_m");
        for (int i = 0; i < m.frames(); ++i)
            for (int dim = 0; dim < d_m; ++dim) {
                double v = m.at(i, dim);
                sum[dim] += v;
                sum2[dim] += v * v;
            }
        count += m.frames();
    }
    for (int dim = 0; dim < d_m; ++dim) {
        double mu = sum[dim] / count;
        double var = sum2[dim] / count - mu * mu;
        if (var < 0.0) var = 0.0;
        double sd = std::sqrt(var);
        stats.mean[dim] = static_cast<float>(mu);
        if (sd < 1e-6) {
            sd = 1e-6;
            stats.clamped = true;
        }
        stats.std_dev[dim] = static_cast<float>(sd);
    }
    if (stats.clamped)
        std::cerr << "warning: zero-variance dimension in norm stats, std "
                     "clamped to 1e-6\n";
    return stats;
}

MotionSequence normalize(const MotionSequence& motion, const NormStats& stats) {
    MotionSequence out = motion;
    for (int i = 0; i < out.frames(); ++i)
        for (int dim = 0; dim < out.d_m; ++dim)
            out.at(i, dim) =
                (motion.at(i, dim) - stats.mean[dim]) / stats.std_dev[dim];
    return out;
}

MotionSequence denormalize(const MotionSequence& motion, const NormStats& stats) {
    MotionSequence out = motion;
    for (int i = 0; i < out.frames(); ++i)
        for (int dim = 0; dim < out.d_m; ++dim)
            out.at(i, dim) =
                motion.at(i, dim) * stats.std_dev[dim] + stats.mean[dim];
    return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr char kCorpusMagic[8] = {'M', 'O', 'C', 'O', 'R', 'P', '0', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
    out.write(b, 4);
}

void write_u64(std::ostream& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
    out.write(b, 8);
}

struct BinReader {
    std::vector<uint8_t> buf;
    size_t pos = 0;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw std::runtime_error("corpus parse error at byte offset " +
                                     std::to_string(pos) + ": truncated " +
                                     what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
};

}  // namespace

void save_corpus(const CorpusManifest& manifest,
                 const std::map<uint64_t, MotionSequence>& motions,
                 const std::string& path) {
    manifest.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    out.write(kCorpusMagic, 8);
    write_u32(out, static_cast<uint32_t>(manifest.d_m));
    write_u32(out, static_cast<uint32_t>(manifest.frame_rate_hz * 1000.0 + 0.5));
    write_u64(out, motions.size());
    for (const auto& [id, m] : motions) {
        if (m.d_m != manifest.d_m)
            throw std::runtime_error("save_corpus: motion " + std::to_string(id) +
                                     " d_m mismatch vs manifest");
        write_u64(out, id);
        write_u32(out, static_cast<uint32_t>(m.frames()));
        out.write(reinterpret_cast<const char*>(m.data.data()),
                  static_cast<std::streamsize>(m.data.size() * 4));
    }
    if (!out) throw std::runtime_error("write failed: " + path);

    std::ofstream mf(path + ".manifest");
    if (!mf)
        throw std::runtime_error("cannot write manifest: " + path + ".manifest");
    mf << "d_m = " << manifest.d_m << "\n";
    mf << "frame_rate_milli_hz = "
       << static_cast<uint32_t>(manifest.frame_rate_hz * 1000.0 + 0.5) << "\n";
    mf << "seed = " << manifest.seed << "\n";
    std::string split_names;
    for (const auto& [split, entries] : manifest.splits) {
        if (!split_names.empty()) split_names += ",";
        split_names += split;
    }
    mf << "splits = " << split_names << "\n";
    for (const auto& [split, entries] : manifest.splits)
        for (const auto& e : entries) {
            mf << "motion." << e.id << ".split = " << split << "\n";
            mf << "motion." << e.id << ".script = " << e.script.to_string()
               << "\n";
            std::ostringstream ps;
            for (size_t i = 0; i < e.prompt_ids.size(); ++i)
                ps << (i ? "," : "") << e.prompt_ids[i];
            mf << "motion." << e.id << ".prompt = " << ps.str() << "\n";
        }
}

std::pair<CorpusManifest, std::map<uint64_t, MotionSequence>> load_corpus(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    BinReader r;
    r.buf.assign(std::istreambuf_iterator<char>(in), {});
    if (r.buf.size() < 8 || std::memcmp(r.buf.data(), kCorpusMagic, 8) != 0)
        throw std::runtime_error(
            "corpus parse error at byte offset 0: bad magic in " + path);
    r.pos = 8;
    uint32_t d_m = r.u32("d_m");
    uint32_t frame_rate_milli_hz = r.u32("frame rate");
    uint64_t count = r.u64("motion count");
    std::map<uint64_t, MotionSequence> motions;
    for (uint64_t k = 0; k < count; ++k) {
        uint64_t id = r.u64("motion id");
        uint32_t n = r.u32("frame count");
        MotionSequence m;
        m.d_m = static_cast<int>(d_m);
        m.frame_rate_hz = frame_rate_milli_hz / 1000.0;
        size_t bytes = static_cast<size_t>(n) * d_m * 4;
        r.need(bytes, "frame data");
        m.data.resize(static_cast<size_t>(n) * d_m);
        std::memcpy(m.data.data(), r.buf.data() + r.pos, bytes);
        r.pos += bytes;
        motions.emplace(id, std::move(m));
    }

    // manifest
    std::ifstream mf(path + ".manifest");
    if (!mf)
        throw std::runtime_error("cannot open manifest: " + path + ".manifest");
    CorpusManifest manifest;
    manifest.d_m = static_cast<int>(d_m);
    manifest.frame_rate_hz = frame_rate_milli_hz / 1000.0;
    std::map<uint64_t, CorpusEntry> entries;
    std::map<uint64_t, std::string> entry_split;
    std::string line;
    int lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find(" = ");
        if (eq == std::string::npos)
            throw std::runtime_error("manifest parse error at line " +
                                     std::to_string(lineno) +
                                     ": expected 'key = value'");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 3);
        if (key == "d_m") {
            if (std::stoi(value) != static_cast<int>(d_m))
                throw std::runtime_error(
                    "corpus validation error: manifest d_m " + value +
                    " does not match binary d_m " + std::to_string(d_m));
        } else if (key == "frame_rate_milli_hz") {
            // informational; binary header is authoritative
        } else if (key == "seed") {
            manifest.seed = std::stoull(value);
        } else if (key == "splits") {
            // order recorded implicitly by entries
        } else if (key.rfind("motion.", 0) == 0) {
            size_t dot = key.find('.', 7);
            if (dot == std::string::npos)
                throw std::runtime_error("manifest parse error at line " +
                                         std::to_string(lineno));
            uint64_t id = std::stoull(key.substr(7, dot - 7));
            std::string field = key.substr(dot + 1);
            CorpusEntry& e = entries[id];
            e.id = id;
            if (field == "split") {
                entry_split[id] = value;
            } else if (field == "script") {
                e.script = SegmentScript::from_string(value);
            } else if (field == "prompt") {
                e.prompt_ids.clear();
                std::istringstream is(value);
                std::string tok;
                while (std::getline(is, tok, ','))
                    if (!tok.empty()) e.prompt_ids.push_back(std::stoi(tok));
            } else {
                throw std::runtime_error("manifest parse error at line " +
                                         std::to_string(lineno) +
                                         ": unknown field " + field);
            }
        }
    }
    for (const auto& [id, e] : entries) {
        auto it = entry_split.find(id);
        if (it == entry_split.end())
            throw std::runtime_error("manifest: motion " + std::to_string(id) +
                                     " has no split");
        if (!motions.count(id))
            throw std::runtime_error(
                "corpus validation error: manifest motion " +
                std::to_string(id) + " missing from binary file");
        manifest.splits[it->second].push_back(e);
    }
    manifest.validate();
    return {std::move(manifest), std::move(motions)};
}

std::pair<CorpusManifest, std::map<uint64_t, MotionSequence>> build_corpus(
    const CorpusSpec& spec, uint64_t seed) {
    RngState rng(seed);
    CorpusManifest manifest;
    manifest.d_m = spec.params.d_m;
    manifest.frame_rate_hz = spec.params.frame_rate_hz;
    manifest.seed = seed;
    std::map<uint64_t, MotionSequence> motions;

    uint64_t next_id = 1;
    auto make_split = [&](const std::string& name, int count) {
        for (int i = 0; i < count; ++i) {
            CorpusEntry e;
            e.id = next_id++;
            int nseg = static_cast<int>(rng.uniform_int(1, spec.max_segments));
            for (int s = 0; s < nseg; ++s) {
                ScriptSegment seg;
                seg.type = static_cast<int>(
                    rng.uniform_int(0, spec.params.num_segment_types - 1));
                // avoid back-to-back identical types so the oracle sees clean
                // boundaries
                if (s > 0 && seg.type == e.script.segments[s - 1].type)
                    seg.type =
                        (seg.type + 1) % spec.params.num_segment_types;
                seg.length_frames = static_cast<int>(
                    rng.uniform_int(spec.params.min_segment_frames,
                                    spec.params.max_segment_frames));
                e.script.segments.push_back(seg);
            }
            for (const auto& s : e.script.segments)
                e.prompt_ids.push_back(s.type);
            // one shared synthesis seed: type content is common across the
            // corpus, so held-out motions stay on the training manifold
            motions.emplace(e.id,
                            synthesize_motion(e.script, seed, spec.params));
            manifest.splits[name].push_back(e);
        }
    };
    make_split("train", spec.train_count);
    make_split("valid", spec.valid_count);
    make_split("test", spec.test_count);
    return {std::move(manifest), std::move(motions)};
}

}  // namespace motionplan
