#include "motionplan/plan.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace motionplan {

void VocabularyLayout::validate() const {
    if (prompt_count < 1 || codebook_size < 2)
        throw std::runtime_error("vocabulary layout: invalid P or K");
    for (size_t i = 0; i < plan_intervals.size(); ++i) {
        if (plan_intervals[i] < 2)
            throw std::runtime_error(
                "vocabulary layout: plan intervals must be >= 2");
        if (i > 0 && plan_intervals[i] >= plan_intervals[i - 1])
            throw std::runtime_error(
                "vocabulary layout: plan intervals must be strictly "
                "descending");
    }
}

const PlanLevel* PlanHierarchy::level_with_interval(int interval) const {
    for (const auto& l : levels)
        if (l.interval == interval) return &l;
    return nullptr;
}

PlanLevel sample_plan(const std::vector<int>& tokens, int interval, int offset) {
    if (interval < 1) throw std::runtime_error("sample_plan: interval must be >= 1");
    if (offset < 1) throw std::runtime_error("sample_plan: offset must be >= 1");
    PlanLevel level;
    level.interval = interval;
    level.offset = offset;
    int l = static_cast<int>(tokens.size());
    // offset beyond the sequence yields a legally empty level
    for (int i = offset; i <= l; i += interval)
        level.token_ids.push_back(tokens[static_cast<size_t>(i - 1)]);
    return level;
}

int draw_offset(RngState& rng, int t_max) {
    if (t_max < 1) throw std::runtime_error("draw_offset: t_max must be >= 1");
    return static_cast<int>(rng.uniform_int(1, t_max));
}

AssembledSequence assemble(const std::vector<int>& prompt_ids,
                           const std::vector<int>& motion_tokens, int offset,
                           const VocabularyLayout& layout) {
    layout.validate();
    if (motion_tokens.empty())
        throw std::runtime_error("assemble: empty token sequence");
    if (offset < 1 || offset > layout.t_max())
        throw std::runtime_error("assemble: offset " + std::to_string(offset) +
                                 " outside [1," +
                                 std::to_string(layout.t_max()) + "]");
    for (size_t i = 0; i < prompt_ids.size(); ++i)
        if (!layout.is_prompt(prompt_ids[i]))
            throw std::runtime_error(
                "assemble: prompt position " + std::to_string(i) +
                " holds non-prompt id " + std::to_string(prompt_ids[i]));
    for (int id : motion_tokens)
        if (id < 0 || id >= layout.codebook_size)
            throw std::runtime_error("assemble: motion token " +
                                     std::to_string(id) + " out of range");

    AssembledSequence out;
    out.ids = prompt_ids;
    for (size_t lvl = 0; lvl < layout.plan_intervals.size(); ++lvl) {
        out.ids.push_back(layout.separator_id(lvl));
        PlanLevel plan =
            sample_plan(motion_tokens, layout.plan_intervals[lvl], offset);
        for (int id : plan.token_ids) out.ids.push_back(layout.to_motion_id(id));
    }
    out.ids.push_back(layout.s1_id());
    for (int id : motion_tokens) out.ids.push_back(layout.to_motion_id(id));
    out.ids.push_back(layout.eos_id());

    out.loss_mask.assign(out.ids.size(), 1);
    for (size_t i = 0; i < prompt_ids.size(); ++i) out.loss_mask[i] = 0;
    return out;
}

namespace {

// Recovers the shared offset when the parsed levels are consistent with one;
// falls back to 1.
int infer_offset(const PlanHierarchy& h, const VocabularyLayout& layout) {
    const PlanLevel* fine = h.level_with_interval(1);
    if (!fine || fine->token_ids.empty()) return 1;
    for (int b = 1; b <= layout.t_max(); ++b) {
        bool ok = true;
        for (const auto& level : h.levels) {
            if (level.interval == 1) continue;
            PlanLevel expect = sample_plan(fine->token_ids, level.interval, b);
            if (expect.token_ids != level.token_ids) {
                ok = false;
                break;
            }
        }
        if (ok) return b;
    }
    return 1;
}

}  // namespace

ParseResult parse(const std::vector<int>& stream,
                  const VocabularyLayout& layout) {
    layout.validate();
    ParseResult res;
    res.truncated = true;

    size_t nlevels = layout.plan_intervals.size() + 1;  // coarse levels + T=1
    auto interval_of = [&](size_t lvl) {
        return lvl < layout.plan_intervals.size() ? layout.plan_intervals[lvl]
                                                  : 1;
    };

    // first occurrence of each separator and of EOS
    std::vector<long> sep_pos(nlevels, -1);
    long eos_pos = -1;
    for (size_t i = 0; i < stream.size(); ++i) {
        int id = stream[i];
        if (id < 0 || id >= layout.vocab_size()) {
            res.diagnostics.push_back("out-of-range id " + std::to_string(id) +
                                      " at position " + std::to_string(i));
            continue;
        }
        for (size_t lvl = 0; lvl < nlevels; ++lvl)
            if (id == layout.separator_id(lvl) && sep_pos[lvl] < 0)
                sep_pos[lvl] = static_cast<long>(i);
        if (id == layout.eos_id() && eos_pos < 0) {
            eos_pos = static_cast<long>(i);
            res.truncated = false;
        }
    }

    // order check over the separators that are present
    long prev = -1;
    for (size_t lvl = 0; lvl < nlevels; ++lvl) {
        if (sep_pos[lvl] < 0) {
            res.diagnostics.push_back("missing level T=" +
                                      std::to_string(interval_of(lvl)));
            continue;
        }
        if (sep_pos[lvl] < prev)
            res.diagnostics.push_back("separator for level T=" +
                                      std::to_string(interval_of(lvl)) +
                                      " out of order at position " +
                                      std::to_string(sep_pos[lvl]));
        prev = std::max(prev, sep_pos[lvl]);
    }

    // prompt region = everything before the earliest separator (or EOS)
    long first_sep = eos_pos >= 0 ? eos_pos : static_cast<long>(stream.size());
    for (size_t lvl = 0; lvl < nlevels; ++lvl)
        if (sep_pos[lvl] >= 0) first_sep = std::min(first_sep, sep_pos[lvl]);
    for (long i = 0; i < first_sep; ++i) {
        int id = stream[static_cast<size_t>(i)];
        if (layout.is_prompt(id)) {
            res.prompt.push_back(id);
        } else if (id >= 0 && id < layout.vocab_size()) {
            res.diagnostics.push_back("non-prompt id " + std::to_string(id) +
                                      " in prompt region at position " +
                                      std::to_string(i));
        }
    }

    for (size_t lvl = 0; lvl < nlevels; ++lvl) {
        if (sep_pos[lvl] < 0) continue;
        long begin = sep_pos[lvl] + 1;
        long end = eos_pos >= 0 ? eos_pos : static_cast<long>(stream.size());
        for (size_t other = 0; other < nlevels; ++other)
            if (other != lvl && sep_pos[other] > sep_pos[lvl])
                end = std::min(end, sep_pos[other]);
        PlanLevel level;
        level.interval = interval_of(lvl);
        for (long i = begin; i < end; ++i) {
            int id = stream[static_cast<size_t>(i)];
            if (layout.is_motion(id))
                level.token_ids.push_back(layout.from_motion_id(id));
            else if (id >= 0 && id < layout.vocab_size() &&
                     id != layout.eos_id())
                res.diagnostics.push_back(
                    "unexpected id " + std::to_string(id) + " inside level T=" +
                    std::to_string(level.interval) + " at position " +
                    std::to_string(i));
        }
        res.hierarchy.levels.push_back(std::move(level));
    }
    if (stream.empty()) res.diagnostics.push_back("empty stream");

    if (const PlanLevel* fine = res.hierarchy.level_with_interval(1))
        res.hierarchy.source_length = static_cast<int>(fine->token_ids.size());
    // a coarse level is legally empty when the sequence is shorter than the
    // (unknown) offset, which can only happen below t_max tokens
    for (const auto& level : res.hierarchy.levels) {
        if (!level.token_ids.empty()) continue;
        if (level.interval == 1 ||
            res.hierarchy.source_length >= layout.t_max())
            res.diagnostics.push_back("empty level T=" +
                                      std::to_string(level.interval));
    }
    res.hierarchy.offset = infer_offset(res.hierarchy, layout);
    // the fine level always carries the full sequence, so its offset stays 1
    for (auto& level : res.hierarchy.levels)
        if (level.interval != 1) level.offset = res.hierarchy.offset;
    return res;
}

double adherence_in_level(const PlanLevel& coarse, const PlanLevel& finer) {
    if (coarse.token_ids.empty())
        throw std::runtime_error("adherence: empty coarse level");
    if (coarse.interval % finer.interval != 0)
        throw std::runtime_error(
            "adherence: finer interval must divide coarse interval");
    int matches = 0;
    int b = coarse.offset;
    // the finer level holds indices fb, fb + T_f, ...; for the full (T=1)
    // sequence that base index is 1 regardless of the sampling offset
    int fb = finer.interval == 1 ? 1 : finer.offset;
    for (size_t k = 0; k < coarse.token_ids.size(); ++k) {
        int abs_index = b + static_cast<int>(k) * coarse.interval;  // 1-based
        if ((abs_index - fb) % finer.interval != 0 || abs_index < fb) continue;
        int pos = (abs_index - fb) / finer.interval;                // 0-based
        if (pos < static_cast<int>(finer.token_ids.size()) &&
            finer.token_ids[static_cast<size_t>(pos)] == coarse.token_ids[k])
            ++matches;
    }
    return static_cast<double>(matches) / coarse.token_ids.size();
}

AdherenceRates plan_adherence(const PlanHierarchy& hierarchy) {
    AdherenceRates rates;
    const PlanLevel* l4 = hierarchy.level_with_interval(4);
    const PlanLevel* l2 = hierarchy.level_with_interval(2);
    const PlanLevel* l1 = hierarchy.level_with_interval(1);
    if (l4 && l1 && !l4->token_ids.empty())
        rates.rate_4_in_1 = adherence_in_level(*l4, *l1);
    if (l2 && l1 && !l2->token_ids.empty())
        rates.rate_2_in_1 = adherence_in_level(*l2, *l1);
    if (l4 && l2 && !l4->token_ids.empty())
        rates.rate_4_in_2 = adherence_in_level(*l4, *l2);
    return rates;
}

void save_assembled(const std::string& path, const AssembledSequence& seq,
                    const VocabularyLayout& layout) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    auto w16 = [&](uint16_t v) {
        char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
        out.write(b, 2);
    };
    auto w32 = [&](uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(v >> (8 * i));
        out.write(b, 4);
    };
    w16(static_cast<uint16_t>(layout.prompt_count));
    w16(static_cast<uint16_t>(layout.codebook_size));
    for (int id : seq.ids) w32(static_cast<uint32_t>(id));
}

AssembledSequence load_assembled(const std::string& path,
                                 const VocabularyLayout& layout) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::vector<uint8_t> buf(std::istreambuf_iterator<char>(in), {});
    if (buf.size() < 4 || (buf.size() - 4) % 4 != 0)
        throw std::runtime_error("assembled sequence parse error: bad size");
    int p = buf[0] | (buf[1] << 8);
    int k = buf[2] | (buf[3] << 8);
    if (p != layout.prompt_count || k != layout.codebook_size)
        throw std::runtime_error(
            "assembled sequence header (P=" + std::to_string(p) +
            ",K=" + std::to_string(k) + ") does not match layout (P=" +
            std::to_string(layout.prompt_count) +
            ",K=" + std::to_string(layout.codebook_size) + ")");
    AssembledSequence seq;
    for (size_t off = 4; off < buf.size(); off += 4) {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[off + i]) << (8 * i);
        seq.ids.push_back(static_cast<int>(v));
    }
    // the file stores ids only; the mask is implied by the prompt region
    seq.loss_mask.assign(seq.ids.size(), 1);
    for (size_t i = 0; i < seq.ids.size() && layout.is_prompt(seq.ids[i]); ++i)
        seq.loss_mask[i] = 0;
    return seq;
}

std::string format_hierarchy(const PlanHierarchy& hierarchy) {
    std::ostringstream os;
    const PlanLevel* fine = hierarchy.level_with_interval(1);
    int columns = fine ? static_cast<int>(fine->token_ids.size()) : 0;
    for (const auto& level : hierarchy.levels)
        columns = std::max(columns,
                           level.offset + (static_cast<int>(level.token_ids.size()) -
                                           1) * level.interval);
    for (const auto& level : hierarchy.levels) {
        os << "T=" << level.interval << " b=" << level.offset << " |";
        size_t k = 0;
        for (int i = 1; i <= columns; ++i) {
            std::string cell = ".";
            if (i >= level.offset && (i - level.offset) % level.interval == 0 &&
                k < level.token_ids.size())
                cell = std::to_string(level.token_ids[k++]);
            os << " ";
            for (size_t pad = cell.size(); pad < 4; ++pad) os << " ";
            os << cell;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace motionplan
