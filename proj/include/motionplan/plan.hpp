#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motionplan/rng.hpp"

namespace motionplan {

// Hierarchical plan codec: interval-sampled coarse plans are concatenated
// with separator tokens into one training/inference sequence
//   U = prompt + [S4] + M_{b;4} + [S2] + M_{b;2} + [S1] + M + [EOS]
// and generated streams are parsed back, tolerantly, into plan hierarchies.

struct VocabularyLayout {
    int prompt_count = 8;                 // P: prompt ids occupy [0, P)
    int codebook_size = 4096;             // K: motion ids occupy [P, P+K)
    std::vector<int> plan_intervals{4, 2};  // coarse intervals, descending

    void validate() const;

    int motion_base() const { return prompt_count; }
    // separators sit after the motion range: one per coarse interval, then S1
    int separator_id(size_t level) const {
        return prompt_count + codebook_size + static_cast<int>(level);
    }
    int s1_id() const { return separator_id(plan_intervals.size()); }
    int bos_id() const { return s1_id() + 1; }
    int eos_id() const { return s1_id() + 2; }
    int pad_id() const { return s1_id() + 3; }
    int vocab_size() const { return pad_id() + 1; }
    int t_max() const {
        return plan_intervals.empty() ? 1 : plan_intervals.front();
    }

    bool is_prompt(int id) const { return id >= 0 && id < prompt_count; }
    bool is_motion(int id) const {
        return id >= prompt_count && id < prompt_count + codebook_size;
    }
    int to_motion_id(int raw) const { return raw + prompt_count; }
    int from_motion_id(int id) const { return id - prompt_count; }
};

struct PlanLevel {
    int interval = 1;  // T
    int offset = 1;    // b, 1-based
    std::vector<int> token_ids;  // raw motion token ids in [0, K)
};

struct PlanHierarchy {
    std::vector<PlanLevel> levels;  // coarse to fine; last level has T=1
    int offset = 1;
    int source_length = 0;  // l

    const PlanLevel* level_with_interval(int interval) const;
};

struct AssembledSequence {
    std::vector<int> ids;
    std::vector<char> loss_mask;  // false over the prompt, true elsewhere
};

struct ParseResult {
    std::vector<int> prompt;  // prompt-region ids as found
    PlanHierarchy hierarchy;  // offset unknown at parse time, kept at 1
    std::vector<std::string> diagnostics;
    bool truncated = false;  // no EOS seen
    bool well_formed() const { return diagnostics.empty() && !truncated; }
};

// Eq-style interval sampling over 1-based indices: picks m_b, m_{b+T}, ...
PlanLevel sample_plan(const std::vector<int>& tokens, int interval, int offset);

// uniform in {1, ..., t_max}
int draw_offset(RngState& rng, int t_max = 4);

AssembledSequence assemble(const std::vector<int>& prompt_ids,
                           const std::vector<int>& motion_tokens, int offset,
                           const VocabularyLayout& layout);

ParseResult parse(const std::vector<int>& stream,
                  const VocabularyLayout& layout);

struct AdherenceRates {
    double rate_4_in_1 = 0.0;
    double rate_2_in_1 = 0.0;
    double rate_4_in_2 = 0.0;
};

// Fraction of coarse plan positions whose token reappears at the matching
// position of the finer level; positions beyond the finer sequence count as
// mismatches.
double adherence_in_level(const PlanLevel& coarse, const PlanLevel& finer);
AdherenceRates plan_adherence(const PlanHierarchy& hierarchy);

// u16 P, u16 K, then u32 ids
void save_assembled(const std::string& path, const AssembledSequence& seq,
                    const VocabularyLayout& layout);
AssembledSequence load_assembled(const std::string& path,
                                 const VocabularyLayout& layout);

// aligned text columns for the plan-dump subcommand
std::string format_hierarchy(const PlanHierarchy& hierarchy);

}  // namespace motionplan
