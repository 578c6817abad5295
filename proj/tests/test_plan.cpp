#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "doctest.h"
#include "motionplan/plan.hpp"

using namespace motionplan;

namespace {

VocabularyLayout small_layout() {
    VocabularyLayout layout;
    layout.prompt_count = 8;
    layout.codebook_size = 32;
    layout.plan_intervals = {4, 2};
    layout.validate();
    return layout;
}

// Independent reference: keep 1-based index i iff i >= b and (i - b) % T == 0.
std::vector<int> index_filter(const std::vector<int>& tokens, int T, int b) {
    std::vector<int> out;
    for (int i = 1; i <= static_cast<int>(tokens.size()); ++i)
        if (i >= b && (i - b) % T == 0) out.push_back(tokens[i - 1]);
    return out;
}

}  // namespace

TEST_CASE("sample_plan worked examples over nine tokens") {
    std::vector<int> tokens = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    PlanLevel a = sample_plan(tokens, 4, 1);
    CHECK(a.token_ids == std::vector<int>{1, 5, 9});
    PlanLevel b = sample_plan(tokens, 2, 2);
    CHECK(b.token_ids == std::vector<int>{2, 4, 6, 8});
    PlanLevel c = sample_plan(tokens, 1, 1);
    CHECK(c.token_ids == tokens);
}

TEST_CASE("sample_plan matches the index filter for all small cases") {
    RngState rng(71);
    for (int l = 0; l <= 64; ++l) {
        std::vector<int> tokens(l);
        for (int& t : tokens) t = static_cast<int>(rng.uniform_int(0, 31));
        for (int T : {1, 2, 4})
            for (int b = 1; b <= 4; ++b) {
                PlanLevel level = sample_plan(tokens, T, b);
                CHECK(level.token_ids == index_filter(tokens, T, b));
                CHECK(level.interval == T);
                CHECK(level.offset == b);
            }
    }
}

TEST_CASE("draw_offset covers {1..t_max} roughly uniformly") {
    RngState rng(72);
    std::vector<int> counts(5, 0);
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
        int b = draw_offset(rng, 4);
        REQUIRE(b >= 1);
        REQUIRE(b <= 4);
        counts[b]++;
    }
    for (int b = 1; b <= 4; ++b)
        CHECK(std::abs(counts[b] - n / 4) < 4 * std::sqrt(n * 0.25 * 0.75));
}

TEST_CASE("assemble lays out prompt, plans, separators and EOS for l = 6") {
    VocabularyLayout layout = small_layout();
    std::vector<int> prompt = {2, 5};
    std::vector<int> motion = {10, 11, 12, 13, 14, 15};
    AssembledSequence seq = assemble(prompt, motion, 1, layout);

    auto m = [&](int raw) { return layout.to_motion_id(raw); };
    std::vector<int> expected = {
        2, 5,
        layout.separator_id(0), m(10), m(14),               // T=4: m1, m5
        layout.separator_id(1), m(10), m(12), m(14),        // T=2: m1, m3, m5
        layout.s1_id(), m(10), m(11), m(12), m(13), m(14), m(15),
        layout.eos_id()};
    CHECK(seq.ids == expected);
    REQUIRE(seq.loss_mask.size() == seq.ids.size());
    CHECK_FALSE(seq.loss_mask[0]);
    CHECK_FALSE(seq.loss_mask[1]);
    for (size_t i = 2; i < seq.loss_mask.size(); ++i) CHECK(seq.loss_mask[i]);
}

TEST_CASE("assemble handles a single-token motion") {
    VocabularyLayout layout = small_layout();
    AssembledSequence seq = assemble({0}, {7}, 1, layout);
    auto m = [&](int raw) { return layout.to_motion_id(raw); };
    std::vector<int> expected = {0,
                                 layout.separator_id(0), m(7),
                                 layout.separator_id(1), m(7),
                                 layout.s1_id(), m(7),
                                 layout.eos_id()};
    CHECK(seq.ids == expected);
}

TEST_CASE("assemble/parse round trips 1000 random cases exactly") {
    VocabularyLayout layout = small_layout();
    RngState rng(73);
    for (int trial = 0; trial < 1000; ++trial) {
        int np = static_cast<int>(rng.uniform_int(1, 3));
        std::vector<int> prompt(np);
        for (int& p : prompt)
            p = static_cast<int>(rng.uniform_int(0, layout.prompt_count - 1));
        int l = static_cast<int>(rng.uniform_int(1, 40));
        std::vector<int> motion(l);
        for (int& t : motion)
            t = static_cast<int>(rng.uniform_int(0, layout.codebook_size - 1));
        int offset = draw_offset(rng, layout.t_max());

        AssembledSequence seq = assemble(prompt, motion, offset, layout);
        ParseResult parsed = parse(seq.ids, layout);
        REQUIRE(parsed.well_formed());
        CHECK(parsed.prompt == prompt);
        const PlanLevel* fine = parsed.hierarchy.level_with_interval(1);
        REQUIRE(fine != nullptr);
        CHECK(fine->token_ids == motion);
        for (int T : {4, 2}) {
            const PlanLevel* lvl = parsed.hierarchy.level_with_interval(T);
            REQUIRE(lvl != nullptr);
            CHECK(lvl->token_ids == index_filter(motion, T, offset));
        }
    }
}

TEST_CASE("parse reports a missing separator without crashing") {
    VocabularyLayout layout = small_layout();
    AssembledSequence seq = assemble({1}, {3, 4, 5, 6}, 1, layout);
    // drop the S2 separator
    std::vector<int> broken;
    for (int id : seq.ids)
        if (id != layout.separator_id(1)) broken.push_back(id);
    ParseResult parsed = parse(broken, layout);
    CHECK_FALSE(parsed.well_formed());
    CHECK(!parsed.diagnostics.empty());
}

TEST_CASE("parse of an empty stream is tolerant") {
    VocabularyLayout layout = small_layout();
    ParseResult parsed = parse({}, layout);
    CHECK_FALSE(parsed.well_formed());
    CHECK(parsed.truncated);
}

TEST_CASE("parse flags a stream with no EOS as truncated") {
    VocabularyLayout layout = small_layout();
    AssembledSequence seq = assemble({1}, {3, 4, 5}, 1, layout);
    seq.ids.pop_back();
    ParseResult parsed = parse(seq.ids, layout);
    CHECK(parsed.truncated);
}

TEST_CASE("adherence is 1.0 on faithfully assembled plans") {
    VocabularyLayout layout = small_layout();
    RngState rng(74);
    std::vector<int> motion(17);
    for (int& t : motion)
        t = static_cast<int>(rng.uniform_int(0, layout.codebook_size - 1));
    AssembledSequence seq = assemble({0}, motion, 2, layout);
    ParseResult parsed = parse(seq.ids, layout);
    REQUIRE(parsed.well_formed());
    AdherenceRates rates = plan_adherence(parsed.hierarchy);
    CHECK(rates.rate_4_in_1 == doctest::Approx(1.0));
    CHECK(rates.rate_2_in_1 == doctest::Approx(1.0));
    CHECK(rates.rate_4_in_2 == doctest::Approx(1.0));
}

TEST_CASE("adherence counts a flipped token as 2 of 3") {
    PlanLevel coarse;
    coarse.interval = 4;
    coarse.offset = 1;
    coarse.token_ids = {1, 5, 9};
    PlanLevel fine;
    fine.interval = 1;
    fine.offset = 1;
    fine.token_ids = {1, 2, 3, 4, 99, 6, 7, 8, 9};  // position 5 flipped
    CHECK(adherence_in_level(coarse, fine) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("coarse positions beyond the finer level count as mismatches") {
    PlanLevel coarse;
    coarse.interval = 2;
    coarse.offset = 1;
    coarse.token_ids = {1, 3, 5};  // expects fine length >= 5
    PlanLevel fine;
    fine.interval = 1;
    fine.offset = 1;
    fine.token_ids = {1, 2, 3};
    CHECK(adherence_in_level(coarse, fine) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("assembled sequence save/load round trip") {
    VocabularyLayout layout = small_layout();
    AssembledSequence seq = assemble({3, 6}, {0, 31, 15}, 1, layout);
    std::string path = "./assembled_test.bin";
    save_assembled(path, seq, layout);
    AssembledSequence back = load_assembled(path, layout);
    CHECK(back.ids == seq.ids);
    CHECK(back.loss_mask == seq.loss_mask);
    std::remove(path.c_str());
}

TEST_CASE("layout validation rejects non-descending intervals") {
    VocabularyLayout layout = small_layout();
    layout.plan_intervals = {2, 4};
    CHECK_THROWS(layout.validate());
}
