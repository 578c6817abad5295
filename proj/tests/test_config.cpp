#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "motionplan/config.hpp"

using namespace motionplan;

TEST_CASE("config text parsing handles sections, comments and blanks") {
    ConfigMap map = parse_config_text(
        "# header comment\n"
        "[run]\n"
        "seed = 42   # trailing comment\n"
        "\n"
        "[tokenizer]\n"
        "codebook_size=512\n");
    CHECK(map.at("run.seed") == "42");
    CHECK(map.at("tokenizer.codebook_size") == "512");
    CHECK(map.count("header") == 0);
}

TEST_CASE("malformed lines report their line number") {
    CHECK_THROWS_WITH_AS(parse_config_text("[run]\nseed 42\n"),
                         doctest::Contains("line 2"), std::exception);
    CHECK_THROWS(parse_config_text("key_before_section = 1\n"));
}

TEST_CASE("overrides replace values and reject malformed input") {
    ConfigMap map;
    map["run.seed"] = "7";
    apply_override(map, "run.seed=11");
    CHECK(map.at("run.seed") == "11");
    apply_override(map, "plan.intervals=8,4,2");
    CHECK(map.at("plan.intervals") == "8,4,2");
    CHECK_THROWS(apply_override(map, "no_equals_sign"));
    CHECK_THROWS(apply_override(map, "noseparator=1"));
}

TEST_CASE("RunConfig round trips through its canonical map") {
    RunConfig cfg;
    cfg.seed = 123;
    cfg.out_dir = "runs/x";
    cfg.tokenizer.codebook_size = 512;
    cfg.tokenizer.downsample_rate = 4;
    cfg.plan_intervals = {8, 4, 2};
    cfg.sampling.temperature = 0.5f;
    cfg.flow_steps = 10;
    RunConfig back = RunConfig::from_map(cfg.to_map());
    CHECK(back.seed == 123);
    CHECK(back.out_dir == "runs/x");
    CHECK(back.tokenizer.codebook_size == 512);
    CHECK(back.tokenizer.downsample_rate == 4);
    CHECK(back.plan_intervals == std::vector<int>{8, 4, 2});
    CHECK(back.sampling.temperature == doctest::Approx(0.5f));
    CHECK(back.flow_steps == 10);
}

TEST_CASE("config hash is stable and sensitive to changes") {
    RunConfig a;
    RunConfig b;
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(a).size() == 16);
    b.seed = 8;
    CHECK(config_hash(a) != config_hash(b));
    RunConfig c;
    c.sampling.temperature = 0.9999f;
    CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("interval list parsing enforces strictly descending values") {
    CHECK(parse_interval_list("4,2") == std::vector<int>{4, 2});
    CHECK(parse_interval_list("8,4,2") == std::vector<int>{8, 4, 2});
    CHECK(parse_interval_list("") == std::vector<int>{});
    CHECK(format_interval_list({4, 2}) == "4,2");
    CHECK(format_interval_list({}) == "");
    CHECK_THROWS(parse_interval_list("2,4"));
    CHECK_THROWS(parse_interval_list("4,4"));
    CHECK_THROWS(parse_interval_list("4,1"));  // finest coarse interval is 2
    CHECK_THROWS(parse_interval_list("a,b"));
}

TEST_CASE("config file loading matches inline parsing") {
    std::string path = "./config_test.ini";
    {
        std::ofstream f(path);
        f << "[run]\nseed = 5\n[eval]\nsamples = 12\n";
    }
    ConfigMap map = load_config_file(path);
    CHECK(map.at("run.seed") == "5");
    CHECK(map.at("eval.samples") == "12");
    RunConfig cfg = RunConfig::from_map(map);
    CHECK(cfg.seed == 5);
    CHECK(cfg.eval_samples == 12);
    std::remove(path.c_str());
    CHECK_THROWS(load_config_file("./does_not_exist.ini"));
}

TEST_CASE("unknown keys are rejected") {
    ConfigMap map;
    map["run.sead"] = "7";  // typo
    CHECK_THROWS(RunConfig::from_map(map));
}
