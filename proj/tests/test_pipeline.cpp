#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "motionplan/pipeline.hpp"

using namespace motionplan;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const std::string& out_dir) {
    RunConfig cfg;
    cfg.seed = 17;
    cfg.out_dir = out_dir;
    cfg.corpus.train_count = 6;
    cfg.corpus.valid_count = 2;
    cfg.corpus.test_count = 2;
    cfg.corpus.max_segments = 2;
    cfg.tokenizer.codebook_size = 32;
    cfg.tokenizer.channels = 16;
    cfg.tokenizer.code_dim = 8;
    cfg.tokenizer_train.epochs = 2;
    cfg.tokenizer_train.batch_size = 4;
    cfg.tokenizer_train.warmup_steps = 4;
    cfg.flow.base_channels = 8;
    cfg.flow.max_channels = 16;
    cfg.flow.levels = 2;
    cfg.flow.norm_groups = 4;
    cfg.flow.time_embed_dim = 16;
    cfg.flow_train.epochs = 1;
    cfg.flow_train.batch_size = 4;
    cfg.flow_train.warmup_steps = 4;
    cfg.flow_steps = 3;
    cfg.generator.layers = 2;
    cfg.generator.heads = 2;
    cfg.generator.width = 32;
    cfg.generator.context = 512;
    cfg.generator.dropout = 0.0f;
    cfg.generator_train.epochs = 1;
    cfg.generator_train.batch_size = 4;
    cfg.generator_train.warmup_steps = 4;
    cfg.eval_samples = 2;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name)
        : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("stages refuse to run before their dependencies exist") {
    TempDir dir("mp_pipe_deps");
    RunConfig cfg = tiny_run(dir.path.string());
    CHECK_THROWS_WITH_AS(run_train_tokenizer(cfg),
                         doctest::Contains("synth-data"), std::exception);
    run_synth_data(cfg);
    CHECK_THROWS_WITH_AS(run_train_flow(cfg),
                         doctest::Contains("train-tokenizer"), std::exception);
    run_train_tokenizer(cfg);
    CHECK_THROWS_WITH_AS(run_generate(cfg, "1,2"),
                         doctest::Contains("train-"), std::exception);
}

TEST_CASE("tiny end-to-end pipeline produces all artifacts and reports") {
    TempDir dir("mp_pipe_smoke");
    RunConfig cfg = tiny_run(dir.path.string());
    run_synth_data(cfg);
    CHECK(fs::exists(corpus_path(cfg)));
    CHECK(fs::exists(norm_path(cfg)));

    run_train_tokenizer(cfg);
    CHECK(fs::exists(tokenizer_path(cfg)));
    run_train_flow(cfg);
    CHECK(fs::exists(flow_path(cfg)));
    run_train_generator(cfg);
    CHECK(fs::exists(generator_path(cfg)));

    GenerateMotionResult gen = run_generate(cfg, "1,3");
    CHECK(gen.motion.frames() >= 0);  // may be empty if sampling collapses

    auto rows = run_evaluate(cfg, "tokenizer");
    CHECK(!rows.empty());
    CHECK(fs::exists(dir.path / "metrics_tokenizer.csv"));
    for (const auto& row : rows) CHECK(!row.config_hash.empty());
}

TEST_CASE("evaluate rejects an unknown suite") {
    TempDir dir("mp_pipe_suite");
    RunConfig cfg = tiny_run(dir.path.string());
    run_synth_data(cfg);
    CHECK_THROWS(run_evaluate(cfg, "nonsense"));
}

TEST_CASE("synth-data output is byte-identical across reruns") {
    TempDir da("mp_pipe_det_a"), db("mp_pipe_det_b");
    RunConfig a = tiny_run(da.path.string());
    RunConfig b = tiny_run(db.path.string());
    run_synth_data(a);
    run_synth_data(b);
    CHECK(slurp(corpus_path(a)) == slurp(corpus_path(b)));
    CHECK(slurp(corpus_path(a) + ".manifest") ==
          slurp(corpus_path(b) + ".manifest"));
    CHECK(slurp(norm_path(a)) == slurp(norm_path(b)));
}

TEST_CASE("plan sweep grid lists the seven interval sets") {
    const auto& grid = plan_sweep_grid();
    REQUIRE(grid.size() == 7);
    CHECK(grid[0].empty());
    bool has_42 = false;
    bool has_842 = false;
    for (const auto& set : grid) {
        if (set == std::vector<int>{4, 2}) has_42 = true;
        if (set == std::vector<int>{8, 4, 2}) has_842 = true;
    }
    CHECK(has_42);
    CHECK(has_842);
}

TEST_CASE("effective_threads respects the environment cap") {
    RunConfig cfg;
    cfg.threads = 4;
    unsetenv("MOTIONPLAN_THREADS");
    CHECK(effective_threads(cfg) == 4);
    setenv("MOTIONPLAN_THREADS", "2", 1);
    CHECK(effective_threads(cfg) == 2);
    setenv("MOTIONPLAN_THREADS", "0", 1);
    CHECK(effective_threads(cfg) == 1);
    setenv("MOTIONPLAN_THREADS", "banana", 1);
    CHECK_THROWS(effective_threads(cfg));
    unsetenv("MOTIONPLAN_THREADS");
}

TEST_CASE("require_artifact names the missing stage") {
    CHECK_THROWS_WITH_AS(
        require_artifact("/definitely/not/here.ckpt", "train-tokenizer"),
        doctest::Contains("train-tokenizer"), std::exception);
}
