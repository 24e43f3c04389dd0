#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tkgr/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace tkgr;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small synthetic dataset on disk plus a config tuned for test speed.
PipelineConfig small_run(const fs::path& base, std::uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.entities = 40;
    spec.horizon = 40;
    spec.noise_ratio = 0.1;
    spec.seed = 11;
    auto data = generate_synthetic_tkg(spec);
    auto write = [&](const char* name, const std::string& content) {
        std::ofstream out(base / name);
        out << content;
    };
    write("train.txt", data.train_tsv);
    write("valid.txt", data.valid_tsv);
    write("test.txt", data.test_tsv);

    PipelineConfig cfg;
    cfg.train_path = (base / "train.txt").string();
    cfg.valid_path = (base / "valid.txt").string();
    cfg.test_path = (base / "test.txt").string();
    cfg.dim = 8;
    cfg.time_dim = 4;
    cfg.attn_dim = 8;
    cfg.layers = 2;
    cfg.k_candidates = 5;
    cfg.budget = 4;
    cfg.epochs = 2;
    cfg.aggregator_epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = seed;
    cfg.directions = "object";
    cfg.max_train_queries = 30;
    cfg.max_eval_queries = 12;
    cfg.editor = "rules";
    cfg.run_dir = (base / "run").string();
    cfg.gateway.offline_embed_dim = 12;
    return cfg;
}

}  // namespace

TEST_CASE("section configs parse with defaults and overrides") {
    auto cfg = PipelineConfig::from_text(
        "# pipeline settings\n"
        "[data]\n"
        "train = /tmp/train.txt\n"
        "valid = /tmp/valid.txt\n"
        "test = /tmp/test.txt\n"
        "[model]\n"
        "dim = 64\n"
        "k = 10\n"
        "[train]\n"
        "learning_rate = 0.003\n"
        "batch_size = 32\n"
        "[edit]\n"
        "editor = llm\n"
        "[gateway]\n"
        "backend = http\n"
        "endpoint = https://example.test/v1\n");
    CHECK(cfg.train_path == "/tmp/train.txt");
    CHECK(cfg.dim == 64);
    CHECK(cfg.k_candidates == 10);
    CHECK(cfg.learning_rate == doctest::Approx(0.003));
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.editor == "llm");
    CHECK(cfg.gateway.backend == "http");
    // untouched defaults follow the tuned configuration
    CHECK(cfg.layers == 3);
    CHECK(cfg.epochs == 5);
}

TEST_CASE("defaults alone match the published configuration") {
    PipelineConfig cfg;
    CHECK(cfg.learning_rate == doctest::Approx(0.001));
    CHECK(cfg.batch_size == 64);
    CHECK(cfg.layers == 3);
    CHECK(cfg.k_candidates == 30);
    CHECK(cfg.dim == 128);
}

TEST_CASE("JSON configs are accepted") {
    auto cfg = PipelineConfig::from_text(R"({
        "data": {"train": "a", "valid": "b", "test": "c"},
        "model": {"dim": 16, "monotone_paths": false},
        "train": {"seed": 99}
    })");
    CHECK(cfg.train_path == "a");
    CHECK(cfg.dim == 16);
    CHECK(cfg.monotone_paths == false);
    CHECK(cfg.seed == 99);
}

TEST_CASE("unknown keys are config errors") {
    CHECK_THROWS_AS(PipelineConfig::from_text("[model]\ndimension = 4\n"), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_text("[model]\ndim = tiny\n"), ConfigError);
}

TEST_CASE("directional query enumeration rewrites object queries") {
    std::istringstream train("a\tr\tb\t0\n");
    std::istringstream valid("a\tr\tb\t1\n");
    std::istringstream test("a\tr\tb\t2\n");
    auto g = load_graph_streams(train, valid, test, {TimeFormat::Index, false});
    auto object_only = queries_from_split(g, g.test(), QueryDirections::Object);
    REQUIRE(object_only.size() == 1);
    CHECK(object_only[0].subject == *g.find_entity("a"));
    CHECK(object_only[0].gold_object == *g.find_entity("b"));

    auto both = queries_from_split(g, g.test(), QueryDirections::Both);
    REQUIRE(both.size() == 2);
    CHECK(both[1].subject == *g.find_entity("b"));
    CHECK(both[1].relation == g.inverse(*g.find_relation("r")));
    CHECK(both[1].gold_object == *g.find_entity("a"));
}

TEST_CASE("the gradient audit passes across two seeds") {
    auto entries = run_all_grad_checks(1, 2);
    REQUIRE_FALSE(entries.empty());
    for (const auto& e : entries) {
        CAPTURE(e.name);
        CHECK(e.max_rel_error < 1e-4);
    }
}

TEST_CASE("stages run end to end, enforce dependencies, and short-circuit") {
    auto base = fresh_dir("tkgr_pipeline_run");
    auto cfg = small_run(base);

    {
        Runner too_early(cfg);
        CHECK_THROWS_AS(too_early.extract_paths(), DependencyError);
        CHECK_THROWS_AS(too_early.evaluate_stage(), DependencyError);
    }

    Runner runner(cfg);
    runner.ingest();
    CHECK(fs::exists(base / "run" / "stats.json"));
    CHECK(fs::exists(base / "run" / "entities.tsv"));

    runner.init_embeddings();
    CHECK(fs::exists(base / "run" / "checkpoints" / "semantic.ckpt"));
    CHECK(fs::exists(base / "run" / "descriptions.jsonl"));

    runner.train_gnn();
    CHECK(fs::exists(base / "run" / "checkpoints" / "gnn.ckpt"));
    {
        auto losses = slurp(base / "run" / "reports" / "gnn_losses.json");
        CHECK(losses.find("epoch_losses") != std::string::npos);
    }

    runner.extract_paths();
    CHECK(fs::exists(base / "run" / "paths" / "test.jsonl"));

    runner.edit_paths_stage();
    CHECK(fs::exists(base / "run" / "edits" / "test.jsonl"));
    CHECK(fs::exists(base / "run" / "paths" / "test.edited.jsonl"));

    runner.train_aggregator_stage();
    CHECK(fs::exists(base / "run" / "checkpoints" / "aggregator.ckpt"));

    runner.predict_stage();
    CHECK(fs::exists(base / "run" / "reports" / "predictions.jsonl"));

    auto report = runner.evaluate_stage();
    CHECK(report.query_count >= 8);
    CHECK(report.query_count <= 12);
    CHECK(report.raw.h1 <= report.raw.h3);
    CHECK(fs::exists(base / "run" / "reports" / "report.json"));

    // idempotence: artifacts do not change on a rerun with identical inputs
    auto ckpt_before = slurp(base / "run" / "checkpoints" / "gnn.ckpt");
    auto mtime_before = fs::last_write_time(base / "run" / "checkpoints" / "gnn.ckpt");
    runner.train_gnn();
    CHECK(fs::last_write_time(base / "run" / "checkpoints" / "gnn.ckpt") == mtime_before);
    CHECK(slurp(base / "run" / "checkpoints" / "gnn.ckpt") == ckpt_before);

    fs::remove_all(base);
}

TEST_CASE("two offline runs with one seed produce byte-identical reports") {
    auto base_a = fresh_dir("tkgr_det_a");
    auto base_b = fresh_dir("tkgr_det_b");
    for (auto* base : {&base_a, &base_b}) {
        auto cfg = small_run(*base, 21);
        Runner runner(cfg);
        runner.ingest();
        runner.init_embeddings();
        runner.train_gnn();
        runner.train_aggregator_stage();
        runner.predict_stage();
        runner.evaluate_stage();
    }
    auto report_a = slurp(base_a / "run" / "reports" / "report.json");
    auto report_b = slurp(base_b / "run" / "reports" / "report.json");
    CHECK_FALSE(report_a.empty());
    CHECK(report_a == report_b);

    auto pred_a = slurp(base_a / "run" / "reports" / "predictions.jsonl");
    auto pred_b = slurp(base_b / "run" / "reports" / "predictions.jsonl");
    CHECK(pred_a == pred_b);
    fs::remove_all(base_a);
    fs::remove_all(base_b);
}

TEST_CASE("the ablation matrix covers all six cells") {
    auto base = fresh_dir("tkgr_ablate");
    auto cfg = small_run(base);
    cfg.max_eval_queries = 6;
    Runner runner(cfg);
    runner.ingest();
    runner.init_embeddings();
    runner.train_gnn();
    runner.train_aggregator_stage();
    auto cells = runner.ablate_stage();
    REQUIRE(cells.size() == 6);
    for (const char* editor : {"off", "rules", "llm"})
        for (const char* style : {"index", "raw"})
            CHECK(cells.count(std::string("edit=") + editor + ",times=" + style) == 1);
    // llm cells consume tokens, rule and off cells do not
    CHECK(cells.at("edit=llm,times=index").edit_prompt_tokens > 0);
    CHECK(cells.at("edit=off,times=index").edit_prompt_tokens == 0);
    CHECK(cells.at("edit=rules,times=index").edit_prompt_tokens == 0);
    CHECK(fs::exists(base / "run" / "reports" / "ablation.json"));
    fs::remove_all(base);
}

TEST_CASE("an unreachable gateway aborts unless fallback is allowed") {
    auto base = fresh_dir("tkgr_fallback");
    auto cfg = small_run(base);
    cfg.gateway.backend = "http";
    cfg.gateway.endpoint = "http://127.0.0.1:1";  // nothing listens here
    cfg.gateway.retry.max_attempts = 1;
    cfg.gateway.retry.backoff_ms = 1;
    {
        Runner runner(cfg);
        CHECK_THROWS_AS(runner.init_embeddings(), tkgr::llm::TransportError);
    }
    cfg.allow_fallback = true;
    {
        Runner runner(cfg);
        runner.init_embeddings();
        CHECK(fs::exists(base / "run" / "checkpoints" / "semantic.ckpt"));
    }
    fs::remove_all(base);
}

TEST_CASE("the run lock admits one command at a time") {
    auto base = fresh_dir("tkgr_lock");
    {
        RunLock lock(base.string());
        CHECK_THROWS_AS(RunLock{base.string()}, DependencyError);
    }
    RunLock reacquired(base.string());  // released on destruction
    fs::remove_all(base);
}
