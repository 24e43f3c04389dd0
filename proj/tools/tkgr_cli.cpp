// Command-line front end over the pipeline stages. Every command validates
// its inputs, takes a run-directory lock, and writes versioned artifacts plus
// a manifest so reruns with unchanged inputs are no-ops.
//
// Exit codes: 0 ok, 1 usage, 2 missing dependency, 3 numeric failure.

#include "tkgr/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDependency = 2;
constexpr int kExitNumeric = 3;

tkgr::PipelineConfig load_config(const std::string& config_path) {
    return tkgr::PipelineConfig::from_file(config_path);
}

int run_gradcheck(std::uint64_t seed, int seeds) {
    auto entries = tkgr::run_all_grad_checks(seed, seeds);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& e : entries) {
        if (e.max_rel_error > worst) {
            worst = e.max_rel_error;
            worst_name = e.name;
        }
        std::printf("%-40s %.3e\n", e.name.c_str(), e.max_rel_error);
    }
    std::printf("worst: %s (%.3e)\n", worst_name.c_str(), worst);
    if (worst >= 1e-4) {
        std::fprintf(stderr, "gradient check failed: %s at %.3e >= 1e-4\n", worst_name.c_str(),
                     worst);
        return kExitNumeric;
    }
    return kExitOk;
}

int run_synth(const std::string& out_dir, int entities, int horizon, double noise,
              std::uint64_t seed) {
    tkgr::SyntheticSpec spec;
    spec.entities = entities;
    spec.horizon = horizon;
    spec.noise_ratio = noise;
    spec.seed = seed;
    auto data = tkgr::generate_synthetic_tkg(spec);
    std::filesystem::create_directories(out_dir);
    auto write = [&](const char* name, const std::string& content) {
        std::ofstream out(std::filesystem::path(out_dir) / name);
        out << content;
    };
    write("train.txt", data.train_tsv);
    write("valid.txt", data.valid_tsv);
    write("test.txt", data.test_tsv);
    auto stats = data.graph.stats();
    std::printf("synthetic graph: %zu entities, %zu relations, %zu/%zu/%zu facts, %zu rule "
                "instances, %zu noise facts\n",
                stats.entities, stats.base_relations, stats.train, stats.valid, stats.test,
                data.instances_per_rule, data.noise_facts);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Temporal knowledge graph reasoning pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path;
    app.add_option("-c,--config", config_path, "pipeline config file (sections or JSON)");

    // per-command overrides
    std::string override_editor, override_split, override_time_style, override_time_format;
    std::string override_metrics, dump_subgraphs;
    bool strict_parse = false;
    app.add_option("--editor", override_editor, "editor backend: off | rules | llm");
    app.add_option("--split", override_split, "evaluation split: valid | test");
    app.add_option("--time-style", override_time_style, "prompt times: index | raw");
    app.add_option("--time-format", override_time_format,
                   "dataset timestamp format: index | iso-date");
    app.add_option("--metrics", override_metrics, "report rows: raw | filtered | both");
    app.add_option("--dump-subgraphs", dump_subgraphs,
                   "directory for per-query subgraph debug dumps");
    app.add_flag("--strict-parse", strict_parse,
                 "surface editor parse failures instead of falling back");
    bool allow_fallback = false;
    app.add_flag("--allow-fallback", allow_fallback,
                 "continue with the offline backend when the gateway is unreachable");

    auto* ingest = app.add_subcommand("ingest", "load datasets, dump vocabularies and stats");
    auto* init_emb = app.add_subcommand("init-embeddings",
                                        "generate descriptions and semantic embeddings");
    auto* train_gnn = app.add_subcommand("train-gnn", "train the subgraph extractor");
    auto* extract = app.add_subcommand("extract-paths", "extract top-K reasoning paths");
    auto* edit = app.add_subcommand("edit-paths", "refine extracted paths");
    auto* train_agg = app.add_subcommand("train-aggregator", "train the path aggregator");
    auto* predict = app.add_subcommand("predict", "rank candidates for the evaluation split");
    auto* evaluate = app.add_subcommand("evaluate", "compute Hits@k from predictions");
    auto* ablate = app.add_subcommand("ablate", "editor x time-style ablation matrix");

    auto* synth = app.add_subcommand("synth", "generate a planted-rule synthetic dataset");
    std::string synth_out = "synthetic";
    int synth_entities = 200, synth_horizon = 100;
    double synth_noise = 0.05;
    std::uint64_t synth_seed = 7;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--entities", synth_entities, "entity count");
    synth->add_option("--horizon", synth_horizon, "number of discrete time points");
    synth->add_option("--noise", synth_noise, "noise-edge ratio in [0,1)");
    synth->add_option("--seed", synth_seed, "generator seed");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::uint64_t gc_seed = 1;
    int gc_seeds = 10;
    gradcheck->add_option("--seed", gc_seed, "first seed");
    gradcheck->add_option("--seeds", gc_seeds, "number of seeds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gradcheck->parsed()) return run_gradcheck(gc_seed, gc_seeds);
        if (synth->parsed())
            return run_synth(synth_out, synth_entities, synth_horizon, synth_noise, synth_seed);

        if (config_path.empty()) {
            std::fprintf(stderr, "error: --config is required for pipeline commands\n");
            return kExitUsage;
        }
        auto config = load_config(config_path);
        if (!override_editor.empty()) config.editor = override_editor;
        if (!override_split.empty()) config.eval_split = override_split;
        if (!override_time_style.empty()) config.time_style = override_time_style;
        if (!override_time_format.empty()) config.time_format = override_time_format;
        if (!override_metrics.empty()) config.metrics = override_metrics;
        if (!dump_subgraphs.empty()) config.dump_subgraphs = dump_subgraphs;
        if (strict_parse) config.strict_parse = true;
        if (allow_fallback) config.allow_fallback = true;

        tkgr::RunLock lock(config.run_dir);
        tkgr::Runner runner(std::move(config));

        if (ingest->parsed()) {
            runner.ingest();
            auto stats = runner.graph().stats();
            std::printf("ingested: %zu entities, %zu base relations (%zu with inverses), "
                        "%zu/%zu/%zu facts, %zu time points\n",
                        stats.entities, stats.base_relations, stats.relations, stats.train,
                        stats.valid, stats.test, stats.time_points);
        } else if (init_emb->parsed()) {
            runner.init_embeddings();
            std::printf("semantic embeddings written\n");
        } else if (train_gnn->parsed()) {
            runner.train_gnn();
            std::printf("extractor trained\n");
        } else if (extract->parsed()) {
            runner.extract_paths();
            std::printf("paths extracted\n");
        } else if (edit->parsed()) {
            runner.edit_paths_stage();
            std::printf("paths edited\n");
        } else if (train_agg->parsed()) {
            runner.train_aggregator_stage();
            std::printf("aggregator trained\n");
        } else if (predict->parsed()) {
            runner.predict_stage();
            std::printf("predictions written\n");
        } else if (evaluate->parsed()) {
            auto report = runner.evaluate_stage();
            report.write_text(std::cout);
        } else if (ablate->parsed()) {
            auto cells = runner.ablate_stage();
            for (const auto& [name, report] : cells)
                std::printf("%-28s raw Hits@1 %.4f  Hits@3 %.4f  Hits@10 %.4f  tokens %ld\n",
                            name.c_str(), report.raw.h1, report.raw.h3, report.raw.h10,
                            report.edit_prompt_tokens);
        }
        return kExitOk;
    } catch (const tkgr::DependencyError& e) {
        std::fprintf(stderr, "dependency error: %s\n", e.what());
        return kExitDependency;
    } catch (const tkgr::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const tkgr::ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return kExitUsage;
    } catch (const tkgr::LoadError& e) {
        std::fprintf(stderr, "load error: %s\n", e.what());
        return kExitUsage;
    } catch (const tkgr::SyntheticSpecError& e) {
        std::fprintf(stderr, "synthetic spec error: %s\n", e.what());
        return kExitUsage;
    } catch (const tkgr::num::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitDependency;
    }
}
