#include "tkgr/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

namespace tkgr {

namespace {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw ConfigError("cannot write " + path);
}

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

// "[section]\nkey = value" pairs flattened to section.key.
std::map<std::string, std::string> parse_sections(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line, section;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line without '=': " + t);
        auto key = trim(t.substr(0, eq));
        auto value = trim(t.substr(eq + 1));
        out[section.empty() ? key : section + "." + key] = value;
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: boolean expected for " + key + ", got '" + v + "'");
}

}  // namespace

PipelineConfig PipelineConfig::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        ordered_json j;
        try {
            j = ordered_json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config JSON invalid: ") + e.what());
        }
        for (auto& [section, body] : j.items()) {
            if (!body.is_object())
                throw ConfigError("config JSON: section '" + section + "' must be an object");
            for (auto& [key, value] : body.items()) {
                std::string flat = section + "." + key;
                if (value.is_string())
                    kv[flat] = value.get<std::string>();
                else
                    kv[flat] = value.dump();
            }
        }
    } else {
        kv = parse_sections(text);
    }

    PipelineConfig cfg;
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        auto v = it->second;
        kv.erase(it);
        return v;
    };
    auto take_string = [&](const char* key, std::string& field) {
        if (auto v = take(key)) field = *v;
    };
    auto take_bool = [&](const char* key, bool& field) {
        if (auto v = take(key)) field = parse_bool(*v, key);
    };
    auto take_int = [&](const char* key, auto& field) {
        if (auto v = take(key)) {
            try {
                field = static_cast<std::decay_t<decltype(field)>>(std::stoll(*v));
            } catch (const std::exception&) {
                throw ConfigError(std::string("config: integer expected for ") + key);
            }
        }
    };
    auto take_double = [&](const char* key, double& field) {
        if (auto v = take(key)) {
            try {
                field = std::stod(*v);
            } catch (const std::exception&) {
                throw ConfigError(std::string("config: number expected for ") + key);
            }
        }
    };

    take_string("data.train", cfg.train_path);
    take_string("data.valid", cfg.valid_path);
    take_string("data.test", cfg.test_path);
    take_string("data.time_format", cfg.time_format);
    take_bool("data.allow_empty_split", cfg.allow_empty_split);

    take_int("model.dim", cfg.dim);
    take_int("model.time_dim", cfg.time_dim);
    take_int("model.attn_dim", cfg.attn_dim);
    take_int("model.layers", cfg.layers);
    take_int("model.k", cfg.k_candidates);
    take_int("model.budget", cfg.budget);
    if (auto v = take("model.window")) cfg.window = static_cast<TimeId>(std::stoll(*v));
    take_bool("model.monotone_paths", cfg.monotone_paths);
    take_string("model.aggregate", cfg.aggregate);
    take_string("model.init_mode", cfg.init_mode);
    take_string("model.loss_denominator", cfg.loss_denominator);
    take_bool("model.strict_loss", cfg.strict_loss);
    take_bool("model.separate_time_encoders", cfg.separate_time_encoders);
    take_int("model.heads", cfg.heads);
    take_int("model.transformer_layers", cfg.transformer_layers);
    take_double("model.fallback_weight", cfg.fallback_weight);
    take_bool("model.finetune_embeddings", cfg.finetune_embeddings);

    take_double("train.learning_rate", cfg.learning_rate);
    take_int("train.batch_size", cfg.batch_size);
    take_int("train.epochs", cfg.epochs);
    take_int("train.aggregator_epochs", cfg.aggregator_epochs);
    take_int("train.seed", cfg.seed);
    take_string("train.directions", cfg.directions);
    take_int("train.max_queries", cfg.max_train_queries);

    take_string("edit.editor", cfg.editor);
    take_bool("edit.strict_parse", cfg.strict_parse);
    take_string("edit.time_style", cfg.time_style);

    take_string("eval.split", cfg.eval_split);
    take_string("eval.metrics", cfg.metrics);
    take_int("eval.max_queries", cfg.max_eval_queries);

    take_string("gateway.backend", cfg.gateway.backend);
    take_string("gateway.endpoint", cfg.gateway.endpoint);
    take_string("gateway.api_key_env", cfg.gateway.api_key_env);
    take_string("gateway.generate_model", cfg.gateway.generate_model);
    take_string("gateway.embed_model", cfg.gateway.embed_model);
    take_string("gateway.edit_model", cfg.gateway.edit_model);
    take_int("gateway.concurrency", cfg.gateway.concurrency);
    take_double("gateway.temperature", cfg.gateway.temperature);
    take_int("gateway.max_tokens", cfg.gateway.max_tokens);
    take_int("gateway.max_attempts", cfg.gateway.retry.max_attempts);
    take_int("gateway.backoff_ms", cfg.gateway.retry.backoff_ms);
    take_string("gateway.cache_dir", cfg.gateway.cache_dir);
    take_int("gateway.offline_embed_dim", cfg.gateway.offline_embed_dim);
    take_int("gateway.offline_seed", cfg.gateway.offline_seed);
    take_bool("gateway.allow_fallback", cfg.allow_fallback);

    take_string("run.dir", cfg.run_dir);
    take_string("run.dump_subgraphs", cfg.dump_subgraphs);

    if (!kv.empty()) throw ConfigError("config: unknown key '" + kv.begin()->first + "'");
    return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    return from_text(read_file(path));
}

std::string PipelineConfig::to_json() const {
    ordered_json j;
    j["data"] = {{"train", train_path},
                 {"valid", valid_path},
                 {"test", test_path},
                 {"time_format", time_format},
                 {"allow_empty_split", allow_empty_split}};
    j["model"] = {{"dim", dim},
                  {"time_dim", time_dim},
                  {"attn_dim", attn_dim},
                  {"layers", layers},
                  {"k", k_candidates},
                  {"budget", budget},
                  {"window", window ? ordered_json(*window) : ordered_json(nullptr)},
                  {"monotone_paths", monotone_paths},
                  {"aggregate", aggregate},
                  {"init_mode", init_mode},
                  {"loss_denominator", loss_denominator},
                  {"strict_loss", strict_loss},
                  {"separate_time_encoders", separate_time_encoders},
                  {"heads", heads},
                  {"transformer_layers", transformer_layers},
                  {"fallback_weight", fallback_weight},
                  {"finetune_embeddings", finetune_embeddings}};
    j["train"] = {{"learning_rate", learning_rate},
                  {"batch_size", batch_size},
                  {"epochs", epochs},
                  {"aggregator_epochs", aggregator_epochs},
                  {"seed", seed},
                  {"directions", directions},
                  {"max_queries", max_train_queries}};
    j["edit"] = {{"editor", editor}, {"strict_parse", strict_parse}, {"time_style", time_style}};
    j["eval"] = {{"split", eval_split}, {"metrics", metrics}, {"max_queries", max_eval_queries}};
    j["gateway"] = {{"backend", gateway.backend},
                    {"endpoint", gateway.endpoint},
                    {"api_key_env", gateway.api_key_env},
                    {"generate_model", gateway.generate_model},
                    {"embed_model", gateway.embed_model},
                    {"edit_model", gateway.edit_model},
                    {"concurrency", gateway.concurrency},
                    {"temperature", gateway.temperature},
                    {"max_tokens", gateway.max_tokens},
                    {"max_attempts", gateway.retry.max_attempts},
                    {"backoff_ms", gateway.retry.backoff_ms},
                    {"cache_dir", gateway.cache_dir},
                    {"offline_embed_dim", gateway.offline_embed_dim},
                    {"offline_seed", gateway.offline_seed},
                    {"allow_fallback", allow_fallback}};
    j["run"] = {{"dir", run_dir}, {"dump_subgraphs", dump_subgraphs}};
    return j.dump(2);
}

GnnConfig PipelineConfig::gnn_config() const {
    GnnConfig g;
    g.layers = layers;
    g.budget = budget;
    g.window = window;
    g.monotone_paths = monotone_paths;
    if (aggregate == "mean")
        g.aggregate = Aggregate::WeightedMean;
    else if (aggregate == "sum")
        g.aggregate = Aggregate::WeightedSum;
    else
        throw ConfigError("config: aggregate must be mean or sum");
    if (init_mode == "query")
        g.init_mode = InitMode::QueryEmbedding;
    else if (init_mode == "self")
        g.init_mode = InitMode::SelfEmbedding;
    else
        throw ConfigError("config: init_mode must be query or self");
    if (loss_denominator == "subgraph")
        g.loss_denominator = LossDenominator::Subgraph;
    else if (loss_denominator == "all")
        g.loss_denominator = LossDenominator::AllEntities;
    else
        throw ConfigError("config: loss_denominator must be subgraph or all");
    g.strict_loss = strict_loss;
    g.dim = dim;
    g.attn_dim = attn_dim;
    g.time_dim = time_dim;
    return g;
}

TransformerConfig PipelineConfig::transformer_config() const {
    TransformerConfig t;
    t.dim = dim;
    t.heads = heads;
    t.layers = transformer_layers;
    t.time_dim = time_dim;
    t.fallback_weight = fallback_weight;
    t.finetune_embeddings = finetune_embeddings;
    return t;
}

EditorMode PipelineConfig::editor_mode() const {
    if (editor == "off") return EditorMode::Off;
    if (editor == "rules") return EditorMode::Rules;
    if (editor == "llm") return EditorMode::Llm;
    throw ConfigError("config: editor must be off, rules, or llm");
}

TimeStyle PipelineConfig::time_style_enum() const {
    if (time_style == "index") return TimeStyle::DiscreteIndex;
    if (time_style == "raw") return TimeStyle::RawLabel;
    throw ConfigError("config: time_style must be index or raw");
}

QueryDirections PipelineConfig::directions_enum() const {
    if (directions == "object") return QueryDirections::Object;
    if (directions == "both") return QueryDirections::Both;
    throw ConfigError("config: directions must be object or both");
}

LoadOptions PipelineConfig::load_options() const {
    LoadOptions o;
    if (time_format == "index")
        o.time_format = TimeFormat::Index;
    else if (time_format == "iso-date")
        o.time_format = TimeFormat::IsoDate;
    else
        throw ConfigError("config: time_format must be index or iso-date");
    o.allow_empty_split = allow_empty_split;
    return o;
}

// ---------------------------------------------------------------------------
// drivers

std::vector<TemporalQuery> queries_from_split(const TemporalKnowledgeGraph& graph,
                                              const std::vector<Quadruple>& split,
                                              QueryDirections directions) {
    std::vector<TemporalQuery> out;
    out.reserve(directions == QueryDirections::Both ? split.size() * 2 : split.size());
    for (const auto& q : split) {
        out.push_back({q.subject, q.relation, q.time, q.object});
        if (directions == QueryDirections::Both)
            out.push_back({q.object, graph.inverse(q.relation), q.time, q.subject});
    }
    return out;
}

TrainHistory train_gnn_epochs(const TemporalKnowledgeGraph& graph,
                              const SemanticEmbeddings& embeddings, num::ParamStore& store,
                              const GnnParams& params, std::vector<TemporalQuery> queries,
                              const PipelineConfig& config, int epochs) {
    if (config.max_train_queries > 0 && queries.size() > config.max_train_queries)
        queries.resize(config.max_train_queries);
    num::AdamState adam({config.learning_rate});
    adam.zero_grads(store);
    auto gnn_cfg = config.gnn_config();
    TrainHistory history;
    std::size_t batch_size = static_cast<std::size_t>(std::max(1, config.batch_size));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(epoch) * 7919);
        std::shuffle(queries.begin(), queries.end(), rng);
        double loss_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t start = 0; start < queries.size(); start += batch_size) {
            std::size_t end = std::min(queries.size(), start + batch_size);
            std::vector<TemporalQuery> batch(queries.begin() + static_cast<std::ptrdiff_t>(start),
                                             queries.begin() + static_cast<std::ptrdiff_t>(end));
            auto step = training_step(batch, graph, params, embeddings, store, adam, gnn_cfg);
            loss_sum += step.loss * static_cast<double>(batch.size());
            counted += batch.size();
        }
        history.epoch_losses.push_back(counted > 0 ? loss_sum / static_cast<double>(counted)
                                                   : 0.0);
    }
    return history;
}

Extraction extract_for_query(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                             const GnnParams& params, const SemanticEmbeddings& embeddings,
                             const PipelineConfig& config) {
    num::NoGrad guard;
    EmbeddingProvider provider(embeddings, /*frozen=*/true);
    auto gnn_cfg = config.gnn_config();
    auto sg = expand_subgraph(query, graph, params, provider, gnn_cfg);
    Extraction out;
    out.empty_subgraph = sg.empty;
    if (sg.empty) {
        out.subgraph = std::move(sg);
        return out;
    }
    auto scores = score_candidates(sg, params.w_score);
    out.candidates = top_k_candidates(scores, static_cast<std::size_t>(config.k_candidates));
    for (const auto& c : out.candidates.items)
        out.paths.push_back(backtrack_path(c.entity, sg));
    out.subgraph = std::move(sg);
    return out;
}

TrainHistory train_aggregator_epochs(const TemporalKnowledgeGraph& graph,
                                     const SemanticEmbeddings& embeddings,
                                     num::ParamStore& store, const GnnParams& gnn_params,
                                     const TransformerParams& tx_params,
                                     std::vector<TemporalQuery> queries,
                                     const PipelineConfig& config, int epochs) {
    if (config.max_train_queries > 0 && queries.size() > config.max_train_queries)
        queries.resize(config.max_train_queries);

    // The extractor is frozen during stage III, so paths are built once.
    std::vector<AggregatorBatchItem> items;
    for (const auto& query : queries) {
        auto extraction = extract_for_query(query, graph, gnn_params, embeddings, config);
        if (extraction.paths.empty()) continue;
        auto mode = config.editor_mode();
        EditOutcome edited;
        if (mode == EditorMode::Llm) {
            // Aggregator training sticks to the deterministic editor; the llm
            // route is reserved for evaluation-time refinement.
            edited = edit_paths(query, extraction.paths, graph, EditorMode::Rules, nullptr);
        } else {
            edited = edit_paths(query, extraction.paths, graph, mode, nullptr);
        }
        if (edited.refined.empty()) continue;
        items.push_back({query, std::move(edited.refined)});
    }

    num::AdamState adam({config.learning_rate});
    adam.zero_grads(store);
    auto tx_cfg = config.transformer_config();
    TrainHistory history;
    std::size_t batch_size = static_cast<std::size_t>(std::max(1, config.batch_size));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::mt19937_64 rng(config.seed + 104729 + static_cast<std::uint64_t>(epoch));
        std::shuffle(items.begin(), items.end(), rng);
        double loss_sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t start = 0; start < items.size(); start += batch_size) {
            std::size_t end = std::min(items.size(), start + batch_size);
            std::vector<AggregatorBatchItem> batch(
                items.begin() + static_cast<std::ptrdiff_t>(start),
                items.begin() + static_cast<std::ptrdiff_t>(end));
            auto step = train_aggregator(batch, tx_params, embeddings, store, adam, tx_cfg);
            loss_sum += step.loss * static_cast<double>(batch.size());
            counted += batch.size();
        }
        history.epoch_losses.push_back(counted > 0 ? loss_sum / static_cast<double>(counted)
                                                   : 0.0);
    }
    return history;
}

QueryOutcome score_query_with_paths(const TemporalQuery& query,
                                    const std::vector<ReasoningPath>& paths,
                                    const CandidateSet& candidates,
                                    const TemporalKnowledgeGraph& graph,
                                    const TransformerParams& tx_params,
                                    const SemanticEmbeddings& embeddings,
                                    const PipelineConfig& config) {
    QueryOutcome outcome;
    outcome.query = query;
    if (candidates.items.empty() && paths.empty()) {
        outcome.raw_rank = static_cast<double>(graph.entity_count());
        outcome.filtered_rank = outcome.raw_rank;
        outcome.predicted = -1;
        outcome.provenance = "empty-subgraph";
        return outcome;
    }

    num::NoGrad guard;
    EmbeddingProvider provider(embeddings, /*frozen=*/true);
    auto prediction =
        predict(query, paths, candidates, tx_params, provider, config.transformer_config());

    std::vector<RankedEntity> ranking;
    ranking.reserve(prediction.ranked.size());
    for (const auto& c : prediction.ranked) ranking.push_back({c.entity, c.score});

    if (query.has_gold()) {
        auto filter = graph.objects_at(query.subject, query.relation, query.time);
        outcome.raw_rank = rank_of_gold(ranking, query.gold_object, {}, graph.entity_count());
        outcome.filtered_rank =
            rank_of_gold(ranking, query.gold_object, filter, graph.entity_count());
    }
    outcome.predicted = prediction.predicted;
    outcome.provenance = prediction.provenance;
    return outcome;
}

QueryPrediction predict_query(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                              const GnnParams& gnn_params, const TransformerParams& tx_params,
                              const SemanticEmbeddings& embeddings, const PipelineConfig& config,
                              llm::Gateway* gateway) {
    QueryPrediction result;
    result.outcome.query = query;

    auto extraction = extract_for_query(query, graph, gnn_params, embeddings, config);
    if (extraction.candidates.items.empty()) {
        result.outcome.raw_rank = static_cast<double>(graph.entity_count());
        result.outcome.filtered_rank = result.outcome.raw_rank;
        result.outcome.predicted = -1;
        result.outcome.provenance = "empty-subgraph";
        return result;
    }

    EditOptions edit_opts;
    edit_opts.time_style = config.time_style_enum();
    edit_opts.strict_parse = config.strict_parse;
    auto edited = edit_paths(query, extraction.paths, graph, config.editor_mode(), gateway,
                             edit_opts);
    result.edit_prompt_tokens = edited.prompt_tokens;

    num::NoGrad guard;
    EmbeddingProvider provider(embeddings, /*frozen=*/true);
    auto prediction = predict(query, edited.refined, extraction.candidates, tx_params, provider,
                              config.transformer_config());

    std::vector<RankedEntity> ranking;
    ranking.reserve(prediction.ranked.size());
    for (const auto& c : prediction.ranked) ranking.push_back({c.entity, c.score});

    if (query.has_gold()) {
        auto filter = graph.objects_at(query.subject, query.relation, query.time);
        result.outcome.raw_rank =
            rank_of_gold(ranking, query.gold_object, {}, graph.entity_count());
        result.outcome.filtered_rank =
            rank_of_gold(ranking, query.gold_object, filter, graph.entity_count());
    }
    result.outcome.predicted = prediction.predicted;
    result.outcome.provenance = prediction.provenance;
    result.prediction = std::move(prediction);
    return result;
}

EvalReport evaluate_queries(const std::vector<TemporalQuery>& queries,
                            const TemporalKnowledgeGraph& graph, const GnnParams& gnn_params,
                            const TransformerParams& tx_params,
                            const SemanticEmbeddings& embeddings, const PipelineConfig& config,
                            llm::Gateway* gateway) {
    std::vector<QueryOutcome> outcomes;
    long tokens = 0;
    std::size_t limit = config.max_eval_queries > 0
                            ? std::min(queries.size(), config.max_eval_queries)
                            : queries.size();
    for (std::size_t i = 0; i < limit; ++i) {
        auto qp = predict_query(queries[i], graph, gnn_params, tx_params, embeddings, config,
                                gateway);
        tokens += qp.edit_prompt_tokens;
        outcomes.push_back(std::move(qp.outcome));
    }
    auto report = EvalReport::from_outcomes(std::move(outcomes));
    report.edit_prompt_tokens = tokens;
    report.editor_mode = config.editor;
    report.time_style = config.time_style;
    report.metrics = config.metrics;
    return report;
}

std::map<std::string, EvalReport> run_ablation(const std::vector<TemporalQuery>& queries,
                                               const TemporalKnowledgeGraph& graph,
                                               const GnnParams& gnn_params,
                                               const TransformerParams& tx_params,
                                               const SemanticEmbeddings& embeddings,
                                               const PipelineConfig& config,
                                               llm::Gateway* gateway) {
    std::map<std::string, EvalReport> cells;
    for (const char* editor : {"off", "rules", "llm"}) {
        for (const char* style : {"index", "raw"}) {
            PipelineConfig cell = config;
            cell.editor = editor;
            cell.time_style = style;
            std::string name = std::string("edit=") + editor + ",times=" + style;
            cells.emplace(name, evaluate_queries(queries, graph, gnn_params, tx_params,
                                                 embeddings, cell, gateway));
        }
    }
    return cells;
}

}  // namespace tkgr

// ---------------------------------------------------------------------------
// gradient-check suite

namespace tkgr {

namespace {

using num::ParamStore;
using num::Tensor;

double check(const std::string& name, std::vector<GradCheckEntry>& entries, ParamStore& params,
             const std::function<Tensor()>& loss_fn) {
    auto result = num::grad_check(loss_fn, params);
    entries.push_back({name, result.max_rel_error});
    return result.max_rel_error;
}

void op_checks(std::uint64_t seed, std::vector<GradCheckEntry>& entries) {
    std::mt19937_64 rng(seed);
    auto vec = [&](std::size_t n) { return num::uniform_init({n}, -1.0, 1.0, rng); };
    auto mat = [&](std::size_t r, std::size_t c) {
        return num::uniform_init({r, c}, -1.0, 1.0, rng);
    };

    {
        ParamStore p{{"a", vec(6)}, {"b", vec(6)}, {"c", vec(6)}};
        check("elementwise", entries, p, [&] {
            auto x = num::mul(num::add(p.at("a"), p.at("b")), num::sigmoid(p.at("c")));
            return num::sum(num::mul(x, num::sub(p.at("a"), p.at("c"))));
        });
    }
    {
        ParamStore p{{"a", vec(5)}};
        check("relu", entries, p,
              [&] { return num::sum(num::relu(p.at("a"))); });
    }
    {
        ParamStore p{{"a", vec(5)}};
        check("cosine", entries, p, [&] { return num::sum(num::cosine(p.at("a"))); });
    }
    {
        ParamStore p{{"s", vec(1)}, {"t", num::uniform_init({1}, 0.5, 1.5, rng)}, {"v", vec(4)}};
        check("scalar_ops", entries, p, [&] {
            auto scaled = num::scalar_mul(p.at("s"), p.at("v"));
            return num::sum(num::scalar_div(num::scale(scaled, 1.7), p.at("t")));
        });
    }
    {
        ParamStore p{{"A", mat(4, 5)}, {"B", mat(5, 3)}, {"x", vec(3)}};
        check("matmul", entries, p, [&] {
            return num::sum(num::matmul(num::matmul(p.at("A"), p.at("B")), p.at("x")));
        });
    }
    {
        ParamStore p{{"A", mat(4, 3)}, {"x", vec(4)}};
        check("matvec_t", entries, p,
              [&] { return num::sum(num::matvec_t(p.at("A"), p.at("x"))); });
    }
    {
        ParamStore p{{"M", mat(3, 4)}, {"v", vec(2)}};
        check("structure", entries, p, [&] {
            auto joined = num::concat({num::select_row(p.at("M"), 1), p.at("v")});
            auto window = num::slice(joined, 1, 4);
            return num::add(num::pick(window, 2), num::mean(num::mul(window, window)));
        });
    }
    {
        ParamStore p{{"v", vec(5)}};
        std::vector<double> w{0.3, -0.2, 0.5, 0.1, -0.4};
        check("softmax", entries, p, [&] {
            return num::dot(num::softmax(p.at("v")), Tensor::from({5}, w));
        });
    }
    {
        ParamStore p{{"v", vec(5)}};
        check("log_softmax", entries, p,
              [&] { return num::pick(num::log_softmax(p.at("v")), 1); });
    }
    {
        ParamStore p{{"v", vec(6)}, {"w", vec(6)}};
        check("layer_norm", entries, p,
              [&] { return num::dot(num::layer_norm(p.at("v")), p.at("w")); });
    }
    {
        ParamStore p{{"v", vec(4)}};
        check("nll_loss", entries, p, [&] { return num::nll_loss(p.at("v"), 1, 3); });
    }
}

void composite_checks(std::uint64_t seed, std::vector<GradCheckEntry>& entries) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 6, d_t = 4, d_a = 5, d_w = 7;

    {
        Mlp mlp = Mlp::init(d_w, d, rng);
        ParamStore p;
        mlp.register_params(p, "mlp");
        auto x = num::uniform_init({d_w}, -1.0, 1.0, rng);
        std::vector<double> probe(d, 0.3);
        check("mlp_chain", entries, p, [&] {
            num::Tensor input = Tensor::from({d_w}, std::vector<double>(x.values().begin(),
                                                                         x.values().end()));
            return num::dot(mlp.forward(input), Tensor::from({d}, probe));
        });
    }
    {
        auto enc = init_time_encoder(d_t, rng);
        auto fusion = init_fusion(d, d_t, rng);
        auto h_r = num::uniform_init({d}, -1.0, 1.0, rng);
        ParamStore p{{"omega", enc.omega}, {"phase", enc.phase}, {"w_rt", fusion.weight},
                     {"h_r", h_r}};
        std::vector<double> probe(d, 0.25);
        check("relation_time_fusion", entries, p, [&] {
            return num::dot(relation_time_embedding(p.at("h_r"), 9, fusion, enc),
                            Tensor::from({d}, probe));
        });
    }
    {
        GnnConfig cfg;
        cfg.layers = 2;
        cfg.dim = d;
        cfg.attn_dim = d_a;
        cfg.time_dim = d_t;
        auto params = GnnParams::init(cfg, rng);
        auto h_s = num::uniform_init({d}, -1.0, 1.0, rng);
        auto h_rt = num::uniform_init({d}, -1.0, 1.0, rng);
        auto h_q = num::uniform_init({d}, -1.0, 1.0, rng);
        ParamStore p{{"w_att", params.w_att[0]}, {"v_att", params.v_att[0]},
                     {"h_s", h_s},               {"h_rt", h_rt},
                     {"h_q", h_q}};
        check("attention_score", entries, p, [&] {
            return attention_score(p.at("h_s"), p.at("h_rt"), p.at("h_q"), params.w_att[0],
                                   params.v_att[0]);
        });
    }
    {
        // Two-layer chain over a fixed toy subgraph: expand once, then
        // differentiate the re-forwarded loss.
        std::string train_tsv =
            "a\tr1\tb\t1\n"
            "a\tr2\tc\t1\n"
            "b\tr1\tc\t2\n"
            "b\tr2\td\t2\n"
            "c\tr1\td\t3\n";
        std::istringstream train(train_tsv), valid("a\tr1\tb\t5\n"), test("a\tr1\tb\t6\n");
        auto graph = load_graph_streams(train, valid, test, {TimeFormat::Index, false});

        GnnConfig cfg;
        cfg.layers = 2;
        cfg.budget = 4;
        cfg.dim = d;
        cfg.attn_dim = d_a;
        cfg.time_dim = d_t;
        auto params = GnnParams::init(cfg, rng);

        SemanticEmbeddings emb;
        emb.dim = d;
        emb.raw_dim = d_w;
        std::uniform_real_distribution<double> raw_dist(-1.0, 1.0);
        std::vector<double> raw_ent(graph.entity_count() * d_w), raw_rel(graph.relation_count() * d_w);
        for (auto& v : raw_ent) v = raw_dist(rng);
        for (auto& v : raw_rel) v = raw_dist(rng);
        // raw matrices stay constant in the check
        emb.raw_entities = Tensor::from({graph.entity_count(), d_w}, std::move(raw_ent));
        emb.raw_relations = Tensor::from({graph.relation_count(), d_w}, std::move(raw_rel));
        emb.entity_mlp = Mlp::init(d_w, d, rng);
        emb.relation_mlp = Mlp::init(d_w, d, rng);

        ParamStore p;
        params.register_params(p);
        emb.entity_mlp.register_params(p, "mlp_e");
        emb.relation_mlp.register_params(p, "mlp_r");

        TemporalQuery query{*graph.find_entity("a"), *graph.find_relation("r1"), 4,
                            *graph.find_entity("d")};
        LayeredSubgraph structure;
        {
            EmbeddingProvider provider(emb, /*frozen=*/false);
            structure = expand_subgraph(query, graph, params, provider, cfg);
        }
        check("gnn_chain", entries, p, [&] {
            EmbeddingProvider provider(emb, /*frozen=*/false);
            auto sg = reforward_subgraph(structure, params, provider, cfg);
            auto scored = score_candidates(sg, params.w_score);
            auto gold = scored.index_of(query.gold_object);
            std::vector<Tensor> logits = scored.scores;
            std::size_t target = gold ? *gold : logits.size();
            if (!gold) logits.push_back(Tensor::scalar(0.0));
            return num::nll_loss(num::concat(logits), target, 0);
        });
    }
    {
        TransformerConfig cfg;
        cfg.dim = d;
        cfg.heads = 2;
        cfg.layers = 1;
        cfg.time_dim = d_t;
        auto params = TransformerParams::init(cfg, rng);

        SemanticEmbeddings emb;
        emb.dim = d;
        emb.raw_dim = d_w;
        std::vector<double> ent_raw, rel_raw;
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        for (std::size_t i = 0; i < 4 * d_w; ++i) ent_raw.push_back(dist(rng));
        for (std::size_t i = 0; i < 3 * d_w; ++i) rel_raw.push_back(dist(rng));
        emb.raw_entities = Tensor::from({4, d_w}, std::move(ent_raw));
        emb.raw_relations = Tensor::from({3, d_w}, std::move(rel_raw));
        emb.entity_mlp = Mlp::init(d_w, d, rng);
        emb.relation_mlp = Mlp::init(d_w, d, rng);

        ParamStore p;
        params.register_params(p);
        emb.entity_mlp.register_params(p, "mlp_e");
        emb.relation_mlp.register_params(p, "mlp_r");

        ReasoningPath path;
        path.query = {0, 0, 9, 3};
        path.candidate = 3;
        path.steps = {{0, 0, 1, 2, 0.9}, {1, 1, 2, 4, 0.8}, {2, 2, 3, 6, 0.7}};
        check("transformer_chain", entries, p, [&] {
            EmbeddingProvider provider(emb, /*frozen=*/false);
            auto seq = build_input_sequence(path, provider, params.time_encoder, cfg.dim);
            auto score = path_score(seq, params, provider, cfg.heads);
            auto other = num::dot(provider.entity(1), provider.entity(2));
            return num::nll_loss(num::concat({score, other}), 0, 0);
        });
    }
}

}  // namespace

std::vector<GradCheckEntry> run_all_grad_checks(std::uint64_t first_seed, int seeds) {
    std::vector<GradCheckEntry> all;
    for (int s = 0; s < seeds; ++s) {
        std::vector<GradCheckEntry> entries;
        op_checks(first_seed + static_cast<std::uint64_t>(s), entries);
        composite_checks(first_seed + static_cast<std::uint64_t>(s), entries);
        for (auto& e : entries) {
            e.name += "/seed" + std::to_string(first_seed + static_cast<std::uint64_t>(s));
            all.push_back(std::move(e));
        }
    }
    return all;
}

}  // namespace tkgr

// ---------------------------------------------------------------------------
// file-backed runner

namespace tkgr {

namespace {

std::string file_digest(const std::string& path) {
    return llm::sha256_hex(read_file(path));
}

void write_json_file(const std::string& path, const ordered_json& j) {
    write_file(path, j.dump(2) + "\n");
}

ordered_json subgraph_to_json(const LayeredSubgraph& sg) {
    ordered_json layers = ordered_json::array();
    for (const auto& layer : sg.layers) {
        ordered_json nodes = ordered_json::array();
        for (const auto& n : layer) nodes.push_back(n.entity);
        layers.push_back(std::move(nodes));
    }
    ordered_json edges = ordered_json::array();
    for (std::size_t l = 1; l < sg.edges.size(); ++l)
        for (const auto& e : sg.edges[l])
            edges.push_back({{"layer", l},
                             {"src", e.src},
                             {"dst", e.dst},
                             {"relation", e.relation},
                             {"time", e.time},
                             {"alpha", e.alpha_value}});
    return ordered_json{{"query",
                         {{"subject", sg.query.subject},
                          {"relation", sg.query.relation},
                          {"time", sg.query.time}}},
                        {"empty", sg.empty},
                        {"layers", std::move(layers)},
                        {"edges", std::move(edges)}};
}

ordered_json path_to_json(const ReasoningPath& path) {
    ordered_json steps = ordered_json::array();
    ordered_json alphas = ordered_json::array();
    for (const auto& s : path.steps) {
        steps.push_back({{"s", s.subject}, {"r", s.relation}, {"o", s.object}, {"t", s.time}});
        alphas.push_back(s.alpha);
    }
    return ordered_json{{"query",
                         {{"subject", path.query.subject},
                          {"relation", path.query.relation},
                          {"time", path.query.time},
                          {"gold", path.query.gold_object}}},
                        {"candidate", path.candidate},
                        {"steps", std::move(steps)},
                        {"alphas", std::move(alphas)},
                        {"tag", to_string(path.tag)}};
}

}  // namespace

RunLock::RunLock(const std::string& run_dir) {
    fs::create_directories(run_dir);
    path_ = (fs::path(run_dir) / ".lock").string();
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
        throw DependencyError("run directory is locked by another command: " + path_ +
                              " (remove the stale lock if no command is running)");
}

RunLock::~RunLock() {
    if (fd_ >= 0) {
        ::close(fd_);
        ::unlink(path_.c_str());
    }
}

Runner::Runner(PipelineConfig config) : config_(std::move(config)) {
    if (config_.gateway.cache_dir.empty())
        config_.gateway.cache_dir = (fs::path(config_.run_dir) / "cache").string();
}

std::string Runner::artifact(const std::string& relative) const {
    return (fs::path(config_.run_dir) / relative).string();
}

std::string Runner::config_digest() const { return llm::sha256_hex(config_.to_json()); }

bool Runner::manifest_current(const std::string& stage, const std::string& input_digest) const {
    std::ifstream in(artifact("manifest/" + stage + ".json"));
    if (!in) return false;
    try {
        ordered_json j;
        in >> j;
        if (j.value("input_digest", "") != input_digest) return false;
        for (const auto& out : j.value("outputs", std::vector<std::string>{}))
            if (!fs::exists(artifact(out))) return false;
        return true;
    } catch (const nlohmann::json::exception&) {
        return false;
    }
}

void Runner::write_manifest(const std::string& stage, const std::string& input_digest,
                            const std::vector<std::string>& outputs) const {
    ordered_json j{{"stage", stage}, {"input_digest", input_digest}, {"outputs", outputs}};
    write_json_file(artifact("manifest/" + stage + ".json"), j);
}

void Runner::require(const std::string& relative, const std::string& produced_by) const {
    if (!fs::exists(artifact(relative)))
        throw DependencyError("missing " + relative + "; run `" + produced_by + "` first");
}

const TemporalKnowledgeGraph& Runner::graph() {
    if (!graph_) {
        if (config_.train_path.empty())
            throw DependencyError("config lacks data.train/valid/test paths");
        graph_ = load_graph(config_.train_path, config_.valid_path, config_.test_path,
                            config_.load_options());
    }
    return *graph_;
}

llm::Gateway& Runner::gateway() {
    if (!gateway_) gateway_.emplace(config_.gateway);
    return *gateway_;
}

void Runner::ingest() {
    std::string digest = llm::sha256_hex(config_digest() + file_digest(config_.train_path) +
                                         file_digest(config_.valid_path) +
                                         file_digest(config_.test_path));
    if (manifest_current("ingest", digest)) return;
    const auto& g = graph();
    auto stats = g.stats();
    fs::create_directories(config_.run_dir);
    std::ofstream entities(artifact("entities.tsv")), relations(artifact("relations.tsv")),
        times(artifact("times.tsv"));
    g.dump_vocab(entities, relations, times);
    write_json_file(artifact("stats.json"),
                    ordered_json{{"entities", stats.entities},
                                 {"base_relations", stats.base_relations},
                                 {"relations", stats.relations},
                                 {"train", stats.train},
                                 {"valid", stats.valid},
                                 {"test", stats.test},
                                 {"time_points", stats.time_points}});
    write_manifest("ingest", digest,
                   {"entities.tsv", "relations.tsv", "times.tsv", "stats.json"});
}

void Runner::init_embeddings() {
    ingest();
    std::string digest = llm::sha256_hex(config_digest() + file_digest(config_.train_path));
    if (manifest_current("init-embeddings", digest)) return;
    const auto& g = graph();
    DescriptionTable table;
    SemanticEmbeddings emb;
    try {
        table = generate_descriptions(g, gateway());
        emb = embeddings_from_descriptions(table, gateway(), config_.dim, config_.seed);
    } catch (const llm::TransportError& e) {
        if (!config_.allow_fallback) throw;
        // degraded mode: the offline backend finishes the run
        fprintf(stderr, "warning: gateway unreachable (%s); falling back to offline backend\n",
                e.what());
        auto offline_cfg = config_.gateway;
        offline_cfg.backend = "offline";
        llm::Gateway offline(offline_cfg);
        table = generate_descriptions(g, offline);
        emb = embeddings_from_descriptions(table, offline, config_.dim, config_.seed);
    }
    fs::create_directories(config_.run_dir);
    {
        std::ofstream desc(artifact("descriptions.jsonl"));
        table.write_jsonl(desc, g);
    }
    num::ParamStore store;
    emb.register_params(store);
    fs::create_directories(artifact("checkpoints"));
    num::save_checkpoint(artifact("checkpoints/semantic.ckpt"), store);
    write_manifest("init-embeddings", digest,
                   {"checkpoints/semantic.ckpt", "descriptions.jsonl"});
}

void Runner::train_gnn() {
    require("checkpoints/semantic.ckpt", "init-embeddings");
    std::string digest =
        llm::sha256_hex(config_digest() + file_digest(artifact("checkpoints/semantic.ckpt")));
    if (manifest_current("train-gnn", digest)) return;
    const auto& g = graph();
    auto store = num::load_checkpoint(artifact("checkpoints/semantic.ckpt"));
    auto emb = SemanticEmbeddings::from_store(store);
    std::mt19937_64 rng(config_.seed);
    auto params = GnnParams::init(config_.gnn_config(), rng);
    params.register_params(store);
    auto queries = queries_from_split(g, g.train(), config_.directions_enum());
    auto history = train_gnn_epochs(g, emb, store, params, std::move(queries), config_,
                                    config_.epochs);
    num::save_checkpoint(artifact("checkpoints/gnn.ckpt"), store);
    write_json_file(artifact("reports/gnn_losses.json"),
                    ordered_json{{"epoch_losses", history.epoch_losses}});
    write_manifest("train-gnn", digest,
                   {"checkpoints/gnn.ckpt", "reports/gnn_losses.json"});
}

namespace {

struct LoadedModel {
    num::ParamStore store;
    SemanticEmbeddings embeddings;
    GnnParams gnn;
};

}  // namespace

static LoadedModel load_model(const std::string& path, const PipelineConfig& config) {
    LoadedModel m;
    m.store = num::load_checkpoint(path);
    m.embeddings = SemanticEmbeddings::from_store(m.store);
    m.gnn = GnnParams::from_store(m.store, config.layers);
    return m;
}

void Runner::extract_paths() {
    require("checkpoints/gnn.ckpt", "train-gnn");
    std::string digest =
        llm::sha256_hex(config_digest() + file_digest(artifact("checkpoints/gnn.ckpt")));
    if (manifest_current("extract-paths", digest)) return;
    const auto& g = graph();
    auto model = load_model(artifact("checkpoints/gnn.ckpt"), config_);
    const auto& split = config_.eval_split == "valid" ? g.valid() : g.test();
    auto queries = queries_from_split(g, split, config_.directions_enum());
    if (config_.max_eval_queries > 0 && queries.size() > config_.max_eval_queries)
        queries.resize(config_.max_eval_queries);
    fs::create_directories(artifact("paths"));
    std::ofstream out(artifact("paths/" + config_.eval_split + ".jsonl"));
    std::optional<std::ofstream> subgraph_out;
    if (!config_.dump_subgraphs.empty()) {
        fs::create_directories(config_.dump_subgraphs);
        subgraph_out.emplace(fs::path(config_.dump_subgraphs) /
                             (config_.eval_split + ".subgraphs.jsonl"));
    }
    for (const auto& query : queries) {
        auto extraction = extract_for_query(query, g, model.gnn, model.embeddings, config_);
        if (subgraph_out) *subgraph_out << subgraph_to_json(extraction.subgraph).dump() << "\n";
        ordered_json candidates = ordered_json::array();
        for (const auto& c : extraction.candidates.items)
            candidates.push_back({{"entity", c.entity}, {"score", c.score}});
        ordered_json paths = ordered_json::array();
        for (const auto& p : extraction.paths) paths.push_back(path_to_json(p));
        out << ordered_json{{"query",
                             {{"subject", query.subject},
                              {"relation", query.relation},
                              {"time", query.time},
                              {"gold", query.gold_object}}},
                            {"empty", extraction.empty_subgraph},
                            {"candidates", std::move(candidates)},
                            {"paths", std::move(paths)}}
                   .dump()
            << "\n";
    }
    write_manifest("extract-paths", digest, {"paths/" + config_.eval_split + ".jsonl"});
}

void Runner::edit_paths_stage() {
    std::string paths_file = "paths/" + config_.eval_split + ".jsonl";
    require(paths_file, "extract-paths");
    std::string digest = llm::sha256_hex(config_digest() + file_digest(artifact(paths_file)));
    if (manifest_current("edit-paths", digest)) return;
    const auto& g = graph();
    std::ifstream in(artifact(paths_file));
    fs::create_directories(artifact("edits"));
    fs::create_directories(artifact("paths"));
    std::ofstream audit_out(artifact("edits/" + config_.eval_split + ".jsonl"));
    std::ofstream edited_out(artifact("paths/" + config_.eval_split + ".edited.jsonl"));
    std::string line;
    EditOptions opts;
    opts.time_style = config_.time_style_enum();
    opts.strict_parse = config_.strict_parse;
    auto mode = config_.editor_mode();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = ordered_json::parse(line);
        TemporalQuery query{row["query"]["subject"].get<EntityId>(),
                            row["query"]["relation"].get<RelationId>(),
                            row["query"]["time"].get<TimeId>(),
                            row["query"]["gold"].get<EntityId>()};
        std::vector<ReasoningPath> paths;
        for (const auto& pj : row["paths"]) {
            ReasoningPath p;
            p.query = query;
            p.candidate = pj["candidate"].get<EntityId>();
            auto tag = path_tag_from_string(pj["tag"].get<std::string>());
            p.tag = tag.value_or(PathTag::GnnExtracted);
            std::size_t i = 0;
            for (const auto& sj : pj["steps"]) {
                PathStep s{sj["s"].get<EntityId>(), sj["r"].get<RelationId>(),
                           sj["o"].get<EntityId>(), sj["t"].get<TimeId>(), 0.0};
                if (i < pj["alphas"].size()) s.alpha = pj["alphas"][i].get<double>();
                p.steps.push_back(s);
                ++i;
            }
            paths.push_back(std::move(p));
        }
        auto outcome = edit_paths(query, paths, g, mode,
                                  mode == EditorMode::Llm ? &gateway() : nullptr, opts);
        ordered_json audits = ordered_json::array();
        for (const auto& a : outcome.audits) {
            ordered_json ops = ordered_json::array();
            for (const auto& rec : a.operations) {
                ordered_json op{{"step", rec.op.step},
                                {"action", rec.op.action == EditAction::Keep     ? "keep"
                                           : rec.op.action == EditAction::Remove ? "remove"
                                                                                 : "revise"},
                                {"accepted", rec.verdict.accepted}};
                if (!rec.verdict.reason.empty()) op["rejection"] = rec.verdict.reason;
                if (!rec.op.reason.empty()) op["reason"] = rec.op.reason;
                ops.push_back(std::move(op));
            }
            ordered_json a_json{{"path_index", a.path_index},
                                {"original", a.original},
                                {"refined", a.refined ? ordered_json(*a.refined)
                                                      : ordered_json(nullptr)},
                                {"operations", std::move(ops)},
                                {"fallback", a.fallback},
                                {"prompt_tokens", a.prompt_tokens}};
            audits.push_back(std::move(a_json));
        }
        audit_out << ordered_json{{"query",
                                   {{"subject", query.subject},
                                    {"relation", query.relation},
                                    {"time", query.time},
                                    {"gold", query.gold_object}}},
                                  {"audits", std::move(audits)}}
                         .dump()
                  << "\n";
        ordered_json refined = ordered_json::array();
        for (const auto& p : outcome.refined) refined.push_back(path_to_json(p));
        edited_out << ordered_json{{"query",
                                    {{"subject", query.subject},
                                     {"relation", query.relation},
                                     {"time", query.time},
                                     {"gold", query.gold_object}}},
                                   {"paths", std::move(refined)}}
                          .dump()
                   << "\n";
    }
    write_manifest("edit-paths", digest,
                   {"edits/" + config_.eval_split + ".jsonl",
                    "paths/" + config_.eval_split + ".edited.jsonl"});
}

void Runner::train_aggregator_stage() {
    require("checkpoints/gnn.ckpt", "train-gnn");
    std::string digest =
        llm::sha256_hex(config_digest() + file_digest(artifact("checkpoints/gnn.ckpt")));
    if (manifest_current("train-aggregator", digest)) return;
    const auto& g = graph();
    auto model = load_model(artifact("checkpoints/gnn.ckpt"), config_);
    std::mt19937_64 rng(config_.seed + 31);
    auto tx = TransformerParams::init(config_.transformer_config(), rng);
    if (!config_.separate_time_encoders) tx.time_encoder = model.gnn.time_encoder;
    tx.register_params(model.store);
    auto queries = queries_from_split(g, g.train(), config_.directions_enum());
    auto history = train_aggregator_epochs(g, model.embeddings, model.store, model.gnn, tx,
                                           std::move(queries), config_,
                                           config_.aggregator_epochs);
    num::save_checkpoint(artifact("checkpoints/aggregator.ckpt"), model.store);
    write_json_file(artifact("reports/aggregator_losses.json"),
                    ordered_json{{"epoch_losses", history.epoch_losses}});
    write_manifest("train-aggregator", digest,
                   {"checkpoints/aggregator.ckpt", "reports/aggregator_losses.json"});
}

void Runner::predict_stage() {
    require("checkpoints/aggregator.ckpt", "train-aggregator");
    std::string digest = llm::sha256_hex(
        config_digest() + file_digest(artifact("checkpoints/aggregator.ckpt")));
    if (manifest_current("predict", digest)) return;
    const auto& g = graph();
    auto model = load_model(artifact("checkpoints/aggregator.ckpt"), config_);
    auto tx = TransformerParams::from_store(model.store, config_.transformer_layers);
    const auto& split = config_.eval_split == "valid" ? g.valid() : g.test();
    auto queries = queries_from_split(g, split, config_.directions_enum());
    if (config_.max_eval_queries > 0 && queries.size() > config_.max_eval_queries)
        queries.resize(config_.max_eval_queries);
    fs::create_directories(artifact("reports"));
    std::ofstream out(artifact("reports/predictions.jsonl"));
    auto mode = config_.editor_mode();
    for (const auto& query : queries) {
        auto qp = predict_query(query, g, model.gnn, tx, model.embeddings, config_,
                                mode == EditorMode::Llm ? &gateway() : nullptr);
        ordered_json ranked = ordered_json::array();
        for (const auto& c : qp.prediction.ranked)
            ranked.push_back({{"entity", c.entity},
                              {"score", c.score},
                              {"provenance", c.from_paths ? "path" : "gnn-fallback"}});
        out << ordered_json{{"query",
                             {{"subject", query.subject},
                              {"relation", query.relation},
                              {"time", query.time},
                              {"gold", query.gold_object}}},
                            {"editor", config_.editor},
                            {"time_style", config_.time_style},
                            {"predicted", qp.outcome.predicted},
                            {"provenance", qp.outcome.provenance},
                            {"edit_prompt_tokens", qp.edit_prompt_tokens},
                            {"ranked", std::move(ranked)}}
                   .dump()
            << "\n";
    }
    write_manifest("predict", digest, {"reports/predictions.jsonl"});
}

EvalReport Runner::evaluate_stage() {
    require("reports/predictions.jsonl", "predict");
    const auto& g = graph();
    std::ifstream in(artifact("reports/predictions.jsonl"));
    std::string line;
    std::vector<QueryOutcome> outcomes;
    long tokens = 0;
    std::string stamped_editor = config_.editor;
    std::string stamped_style = config_.time_style;
    bool stamped = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = ordered_json::parse(line);
        if (!stamped) {
            // the predictions carry the editor they were produced with
            stamped_editor = row.value("editor", stamped_editor);
            stamped_style = row.value("time_style", stamped_style);
            stamped = true;
        }
        QueryOutcome o;
        o.query = {row["query"]["subject"].get<EntityId>(),
                   row["query"]["relation"].get<RelationId>(),
                   row["query"]["time"].get<TimeId>(), row["query"]["gold"].get<EntityId>()};
        o.predicted = row["predicted"].get<EntityId>();
        o.provenance = row["provenance"].get<std::string>();
        tokens += row.value("edit_prompt_tokens", 0L);
        std::vector<RankedEntity> ranking;
        for (const auto& r : row["ranked"])
            ranking.push_back({r["entity"].get<EntityId>(), r["score"].get<double>()});
        if (o.query.has_gold()) {
            if (ranking.empty()) {
                o.raw_rank = static_cast<double>(g.entity_count());
                o.filtered_rank = o.raw_rank;
            } else {
                auto filter = g.objects_at(o.query.subject, o.query.relation, o.query.time);
                o.raw_rank = rank_of_gold(ranking, o.query.gold_object, {}, g.entity_count());
                o.filtered_rank =
                    rank_of_gold(ranking, o.query.gold_object, filter, g.entity_count());
            }
        }
        outcomes.push_back(std::move(o));
    }
    auto report = EvalReport::from_outcomes(std::move(outcomes));
    report.edit_prompt_tokens = tokens;
    report.editor_mode = stamped_editor;
    report.time_style = stamped_style;
    report.metrics = config_.metrics;
    write_file(artifact("reports/report.json"), report.to_json() + "\n");
    std::ostringstream text;
    report.write_text(text);
    write_file(artifact("reports/report.txt"), text.str());
    return report;
}

std::map<std::string, EvalReport> Runner::ablate_stage() {
    require("checkpoints/aggregator.ckpt", "train-aggregator");
    const auto& g = graph();
    auto model = load_model(artifact("checkpoints/aggregator.ckpt"), config_);
    auto tx = TransformerParams::from_store(model.store, config_.transformer_layers);
    const auto& split = config_.eval_split == "valid" ? g.valid() : g.test();
    auto queries = queries_from_split(g, split, config_.directions_enum());
    if (config_.max_eval_queries > 0 && queries.size() > config_.max_eval_queries)
        queries.resize(config_.max_eval_queries);
    auto cells = run_ablation(queries, g, model.gnn, tx, model.embeddings, config_, &gateway());
    ordered_json j;
    for (const auto& [name, report] : cells) {
        j[name] = {{"raw", {{"h1", report.raw.h1}, {"h3", report.raw.h3}, {"h10", report.raw.h10}}},
                   {"filtered",
                    {{"h1", report.filtered.h1},
                     {"h3", report.filtered.h3},
                     {"h10", report.filtered.h10}}},
                   {"edit_prompt_tokens", report.edit_prompt_tokens}};
    }
    write_json_file(artifact("reports/ablation.json"), j);
    return cells;
}

}  // namespace tkgr
