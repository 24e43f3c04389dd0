#pragma once
// End-to-end orchestration: configuration, per-stage artifact management
// under a run directory, training/extraction/editing/prediction drivers, the
// ablation matrix, and the gradient-check suite. The CLI is a thin wrapper
// over this module.

#include "tkgr/checkpoint.hpp"
#include "tkgr/eval.hpp"
#include "tkgr/gateway.hpp"
#include "tkgr/gnn.hpp"
#include "tkgr/path_editor.hpp"
#include "tkgr/path_engine.hpp"
#include "tkgr/path_transformer.hpp"
#include "tkgr/semantic_init.hpp"
#include "tkgr/synthetic.hpp"
#include "tkgr/tkg.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tkgr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DependencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class QueryDirections { Object, Both };

struct PipelineConfig {
    // data
    std::string train_path, valid_path, test_path;
    std::string time_format = "index";  // index | iso-date
    bool allow_empty_split = false;

    // model (defaults follow the tuned configuration)
    std::size_t dim = 128;
    std::size_t time_dim = 64;
    std::size_t attn_dim = 128;
    int layers = 3;
    int k_candidates = 30;
    int budget = 32;
    std::optional<TimeId> window;
    bool monotone_paths = true;
    std::string aggregate = "mean";        // mean | sum
    std::string init_mode = "query";       // query | self
    std::string loss_denominator = "subgraph";  // subgraph | all
    bool strict_loss = false;
    bool separate_time_encoders = false;

    // training
    double learning_rate = 0.001;
    int batch_size = 64;
    int epochs = 5;
    int aggregator_epochs = 5;
    std::uint64_t seed = 7;
    std::string directions = "both";  // object | both
    std::size_t max_train_queries = 0;  // 0 = unlimited

    // stage III
    std::size_t heads = 1;
    std::size_t transformer_layers = 1;
    double fallback_weight = 1.0;
    bool finetune_embeddings = false;

    // editing
    std::string editor = "rules";  // off | rules | llm
    bool strict_parse = false;
    std::string time_style = "index";  // index | raw
    std::string eval_split = "test";   // valid | test
    std::size_t max_eval_queries = 0;  // 0 = unlimited

    // gateway
    llm::BackendConfig gateway;
    bool allow_fallback = false;  // remote failure falls back to offline

    // run
    std::string run_dir = "runs/default";
    std::string metrics = "both";        // raw | filtered | both
    std::string dump_subgraphs;          // directory for per-query debug dumps

    static PipelineConfig from_file(const std::string& path);
    static PipelineConfig from_text(const std::string& text);
    std::string to_json() const;

    GnnConfig gnn_config() const;
    TransformerConfig transformer_config() const;
    EditorMode editor_mode() const;
    TimeStyle time_style_enum() const;
    QueryDirections directions_enum() const;
    LoadOptions load_options() const;
};

// ---------------------------------------------------------------------------
// library-level drivers (no file IO); the acceptance suite exercises these

std::vector<TemporalQuery> queries_from_split(const TemporalKnowledgeGraph& graph,
                                              const std::vector<Quadruple>& split,
                                              QueryDirections directions);

struct TrainHistory {
    std::vector<double> epoch_losses;
};

TrainHistory train_gnn_epochs(const TemporalKnowledgeGraph& graph,
                              const SemanticEmbeddings& embeddings, num::ParamStore& store,
                              const GnnParams& params, std::vector<TemporalQuery> queries,
                              const PipelineConfig& config, int epochs);

struct Extraction {
    CandidateSet candidates;
    std::vector<ReasoningPath> paths;
    LayeredSubgraph subgraph;  // kept for debugging dumps; tensors are handles
    bool empty_subgraph = false;
};

Extraction extract_for_query(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                             const GnnParams& params, const SemanticEmbeddings& embeddings,
                             const PipelineConfig& config);

TrainHistory train_aggregator_epochs(const TemporalKnowledgeGraph& graph,
                                     const SemanticEmbeddings& embeddings,
                                     num::ParamStore& store, const GnnParams& gnn_params,
                                     const TransformerParams& tx_params,
                                     std::vector<TemporalQuery> queries,
                                     const PipelineConfig& config, int epochs);

struct QueryPrediction {
    QueryOutcome outcome;
    FinalPrediction prediction;
    long edit_prompt_tokens = 0;
};

QueryPrediction predict_query(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                              const GnnParams& gnn_params, const TransformerParams& tx_params,
                              const SemanticEmbeddings& embeddings, const PipelineConfig& config,
                              llm::Gateway* gateway);

// Scores a query from externally prepared paths; the corruption experiment
// feeds pre-edited path sets through this.
QueryOutcome score_query_with_paths(const TemporalQuery& query,
                                    const std::vector<ReasoningPath>& paths,
                                    const CandidateSet& candidates,
                                    const TemporalKnowledgeGraph& graph,
                                    const TransformerParams& tx_params,
                                    const SemanticEmbeddings& embeddings,
                                    const PipelineConfig& config);

EvalReport evaluate_queries(const std::vector<TemporalQuery>& queries,
                            const TemporalKnowledgeGraph& graph, const GnnParams& gnn_params,
                            const TransformerParams& tx_params,
                            const SemanticEmbeddings& embeddings, const PipelineConfig& config,
                            llm::Gateway* gateway);

// {edit off | rules | llm} x {discrete | raw time style}
std::map<std::string, EvalReport> run_ablation(const std::vector<TemporalQuery>& queries,
                                               const TemporalKnowledgeGraph& graph,
                                               const GnnParams& gnn_params,
                                               const TransformerParams& tx_params,
                                               const SemanticEmbeddings& embeddings,
                                               const PipelineConfig& config,
                                               llm::Gateway* gateway);

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
};

// Every differentiable op plus the composite stage chains, across `seeds`
// seeds starting at `first_seed`. Threshold for callers: 1e-4.
std::vector<GradCheckEntry> run_all_grad_checks(std::uint64_t first_seed, int seeds);

// ---------------------------------------------------------------------------
// file-backed runner used by the CLI

class Runner {
public:
    explicit Runner(PipelineConfig config);

    // Each stage validates its inputs, short-circuits when the manifest shows
    // identical inputs, and writes artifacts plus a manifest into the run
    // directory.
    void ingest();
    void init_embeddings();
    void train_gnn();
    void extract_paths();
    void edit_paths_stage();
    void train_aggregator_stage();
    void predict_stage();
    EvalReport evaluate_stage();
    std::map<std::string, EvalReport> ablate_stage();

    const PipelineConfig& config() const { return config_; }
    const TemporalKnowledgeGraph& graph();

private:
    std::string artifact(const std::string& relative) const;
    bool manifest_current(const std::string& stage, const std::string& input_digest) const;
    void write_manifest(const std::string& stage, const std::string& input_digest,
                        const std::vector<std::string>& outputs) const;
    void require(const std::string& relative, const std::string& produced_by) const;
    std::string config_digest() const;

    llm::Gateway& gateway();

    PipelineConfig config_;
    std::optional<TemporalKnowledgeGraph> graph_;
    std::optional<llm::Gateway> gateway_;
};

// Exclusive run-directory lock (one command at a time per run directory).
class RunLock {
public:
    explicit RunLock(const std::string& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

}  // namespace tkgr
