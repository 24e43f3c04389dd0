#pragma once
// Path aggregation: refined paths become temporally fused token sequences, a
// relational attention encoder contextualizes them, and per-candidate
// validity scores pick the final answer. Candidates that lost every path
// fall back to their normalized extractor score, ranked strictly below
// transformer-scored candidates.

#include "tkgr/optim.hpp"
#include "tkgr/path_engine.hpp"
#include "tkgr/semantic_init.hpp"
#include "tkgr/tensor.hpp"
#include "tkgr/time_encoding.hpp"
#include "tkgr/tkg.hpp"

#include <map>
#include <string>
#include <vector>

namespace tkgr {

struct PredictionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TransformerConfig {
    std::size_t dim = 128;
    std::size_t heads = 1;      // d_k = dim / heads
    std::size_t layers = 1;
    std::size_t time_dim = 64;
    double fallback_weight = 1.0;  // weight on normalized extractor scores
    bool finetune_embeddings = false;
};

struct TransformerLayerParams {
    num::Tensor w_query;    // (d, d)
    num::Tensor w_key;      // (d, d)
    num::Tensor w_key_rel;  // (d, d), edge-information injection
    num::Tensor w_value;    // (d, d)
};

struct TransformerParams {
    std::vector<TransformerLayerParams> layers;
    num::Tensor w_out;  // (d, d): bilinear score h^T W_out h_entity
    TimeEncoderParams time_encoder;

    static TransformerParams init(const TransformerConfig& config, std::mt19937_64& rng);
    void register_params(num::ParamStore& store) const;
    static TransformerParams from_store(const num::ParamStore& store, std::size_t layers);
};

struct PathSequence {
    std::vector<num::Tensor> tokens;       // x_l = h_{e_l} + h_{r_l} + pad(phi(t_l))
    std::vector<RelationId> relations;     // relation of step l (chain adjacency indicator)
    EntityId candidate = 0;
    PathTag tag = PathTag::GnnExtracted;
};

PathSequence build_input_sequence(const ReasoningPath& path, const EmbeddingProvider& embeddings,
                                  const TimeEncoderParams& time_encoder, std::size_t dim);

struct AttentionResult {
    // weights[head][v][u]: softmax-normalized row per query position v
    std::vector<std::vector<std::vector<double>>> weights;
    std::vector<num::Tensor> tokens;  // contextualized, after residual + layer norm
};

AttentionResult relational_attention(const std::vector<num::Tensor>& tokens,
                                     const std::vector<RelationId>& relations,
                                     const EmbeddingProvider& embeddings,
                                     const TransformerLayerParams& params, std::size_t heads);

// Full encoder stack, mean-pooled.
num::Tensor encode_path(const PathSequence& sequence, const TransformerParams& params,
                        const EmbeddingProvider& embeddings, std::size_t heads);

num::Tensor path_score(const PathSequence& sequence, const TransformerParams& params,
                       const EmbeddingProvider& embeddings, std::size_t heads);

struct CandidatePrediction {
    EntityId entity = 0;
    double score = 0.0;       // composite; fallback tier sits strictly below
    bool from_paths = false;
    int best_path = -1;       // index into the refined path list
};

struct FinalPrediction {
    std::vector<CandidatePrediction> ranked;  // descending composite score
    EntityId predicted = -1;
    std::string provenance;  // "path:<index>" or "gnn-fallback"
};

FinalPrediction predict(const TemporalQuery& query, const std::vector<ReasoningPath>& paths,
                        const CandidateSet& extractor_candidates,
                        const TransformerParams& params, const EmbeddingProvider& embeddings,
                        const TransformerConfig& config);

struct AggregatorBatchItem {
    TemporalQuery query;  // gold required
    std::vector<ReasoningPath> paths;
};

struct AggregatorStepResult {
    double loss = 0.0;
    std::size_t queries_used = 0;
    std::size_t skipped_gold_missing = 0;
};

AggregatorStepResult train_aggregator(const std::vector<AggregatorBatchItem>& batch,
                                      const TransformerParams& params,
                                      const SemanticEmbeddings& embeddings,
                                      num::ParamStore& store, num::AdamState& adam,
                                      const TransformerConfig& config);

}  // namespace tkgr
