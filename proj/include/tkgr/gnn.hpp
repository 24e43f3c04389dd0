#pragma once
// Query-conditioned layered subgraph construction with attention-guided edge
// sampling, message passing, candidate scoring, and cross-entropy training.
// Recorded attention weights drive the path backtracker.

#include "tkgr/optim.hpp"
#include "tkgr/semantic_init.hpp"
#include "tkgr/tensor.hpp"
#include "tkgr/time_encoding.hpp"
#include "tkgr/tkg.hpp"

#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

namespace tkgr {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Aggregate { WeightedMean, WeightedSum };
enum class InitMode { QueryEmbedding, SelfEmbedding };
enum class LossDenominator { Subgraph, AllEntities };

struct GnnConfig {
    int layers = 3;
    int budget = 32;                   // per hop, both per-source and per-target
    std::optional<TimeId> window;      // unlimited when unset
    bool monotone_paths = true;        // edges never step back before the source's history
    Aggregate aggregate = Aggregate::WeightedMean;
    InitMode init_mode = InitMode::QueryEmbedding;
    LossDenominator loss_denominator = LossDenominator::Subgraph;
    bool strict_loss = false;
    std::size_t dim = 128;
    std::size_t attn_dim = 128;
    std::size_t time_dim = 64;
};

struct GnnParams {
    std::vector<num::Tensor> w_msg;  // per layer, (d, d)
    std::vector<num::Tensor> w_att;  // per layer, (a, 3d)
    std::vector<num::Tensor> v_att;  // per layer, (a)
    num::Tensor w_score;             // (d); no bias term exists
    RelationTimeFusionParams fusion;
    TimeEncoderParams time_encoder;

    static GnnParams init(const GnnConfig& config, std::mt19937_64& rng);
    void register_params(num::ParamStore& store) const;
    static GnnParams from_store(const num::ParamStore& store, int layers);
};

struct SubgraphNode {
    EntityId entity;
    num::Tensor embedding;  // h^l
    TimeId floor_time = 0;  // latest selected in-edge time
};

struct SubgraphEdge {
    int src = 0;  // node index in layer l-1
    int dst = 0;  // node index in layer l
    RelationId relation = 0;
    TimeId time = 0;
    std::uint32_t insertion_index = 0;
    double alpha_value = 0.0;
    num::Tensor alpha;        // scalar, in (0,1)
    num::Tensor h_rel_time;   // fused relation-time embedding of this edge
};

struct LayeredSubgraph {
    TemporalQuery query;
    bool empty = false;  // query entity has no usable history
    std::vector<std::vector<SubgraphNode>> layers;  // [0..L]
    std::vector<std::vector<SubgraphEdge>> edges;   // edges[l]: layer l-1 -> l, l >= 1

    const std::vector<SubgraphNode>& final_layer() const { return layers.back(); }
};

struct CandidateScores {
    std::vector<EntityId> entities;  // ascending
    std::vector<double> values;
    std::vector<num::Tensor> scores;
    std::vector<int> node_index;  // into final layer

    std::optional<std::size_t> index_of(EntityId e) const;
};

// alpha = sigmoid(v_att . relu(W_att [h_s || h_rt || h_rq_tq]))
num::Tensor attention_score(const num::Tensor& h_src, const num::Tensor& h_rel_time,
                            const num::Tensor& h_query, const num::Tensor& w_att,
                            const num::Tensor& v_att);

LayeredSubgraph expand_subgraph(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                                const GnnParams& params, const EmbeddingProvider& embeddings,
                                const GnnConfig& config);

// Recomputes every tensor of `structure` (attention, messages, embeddings)
// from current parameter values without re-sampling edges; gradient checks
// differentiate through a frozen subgraph this way.
LayeredSubgraph reforward_subgraph(const LayeredSubgraph& structure, const GnnParams& params,
                                   const EmbeddingProvider& embeddings, const GnnConfig& config);

// h_o = relu(W_msg^l . agg(alpha * (h_s + h_rt))); isolated targets keep zero.
void propagate_layer(LayeredSubgraph& subgraph, int layer, const GnnParams& params,
                     const GnnConfig& config);

CandidateScores score_candidates(const LayeredSubgraph& subgraph, const num::Tensor& w_score);

struct TrainStepResult {
    double loss = 0.0;
    std::size_t queries_used = 0;
    std::size_t gold_unreached = 0;
};

TrainStepResult training_step(const std::vector<TemporalQuery>& batch,
                              const TemporalKnowledgeGraph& graph, const GnnParams& params,
                              const SemanticEmbeddings& embeddings, num::ParamStore& store,
                              num::AdamState& adam, const GnnConfig& config);

}  // namespace tkgr
