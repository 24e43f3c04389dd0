#include "tkgr/gnn.hpp"

#include <algorithm>
#include <cmath>

namespace tkgr {

using num::Tensor;

GnnParams GnnParams::init(const GnnConfig& config, std::mt19937_64& rng) {
    if (config.layers < 1) throw num::DimensionError("gnn: layer count must be >= 1");
    if (config.budget < 1) throw num::DimensionError("gnn: neighbor budget must be >= 1");
    GnnParams p;
    for (int l = 0; l < config.layers; ++l) {
        p.w_msg.push_back(num::xavier_init({config.dim, config.dim}, rng));
        p.w_att.push_back(num::xavier_init({config.attn_dim, 3 * config.dim}, rng));
        p.v_att.push_back(num::xavier_init({config.attn_dim}, rng));
    }
    p.w_score = num::xavier_init({config.dim}, rng);
    p.fusion = init_fusion(config.dim, config.time_dim, rng);
    p.time_encoder = init_time_encoder(config.time_dim, rng);
    return p;
}

void GnnParams::register_params(num::ParamStore& store) const {
    for (std::size_t l = 0; l < w_msg.size(); ++l) {
        auto tag = std::to_string(l);
        store["gnn.w_msg." + tag] = w_msg[l];
        store["gnn.w_att." + tag] = w_att[l];
        store["gnn.v_att." + tag] = v_att[l];
    }
    store["gnn.w_score"] = w_score;
    store["gnn.fusion"] = fusion.weight;
    register_time_encoder(store, "gnn.time", time_encoder);
}

GnnParams GnnParams::from_store(const num::ParamStore& store, int layers) {
    GnnParams p;
    for (int l = 0; l < layers; ++l) {
        auto tag = std::to_string(l);
        p.w_msg.push_back(store.at("gnn.w_msg." + tag));
        p.w_att.push_back(store.at("gnn.w_att." + tag));
        p.v_att.push_back(store.at("gnn.v_att." + tag));
    }
    p.w_score = store.at("gnn.w_score");
    p.fusion.weight = store.at("gnn.fusion");
    p.time_encoder = time_encoder_from_store(store, "gnn.time");
    return p;
}

std::optional<std::size_t> CandidateScores::index_of(EntityId e) const {
    auto it = std::lower_bound(entities.begin(), entities.end(), e);
    if (it == entities.end() || *it != e) return std::nullopt;
    return static_cast<std::size_t>(it - entities.begin());
}

Tensor attention_score(const Tensor& h_src, const Tensor& h_rel_time, const Tensor& h_query,
                       const Tensor& w_att, const Tensor& v_att) {
    auto joint = num::concat({h_src, h_rel_time, h_query});
    auto hidden = num::relu(num::matmul(w_att, joint));
    return num::sigmoid(num::dot(v_att, hidden));
}

namespace {

// Candidate edge before selection.
struct EdgeCandidate {
    int src;  // node index in the previous layer
    Edge edge;
    Tensor h_rel_time;
    Tensor alpha;
    double alpha_value;
};

// Selection order: strongest attention first; ties go to the edge closer in
// time to the query, then to the earlier insertion index.
bool candidate_before(const EdgeCandidate& a, const EdgeCandidate& b) {
    if (a.alpha_value != b.alpha_value) return a.alpha_value > b.alpha_value;
    if (a.edge.time != b.edge.time) return a.edge.time > b.edge.time;
    return a.edge.insertion_index < b.edge.insertion_index;
}

// Per-target pick stratified by relation: each relation may take at most
// ceil(budget / #relations) edges before the remainder is backfilled in
// attention order.
std::vector<std::size_t> stratified_pick(const std::vector<EdgeCandidate>& group,
                                         std::size_t budget) {
    std::vector<std::size_t> order(group.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return candidate_before(group[a], group[b]);
    });
    if (order.size() <= budget) return order;

    std::map<RelationId, std::size_t> taken_per_relation;
    std::size_t distinct = 0;
    for (const auto& c : group)
        if (taken_per_relation.emplace(c.edge.relation, 0).second) ++distinct;
    std::size_t quota = (budget + distinct - 1) / distinct;

    std::vector<std::size_t> picked;
    std::vector<std::size_t> leftovers;
    picked.reserve(budget);
    for (std::size_t idx : order) {
        if (picked.size() == budget) break;
        auto& taken = taken_per_relation[group[idx].edge.relation];
        if (taken < quota) {
            ++taken;
            picked.push_back(idx);
        } else {
            leftovers.push_back(idx);
        }
    }
    for (std::size_t idx : leftovers) {
        if (picked.size() == budget) break;
        picked.push_back(idx);
    }
    std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
        return candidate_before(group[a], group[b]);
    });
    return picked;
}

struct RelTimeKey {
    RelationId r;
    TimeId t;
    bool operator<(const RelTimeKey& o) const { return r != o.r ? r < o.r : t < o.t; }
};

}  // namespace

LayeredSubgraph expand_subgraph(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                                const GnnParams& params, const EmbeddingProvider& embeddings,
                                const GnnConfig& config) {
    LayeredSubgraph sg;
    sg.query = query;
    sg.layers.resize(static_cast<std::size_t>(config.layers) + 1);
    sg.edges.resize(static_cast<std::size_t>(config.layers) + 1);

    SubgraphNode root;
    root.entity = query.subject;
    root.floor_time = 0;
    // Layer 0 holds only the query entity, where the query-embedding and
    // self-embedding init modes coincide.
    root.embedding = embeddings.entity(query.subject);
    sg.layers[0].push_back(std::move(root));

    auto h_query = relation_time_embedding(embeddings.relation(query.relation), query.time,
                                           params.fusion, params.time_encoder);
    std::map<RelTimeKey, Tensor> rel_time_cache;
    auto rel_time = [&](RelationId r, TimeId t) {
        auto key = RelTimeKey{r, t};
        auto it = rel_time_cache.find(key);
        if (it != rel_time_cache.end()) return it->second;
        auto h = relation_time_embedding(embeddings.relation(r), t, params.fusion,
                                         params.time_encoder);
        return rel_time_cache.emplace(key, std::move(h)).first->second;
    };

    auto budget = static_cast<std::size_t>(std::max(1, config.budget));
    for (int layer = 1; layer <= config.layers; ++layer) {
        const auto& frontier = sg.layers[static_cast<std::size_t>(layer - 1)];

        // Score each source's historical edges and keep its top-budget.
        std::vector<EdgeCandidate> kept_per_source;
        for (std::size_t src = 0; src < frontier.size(); ++src) {
            const auto& node = frontier[src];
            std::vector<EdgeCandidate> candidates;
            for (const auto& edge : graph.neighbors_before(node.entity, query.time, config.window)) {
                if (config.monotone_paths && edge.time < node.floor_time) continue;
                EdgeCandidate c;
                c.src = static_cast<int>(src);
                c.edge = edge;
                c.h_rel_time = rel_time(edge.relation, edge.time);
                c.alpha = attention_score(node.embedding, c.h_rel_time, h_query,
                                          params.w_att[static_cast<std::size_t>(layer - 1)],
                                          params.v_att[static_cast<std::size_t>(layer - 1)]);
                c.alpha_value = c.alpha.value();
                candidates.push_back(std::move(c));
            }
            std::sort(candidates.begin(), candidates.end(), candidate_before);
            if (candidates.size() > budget) candidates.resize(budget);
            for (auto& c : candidates) kept_per_source.push_back(std::move(c));
        }

        // Group by target, apply the stratified per-target budget.
        std::map<EntityId, std::vector<EdgeCandidate>> by_target;
        for (auto& c : kept_per_source) by_target[c.edge.object].push_back(std::move(c));

        auto& nodes = sg.layers[static_cast<std::size_t>(layer)];
        auto& edges = sg.edges[static_cast<std::size_t>(layer)];
        for (auto& [target, group] : by_target) {
            auto picked = stratified_pick(group, budget);
            SubgraphNode node;
            node.entity = target;
            int dst = static_cast<int>(nodes.size());
            TimeId floor = 0;
            for (std::size_t idx : picked) {
                auto& c = group[idx];
                SubgraphEdge e;
                e.src = c.src;
                e.dst = dst;
                e.relation = c.edge.relation;
                e.time = c.edge.time;
                e.insertion_index = c.edge.insertion_index;
                e.alpha = c.alpha;
                e.alpha_value = c.alpha_value;
                e.h_rel_time = c.h_rel_time;
                floor = std::max(floor, e.time);
                edges.push_back(std::move(e));
            }
            node.floor_time = floor;
            nodes.push_back(std::move(node));
        }
        propagate_layer(sg, layer, params, config);
    }

    sg.empty = sg.layers[1].empty();
    return sg;
}

LayeredSubgraph reforward_subgraph(const LayeredSubgraph& structure, const GnnParams& params,
                                   const EmbeddingProvider& embeddings, const GnnConfig& config) {
    LayeredSubgraph sg = structure;
    auto& root = sg.layers[0][0];
    root.embedding = embeddings.entity(sg.query.subject);
    auto h_query = relation_time_embedding(embeddings.relation(sg.query.relation), sg.query.time,
                                           params.fusion, params.time_encoder);
    for (int layer = 1; layer < static_cast<int>(sg.layers.size()); ++layer) {
        const auto& prev = sg.layers[static_cast<std::size_t>(layer - 1)];
        for (auto& e : sg.edges[static_cast<std::size_t>(layer)]) {
            e.h_rel_time = relation_time_embedding(embeddings.relation(e.relation), e.time,
                                                   params.fusion, params.time_encoder);
            e.alpha = attention_score(prev[static_cast<std::size_t>(e.src)].embedding,
                                      e.h_rel_time, h_query,
                                      params.w_att[static_cast<std::size_t>(layer - 1)],
                                      params.v_att[static_cast<std::size_t>(layer - 1)]);
            e.alpha_value = e.alpha.value();
        }
        propagate_layer(sg, layer, params, config);
    }
    return sg;
}

void propagate_layer(LayeredSubgraph& sg, int layer, const GnnParams& params,
                     const GnnConfig& config) {
    auto& nodes = sg.layers[static_cast<std::size_t>(layer)];
    const auto& prev = sg.layers[static_cast<std::size_t>(layer - 1)];
    const auto& edges = sg.edges[static_cast<std::size_t>(layer)];

    std::vector<std::vector<const SubgraphEdge*>> in_edges(nodes.size());
    for (const auto& e : edges) in_edges[static_cast<std::size_t>(e.dst)].push_back(&e);

    for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto& node = nodes[i];
        if (in_edges[i].empty()) {
            node.embedding = Tensor::zeros({config.dim});
            continue;
        }
        Tensor weighted;
        std::vector<Tensor> alphas;
        for (const SubgraphEdge* e : in_edges[i]) {
            const auto& h_src = prev[static_cast<std::size_t>(e->src)].embedding;
            auto message = num::scalar_mul(e->alpha, num::add(h_src, e->h_rel_time));
            weighted = weighted.defined() ? num::add(weighted, message) : message;
            alphas.push_back(e->alpha);
        }
        Tensor agg = weighted;
        if (config.aggregate == Aggregate::WeightedMean) {
            auto denom = num::sum(num::concat(alphas));
            agg = num::scalar_div(weighted, denom);
        }
        node.embedding =
            num::relu(num::matmul(params.w_msg[static_cast<std::size_t>(layer - 1)], agg));
    }
}

CandidateScores score_candidates(const LayeredSubgraph& sg, const Tensor& w_score) {
    CandidateScores out;
    const auto& final_nodes = sg.final_layer();
    std::vector<int> order(static_cast<int>(final_nodes.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return final_nodes[static_cast<std::size_t>(a)].entity <
               final_nodes[static_cast<std::size_t>(b)].entity;
    });
    for (int idx : order) {
        const auto& node = final_nodes[static_cast<std::size_t>(idx)];
        auto score = num::dot(w_score, node.embedding);
        out.entities.push_back(node.entity);
        out.values.push_back(score.value());
        out.scores.push_back(std::move(score));
        out.node_index.push_back(idx);
    }
    return out;
}

TrainStepResult training_step(const std::vector<TemporalQuery>& batch,
                              const TemporalKnowledgeGraph& graph, const GnnParams& params,
                              const SemanticEmbeddings& embeddings, num::ParamStore& store,
                              num::AdamState& adam, const GnnConfig& config) {
    TrainStepResult result;
    if (batch.empty()) return result;
    double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& query : batch) {
        if (!query.has_gold()) throw TrainingError("training: query lacks a gold object");
        EmbeddingProvider provider(embeddings, /*frozen=*/false);
        // Edge selection only reads attention values, so the expansion runs
        // off the tape; the kept structure is then re-forwarded with
        // gradients. Discarded candidate edges never carry gradient either
        // way.
        LayeredSubgraph sg;
        {
            num::NoGrad guard;
            EmbeddingProvider selection_provider(embeddings, /*frozen=*/true);
            sg = expand_subgraph(query, graph, params, selection_provider, config);
        }
        sg = reforward_subgraph(sg, params, provider, config);
        auto scored = score_candidates(sg, params.w_score);

        std::vector<Tensor> logits = scored.scores;
        auto gold_index = scored.index_of(query.gold_object);
        if (!gold_index) {
            if (config.strict_loss)
                throw TrainingError("training: gold entity unreachable for query on entity " +
                                    std::to_string(query.subject));
            // Unreached gold enters with a zero-vector representation.
            logits.push_back(Tensor::scalar(0.0));
            gold_index = logits.size() - 1;
            ++result.gold_unreached;
        }
        std::size_t zero_count =
            config.loss_denominator == LossDenominator::AllEntities
                ? graph.entity_count() - logits.size()
                : 0;
        auto loss = num::nll_loss(num::concat(logits), *gold_index, zero_count);
        result.loss += loss.value();
        backward(num::scale(loss, inv_batch));
        ++result.queries_used;
    }
    adam.step(store);
    adam.zero_grads(store);
    result.loss *= inv_batch;
    return result;
}

}  // namespace tkgr
