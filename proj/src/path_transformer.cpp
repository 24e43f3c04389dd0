#include "tkgr/path_transformer.hpp"

#include <algorithm>
#include <cmath>

namespace tkgr {

using num::Tensor;

TransformerParams TransformerParams::init(const TransformerConfig& config, std::mt19937_64& rng) {
    if (config.heads == 0 || config.dim % config.heads != 0)
        throw num::DimensionError("transformer: dim must be divisible by heads");
    TransformerParams p;
    for (std::size_t l = 0; l < config.layers; ++l) {
        TransformerLayerParams layer;
        layer.w_query = num::xavier_init({config.dim, config.dim}, rng);
        layer.w_key = num::xavier_init({config.dim, config.dim}, rng);
        layer.w_key_rel = num::xavier_init({config.dim, config.dim}, rng);
        layer.w_value = num::xavier_init({config.dim, config.dim}, rng);
        p.layers.push_back(std::move(layer));
    }
    p.w_out = num::xavier_init({config.dim, config.dim}, rng);
    p.time_encoder = init_time_encoder(config.time_dim, rng);
    return p;
}

void TransformerParams::register_params(num::ParamStore& store) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto tag = std::to_string(l);
        store["ptx.w_query." + tag] = layers[l].w_query;
        store["ptx.w_key." + tag] = layers[l].w_key;
        store["ptx.w_key_rel." + tag] = layers[l].w_key_rel;
        store["ptx.w_value." + tag] = layers[l].w_value;
    }
    store["ptx.w_out"] = w_out;
    register_time_encoder(store, "ptx.time", time_encoder);
}

TransformerParams TransformerParams::from_store(const num::ParamStore& store,
                                                std::size_t layers) {
    TransformerParams p;
    for (std::size_t l = 0; l < layers; ++l) {
        auto tag = std::to_string(l);
        p.layers.push_back({store.at("ptx.w_query." + tag), store.at("ptx.w_key." + tag),
                            store.at("ptx.w_key_rel." + tag), store.at("ptx.w_value." + tag)});
    }
    p.w_out = store.at("ptx.w_out");
    p.time_encoder = time_encoder_from_store(store, "ptx.time");
    return p;
}

PathSequence build_input_sequence(const ReasoningPath& path, const EmbeddingProvider& embeddings,
                                  const TimeEncoderParams& time_encoder, std::size_t dim) {
    if (path.steps.empty()) throw PredictionError("sequence: path has no steps");
    std::size_t d_t = time_encoder.dim();
    if (d_t > dim) throw num::DimensionError("sequence: time dim exceeds model dim");
    PathSequence seq;
    seq.candidate = path.candidate;
    seq.tag = path.tag;
    for (const auto& step : path.steps) {
        auto phi = time_features(step.time, time_encoder);
        Tensor padded = d_t == dim ? phi : num::concat({phi, Tensor::zeros({dim - d_t})});
        auto token = num::add(num::add(embeddings.entity(step.object),
                                       embeddings.relation(step.relation)),
                              padded);
        seq.tokens.push_back(std::move(token));
        seq.relations.push_back(step.relation);
    }
    return seq;
}

AttentionResult relational_attention(const std::vector<Tensor>& tokens,
                                     const std::vector<RelationId>& relations,
                                     const EmbeddingProvider& embeddings,
                                     const TransformerLayerParams& params, std::size_t heads) {
    std::size_t length = tokens.size();
    std::size_t dim = tokens.front().size();
    if (heads == 0 || dim % heads != 0)
        throw num::DimensionError("attention: dim must be divisible by heads");
    std::size_t d_k = dim / heads;
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));

    std::vector<Tensor> queries, keys_base, values;
    for (const auto& x : tokens) {
        queries.push_back(num::matvec_t(params.w_query, x));
        keys_base.push_back(num::matvec_t(params.w_key, x));
        values.push_back(num::matvec_t(params.w_value, x));
    }

    AttentionResult result;
    result.weights.assign(heads, {});
    std::vector<std::vector<Tensor>> rows(heads);  // softmaxed weight rows per head

    for (std::size_t v = 0; v < length; ++v) {
        // Keys seen from position v: chain-adjacent pairs inject the linking
        // relation's embedding.
        std::vector<Tensor> keys;
        keys.reserve(length);
        for (std::size_t u = 0; u < length; ++u) {
            Tensor k = keys_base[u];
            if (v == u + 1)
                k = num::add(k, num::matvec_t(params.w_key_rel, embeddings.relation(relations[v])));
            keys.push_back(std::move(k));
        }
        for (std::size_t h = 0; h < heads; ++h) {
            auto q_slice = num::slice(queries[v], h * d_k, d_k);
            std::vector<Tensor> scores;
            scores.reserve(length);
            for (std::size_t u = 0; u < length; ++u)
                scores.push_back(num::scale(
                    num::dot(q_slice, num::slice(keys[u], h * d_k, d_k)), inv_sqrt_dk));
            auto row = num::softmax(num::concat(scores));
            result.weights[h].emplace_back(row.values().begin(), row.values().end());
            rows[h].push_back(std::move(row));
        }
    }

    for (std::size_t v = 0; v < length; ++v) {
        std::vector<Tensor> head_outputs;
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor mixed;
            for (std::size_t u = 0; u < length; ++u) {
                auto contribution = num::scalar_mul(num::pick(rows[h][v], u),
                                                    num::slice(values[u], h * d_k, d_k));
                mixed = mixed.defined() ? num::add(mixed, contribution) : contribution;
            }
            head_outputs.push_back(std::move(mixed));
        }
        Tensor attended = heads == 1 ? head_outputs.front() : num::concat(head_outputs);
        result.tokens.push_back(num::layer_norm(num::add(tokens[v], attended)));
    }
    return result;
}

Tensor encode_path(const PathSequence& sequence, const TransformerParams& params,
                   const EmbeddingProvider& embeddings, std::size_t heads) {
    if (sequence.tokens.empty()) throw PredictionError("encode: empty sequence");
    std::vector<Tensor> tokens = sequence.tokens;
    for (const auto& layer : params.layers)
        tokens = relational_attention(tokens, sequence.relations, embeddings, layer, heads).tokens;
    Tensor pooled = tokens.front();
    for (std::size_t i = 1; i < tokens.size(); ++i) pooled = num::add(pooled, tokens[i]);
    return num::scale(pooled, 1.0 / static_cast<double>(tokens.size()));
}

Tensor path_score(const PathSequence& sequence, const TransformerParams& params,
                  const EmbeddingProvider& embeddings, std::size_t heads) {
    auto h = encode_path(sequence, params, embeddings, heads);
    auto projected = num::matmul(params.w_out, embeddings.entity(sequence.candidate));
    return num::dot(h, projected);
}

namespace {

struct ScoredPaths {
    std::vector<int> path_indices;
};

}  // namespace

FinalPrediction predict(const TemporalQuery& query, const std::vector<ReasoningPath>& paths,
                        const CandidateSet& extractor_candidates, const TransformerParams& params,
                        const EmbeddingProvider& embeddings, const TransformerConfig& config) {
    if (extractor_candidates.items.empty() && paths.empty())
        throw PredictionError("predict: no candidates for query");
    (void)query;

    std::map<EntityId, ScoredPaths> by_candidate;
    for (std::size_t i = 0; i < paths.size(); ++i)
        by_candidate[paths[i].candidate].path_indices.push_back(static_cast<int>(i));

    // Transformer tier: max path score per candidate.
    std::map<EntityId, std::pair<double, int>> path_scores;  // entity -> (score, best path)
    for (const auto& [entity, group] : by_candidate) {
        double best = 0.0;
        int best_path = -1;
        for (int idx : group.path_indices) {
            auto seq = build_input_sequence(paths[static_cast<std::size_t>(idx)], embeddings,
                                            params.time_encoder, config.dim);
            double s = path_score(seq, params, embeddings, config.heads).value();
            if (best_path < 0 || s > best) {
                best = s;
                best_path = idx;
            }
        }
        path_scores.emplace(entity, std::make_pair(best, best_path));
    }

    // Fallback tier: normalized extractor scores, strictly below every
    // transformer-scored candidate.
    double gnn_min = 0.0, gnn_max = 0.0;
    if (!extractor_candidates.items.empty()) {
        gnn_min = extractor_candidates.items.back().score;
        gnn_max = extractor_candidates.items.front().score;
        for (const auto& c : extractor_candidates.items) {
            gnn_min = std::min(gnn_min, c.score);
            gnn_max = std::max(gnn_max, c.score);
        }
    }
    double span = gnn_max - gnn_min;
    double tier_floor = 0.0;
    if (!path_scores.empty()) {
        tier_floor = path_scores.begin()->second.first;
        for (const auto& [e, sp] : path_scores) tier_floor = std::min(tier_floor, sp.first);
        tier_floor -= 2.0;
    }

    FinalPrediction out;
    for (const auto& [entity, sp] : path_scores)
        out.ranked.push_back({entity, sp.first, true, sp.second});
    for (const auto& c : extractor_candidates.items) {
        if (path_scores.count(c.entity)) continue;
        double normalized = span > 0.0 ? (c.score - gnn_min) / span : 1.0;
        double weighted = config.fallback_weight * normalized;
        // Clamp keeps the fallback tier strictly below for any weight.
        double composite = path_scores.empty()
                               ? weighted
                               : tier_floor + std::clamp(weighted, 0.0, 1.99);
        out.ranked.push_back({c.entity, composite, false, -1});
    }
    if (out.ranked.empty()) throw PredictionError("predict: no candidates for query");

    std::sort(out.ranked.begin(), out.ranked.end(),
              [](const CandidatePrediction& a, const CandidatePrediction& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.entity < b.entity;
              });
    out.predicted = out.ranked.front().entity;
    out.provenance = out.ranked.front().from_paths
                         ? "path:" + std::to_string(out.ranked.front().best_path)
                         : "gnn-fallback";
    return out;
}

AggregatorStepResult train_aggregator(const std::vector<AggregatorBatchItem>& batch,
                                      const TransformerParams& params,
                                      const SemanticEmbeddings& embeddings,
                                      num::ParamStore& store, num::AdamState& adam,
                                      const TransformerConfig& config) {
    AggregatorStepResult result;
    if (batch.empty()) return result;
    double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (const auto& item : batch) {
        if (!item.query.has_gold())
            throw TrainingError("aggregator: query lacks a gold object");
        EmbeddingProvider provider(embeddings, /*frozen=*/!config.finetune_embeddings);
        std::map<EntityId, std::vector<const ReasoningPath*>> by_candidate;
        for (const auto& p : item.paths) by_candidate[p.candidate].push_back(&p);
        if (!by_candidate.count(item.query.gold_object)) {
            ++result.skipped_gold_missing;
            continue;
        }
        std::vector<Tensor> logits;
        std::size_t gold_index = 0;
        for (const auto& [entity, group] : by_candidate) {
            Tensor best;
            double best_value = 0.0;
            for (const ReasoningPath* p : group) {
                auto seq = build_input_sequence(*p, provider, params.time_encoder, config.dim);
                auto s = path_score(seq, params, provider, config.heads);
                if (!best.defined() || s.value() > best_value) {
                    best_value = s.value();
                    best = s;
                }
            }
            if (entity == item.query.gold_object) gold_index = logits.size();
            logits.push_back(std::move(best));
        }
        auto loss = num::nll_loss(num::concat(logits), gold_index, 0);
        result.loss += loss.value();
        num::backward(num::scale(loss, inv_batch));
        ++result.queries_used;
    }
    adam.step(store);
    adam.zero_grads(store);
    if (result.queries_used > 0)
        result.loss /= static_cast<double>(batch.size());
    return result;
}

}  // namespace tkgr
