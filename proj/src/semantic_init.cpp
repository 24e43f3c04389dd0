#include "tkgr/semantic_init.hpp"

#include <json.hpp>

#include <ostream>

namespace tkgr {

using num::Tensor;

std::string build_description_prompt(const std::string& label, LabelKind kind) {
    switch (kind) {
        case LabelKind::Entity:
            return "Describe the entity \"" + label +
                   "\" from a geopolitical event record in one short sentence.";
        case LabelKind::Relation:
            return "Describe the event relation \"" + label +
                   "\" between two actors in one short sentence.";
        case LabelKind::InverseRelation:
            return "Describe the event relation \"" + label +
                   "\" between two actors in one short sentence, phrased in the passive form "
                   "(the second actor receives the action).";
    }
    return {};
}

void DescriptionTable::write_jsonl(std::ostream& out, const TemporalKnowledgeGraph& graph) const {
    using nlohmann::json;
    for (std::size_t e = 0; e < entity_text.size(); ++e) {
        json j{{"id", e},
               {"label", graph.entity_label(static_cast<EntityId>(e))},
               {"kind", "entity"},
               {"text", entity_text[e]}};
        out << j.dump() << '\n';
    }
    for (std::size_t r = 0; r < relation_text.size(); ++r) {
        bool inverse = graph.is_inverse(static_cast<RelationId>(r));
        json j{{"id", r},
               {"label", graph.relation_label(static_cast<RelationId>(r))},
               {"kind", inverse ? "inverse-relation" : "relation"},
               {"text", relation_text[r]}};
        out << j.dump() << '\n';
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    auto hidden = num::relu(num::add(num::matmul(w1, x), b1));
    return num::add(num::matmul(w2, hidden), b2);
}

Mlp Mlp::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    Mlp m;
    m.w1 = num::xavier_init({out, in}, rng);
    m.b1 = Tensor::parameter({out}, std::vector<double>(out, 0.0));
    m.w2 = num::xavier_init({out, out}, rng);
    m.b2 = Tensor::parameter({out}, std::vector<double>(out, 0.0));
    return m;
}

void Mlp::register_params(num::ParamStore& store, const std::string& prefix) const {
    store[prefix + ".w1"] = w1;
    store[prefix + ".b1"] = b1;
    store[prefix + ".w2"] = w2;
    store[prefix + ".b2"] = b2;
}

Mlp Mlp::from_store(const num::ParamStore& store, const std::string& prefix) {
    return {store.at(prefix + ".w1"), store.at(prefix + ".b1"), store.at(prefix + ".w2"),
            store.at(prefix + ".b2")};
}

DescriptionTable generate_descriptions(const TemporalKnowledgeGraph& graph,
                                       llm::Gateway& gateway) {
    DescriptionTable table;
    table.entity_text.reserve(graph.entity_count());
    for (std::size_t e = 0; e < graph.entity_count(); ++e) {
        auto label = graph.entity_label(static_cast<EntityId>(e));
        table.entity_text.push_back(
            gateway.generate(build_description_prompt(label, LabelKind::Entity)));
    }
    auto base = graph.base_relation_count();
    table.relation_text.reserve(graph.relation_count());
    for (std::size_t r = 0; r < graph.relation_count(); ++r) {
        // Inverse relations are described by the passive form of the base label.
        bool inverse = r >= base;
        auto label = inverse ? graph.relation_label(static_cast<RelationId>(r - base))
                             : graph.relation_label(static_cast<RelationId>(r));
        table.relation_text.push_back(gateway.generate(build_description_prompt(
            label, inverse ? LabelKind::InverseRelation : LabelKind::Relation)));
    }
    return table;
}

SemanticEmbeddings embeddings_from_descriptions(const DescriptionTable& table,
                                                llm::Gateway& gateway, std::size_t dim,
                                                std::uint64_t seed) {
    auto entity_rows = gateway.embed(table.entity_text);
    auto relation_rows = gateway.embed(table.relation_text);
    std::size_t d_w = entity_rows.front().size();

    auto flatten = [](const std::vector<std::vector<double>>& rows) {
        std::vector<double> flat;
        flat.reserve(rows.size() * rows.front().size());
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        return flat;
    };

    SemanticEmbeddings emb;
    emb.raw_entities = Tensor::from({entity_rows.size(), d_w}, flatten(entity_rows));
    emb.raw_relations = Tensor::from({relation_rows.size(), d_w}, flatten(relation_rows));
    emb.raw_dim = d_w;
    emb.dim = dim;
    std::mt19937_64 rng(seed);
    emb.entity_mlp = Mlp::init(d_w, dim, rng);
    emb.relation_mlp = Mlp::init(d_w, dim, rng);
    return emb;
}

SemanticEmbeddings initialize_embeddings(const TemporalKnowledgeGraph& graph,
                                         llm::Gateway& gateway, std::size_t dim,
                                         std::uint64_t seed) {
    auto table = generate_descriptions(graph, gateway);
    return embeddings_from_descriptions(table, gateway, dim, seed);
}

void SemanticEmbeddings::register_params(num::ParamStore& store) const {
    store["semantic.raw_entities"] = raw_entities;
    store["semantic.raw_relations"] = raw_relations;
    entity_mlp.register_params(store, "semantic.mlp_e");
    relation_mlp.register_params(store, "semantic.mlp_r");
}

SemanticEmbeddings SemanticEmbeddings::from_store(const num::ParamStore& store) {
    SemanticEmbeddings emb;
    emb.raw_entities = store.at("semantic.raw_entities");
    emb.raw_relations = store.at("semantic.raw_relations");
    emb.entity_mlp = Mlp::from_store(store, "semantic.mlp_e");
    emb.relation_mlp = Mlp::from_store(store, "semantic.mlp_r");
    emb.raw_dim = emb.raw_entities.shape()[1];
    emb.dim = emb.entity_mlp.w2.shape()[0];
    return emb;
}

EmbeddingProvider::EmbeddingProvider(const SemanticEmbeddings& emb, bool frozen)
    : emb_(emb), frozen_(frozen) {}

const Tensor& EmbeddingProvider::entity(EntityId e) const {
    auto it = entity_cache_.find(e);
    if (it != entity_cache_.end()) return it->second;
    Tensor vec;
    if (frozen_) {
        num::NoGrad guard;
        vec = emb_.entity_mlp.forward(num::select_row(emb_.raw_entities, static_cast<std::size_t>(e)));
    } else {
        vec = emb_.entity_mlp.forward(num::select_row(emb_.raw_entities, static_cast<std::size_t>(e)));
    }
    return entity_cache_.emplace(e, std::move(vec)).first->second;
}

const Tensor& EmbeddingProvider::relation(RelationId r) const {
    auto it = relation_cache_.find(r);
    if (it != relation_cache_.end()) return it->second;
    Tensor vec;
    if (frozen_) {
        num::NoGrad guard;
        vec = emb_.relation_mlp.forward(
            num::select_row(emb_.raw_relations, static_cast<std::size_t>(r)));
    } else {
        vec = emb_.relation_mlp.forward(
            num::select_row(emb_.raw_relations, static_cast<std::size_t>(r)));
    }
    return relation_cache_.emplace(r, std::move(vec)).first->second;
}

}  // namespace tkgr
