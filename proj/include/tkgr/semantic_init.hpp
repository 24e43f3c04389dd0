#pragma once
// Embedding initialization: generate one-sentence descriptions for entities
// and relations (passive form for inverses), encode them, and project through
// two trainable MLPs into the graph model's dimension. The raw encoder output
// stays frozen; only the projections train.

#include "tkgr/gateway.hpp"
#include "tkgr/optim.hpp"
#include "tkgr/tensor.hpp"
#include "tkgr/tkg.hpp"

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace tkgr {

enum class LabelKind { Entity, Relation, InverseRelation };

std::string build_description_prompt(const std::string& label, LabelKind kind);

struct DescriptionTable {
    std::vector<std::string> entity_text;    // indexed by EntityId
    std::vector<std::string> relation_text;  // indexed by RelationId, inverses included

    void write_jsonl(std::ostream& out, const TemporalKnowledgeGraph& graph) const;
};

// One hidden layer of width `out`, relu, linear output.
struct Mlp {
    num::Tensor w1, b1, w2, b2;

    num::Tensor forward(const num::Tensor& x) const;
    static Mlp init(std::size_t in, std::size_t out, std::mt19937_64& rng);
    void register_params(num::ParamStore& store, const std::string& prefix) const;
    static Mlp from_store(const num::ParamStore& store, const std::string& prefix);
};

struct SemanticEmbeddings {
    num::Tensor raw_entities;   // (|E|, d_w), frozen
    num::Tensor raw_relations;  // (|R|, d_w), frozen
    Mlp entity_mlp;             // d_w -> d
    Mlp relation_mlp;
    std::size_t dim = 0;    // d
    std::size_t raw_dim = 0;  // d_w, discovered from the first embedding row

    void register_params(num::ParamStore& store) const;
    static SemanticEmbeddings from_store(const num::ParamStore& store);
};

DescriptionTable generate_descriptions(const TemporalKnowledgeGraph& graph, llm::Gateway& gateway);

SemanticEmbeddings embeddings_from_descriptions(const DescriptionTable& table,
                                                llm::Gateway& gateway, std::size_t dim,
                                                std::uint64_t seed);

SemanticEmbeddings initialize_embeddings(const TemporalKnowledgeGraph& graph,
                                         llm::Gateway& gateway, std::size_t dim,
                                         std::uint64_t seed);

// Projected embedding lookup, memoized per instance. In tape mode the
// returned vectors keep gradients flowing into the MLPs; frozen mode
// evaluates them once under NoGrad.
class EmbeddingProvider {
public:
    EmbeddingProvider(const SemanticEmbeddings& emb, bool frozen);

    const num::Tensor& entity(EntityId e) const;
    const num::Tensor& relation(RelationId r) const;
    std::size_t dim() const { return emb_.dim; }

private:
    const SemanticEmbeddings& emb_;
    bool frozen_;
    mutable std::unordered_map<std::int64_t, num::Tensor> entity_cache_;
    mutable std::unordered_map<std::int64_t, num::Tensor> relation_cache_;
};

}  // namespace tkgr
