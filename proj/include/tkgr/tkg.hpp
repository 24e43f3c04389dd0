#pragma once
// Temporal knowledge graph data model: vocabularies, quadruple ingestion,
// inverse-relation augmentation, chronological splits, and time-sorted
// adjacency indexing. The graph is immutable after load and safe to share
// read-only across workers.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tkgr {

using EntityId = std::int32_t;
using RelationId = std::int32_t;
using TimeId = std::int64_t;

struct ParseError : std::runtime_error {
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_number(line) {}
    std::size_t line_number;
};

struct LoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Quadruple {
    EntityId subject = 0;
    RelationId relation = 0;
    EntityId object = 0;
    TimeId time = 0;

    bool operator==(const Quadruple&) const = default;
};

struct TemporalQuery {
    EntityId subject = 0;
    RelationId relation = 0;  // may be an inverse relation
    TimeId time = 0;
    EntityId gold_object = -1;  // -1 when unknown

    bool has_gold() const { return gold_object >= 0; }
};

enum class TimeFormat { Index, IsoDate };

// Label interning table. Ids are dense from 0, one label per id.
class Vocab {
public:
    std::int32_t intern(const std::string& label);
    std::optional<std::int32_t> find(const std::string& label) const;
    const std::string& label(std::int32_t id) const { return labels_.at(static_cast<std::size_t>(id)); }
    std::size_t size() const { return labels_.size(); }

private:
    std::unordered_map<std::string, std::int32_t> index_;
    std::vector<std::string> labels_;
};

struct Edge {
    RelationId relation;
    EntityId object;
    TimeId time;
    std::uint32_t insertion_index;  // global order, used for deterministic ties
};

struct LoadOptions {
    TimeFormat time_format = TimeFormat::Index;
    bool allow_empty_split = false;
};

struct GraphStats {
    std::size_t entities = 0;
    std::size_t base_relations = 0;
    std::size_t relations = 0;  // with inverses
    std::size_t train = 0, valid = 0, test = 0;
    std::size_t time_points = 0;
};

class TemporalKnowledgeGraph {
public:
    // Vocabularies. Relation ids in [0, base) are file relations; inverse of
    // r is r + base and vice versa.
    const Vocab& entities() const { return entities_; }
    std::size_t entity_count() const { return entities_.size(); }
    std::size_t base_relation_count() const { return base_relations_; }
    std::size_t relation_count() const { return 2 * base_relations_; }
    std::size_t time_count() const { return time_labels_.size(); }

    RelationId inverse(RelationId r) const {
        auto base = static_cast<RelationId>(base_relations_);
        return r < base ? r + base : r - base;
    }
    bool is_inverse(RelationId r) const { return r >= static_cast<RelationId>(base_relations_); }

    const std::string& entity_label(EntityId e) const { return entities_.label(e); }
    std::string relation_label(RelationId r) const;
    const std::string& time_label(TimeId t) const { return time_labels_.at(static_cast<std::size_t>(t)); }

    std::optional<EntityId> find_entity(const std::string& label) const;
    std::optional<RelationId> find_relation(const std::string& label) const;

    const std::vector<Quadruple>& train() const { return train_; }
    const std::vector<Quadruple>& valid() const { return valid_; }
    const std::vector<Quadruple>& test() const { return test_; }

    // Entity type derived from the trailing parenthesized suffix of the
    // label; -1 for untyped entities.
    std::int32_t entity_type(EntityId e) const { return entity_types_.at(static_cast<std::size_t>(e)); }
    bool types_match(EntityId a, EntityId b) const { return entity_type(a) == entity_type(b); }

    // Outgoing edges (inverse-augmented) of `entity` strictly before `t`,
    // newest first. `window`, when set, drops edges older than t - window.
    std::vector<Edge> neighbors_before(EntityId entity, TimeId t,
                                       std::optional<TimeId> window = std::nullopt) const;

    // True when (s, r, o, t) is a stored fact; r may be an inverse relation.
    bool has_fact(EntityId s, RelationId r, EntityId o, TimeId t) const;

    // Entities o with (s, r, o, t) stored, for time-aware filtered ranking.
    std::vector<EntityId> objects_at(EntityId s, RelationId r, TimeId t) const;

    GraphStats stats() const;

    // Serializes a split back to TSV with interned labels (id roundtrip).
    void write_split(std::ostream& out, const std::vector<Quadruple>& split) const;
    void dump_vocab(std::ostream& entities_out, std::ostream& relations_out,
                    std::ostream& times_out) const;

private:
    friend class GraphBuilder;
    Vocab entities_;
    Vocab relations_;  // base labels only
    std::size_t base_relations_ = 0;
    std::vector<Quadruple> train_, valid_, test_;
    std::vector<std::string> time_labels_;        // normalized TimeId -> raw label
    std::vector<std::int32_t> entity_types_;      // per entity, -1 untyped
    std::vector<std::string> type_labels_;
    std::vector<std::vector<Edge>> adjacency_;    // per entity, time-ascending
};

// Streaming ingestion: interns labels as lines arrive, then finalizes into an
// immutable graph. Single-writer.
class GraphBuilder {
public:
    explicit GraphBuilder(LoadOptions options = {}) : options_(options) {}

    // Parses one TSV line (subject, relation, object, timestamp[, extra]) and
    // interns any unseen labels. Raw times are normalized at finalize().
    Quadruple parse_line(const std::string& line, std::size_t line_number);

    void add_split(std::istream& in, const std::string& split_name);
    void finalize();

    TemporalKnowledgeGraph take();

private:
    TimeId parse_time(const std::string& field, std::size_t line_number) const;

    LoadOptions options_;
    bool finalized_ = false;
    TemporalKnowledgeGraph graph_;
    std::vector<Quadruple>* current_split_ = nullptr;
    std::unordered_map<TimeId, std::string> raw_time_labels_;
    std::unordered_map<std::string, std::int32_t> type_index_;
};

TemporalKnowledgeGraph load_graph(const std::string& train_path, const std::string& valid_path,
                                  const std::string& test_path, LoadOptions options = {});
TemporalKnowledgeGraph load_graph_streams(std::istream& train, std::istream& valid,
                                          std::istream& test, LoadOptions options = {});

// "Police (India)" -> "India"; empty when the label carries no suffix.
std::string label_type_suffix(const std::string& label);

}  // namespace tkgr
