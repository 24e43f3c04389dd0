#pragma once
// Candidate selection and path extraction: top-K scored candidates, greedy
// max-attention backtracking through the layered subgraph, and the textual
// serialization consumed by editing prompts.

#include "tkgr/gnn.hpp"
#include "tkgr/path_text.hpp"
#include "tkgr/tkg.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tkgr {

enum class PathTag { GnnExtracted, LlmRefined, RuleRefined };

std::string to_string(PathTag tag);
std::optional<PathTag> path_tag_from_string(const std::string& s);

struct PathStep {
    EntityId subject = 0;
    RelationId relation = 0;
    EntityId object = 0;
    TimeId time = 0;
    double alpha = 0.0;

    bool operator==(const PathStep& o) const {
        return subject == o.subject && relation == o.relation && object == o.object &&
               time == o.time;
    }
};

struct ReasoningPath {
    TemporalQuery query;
    EntityId candidate = 0;
    std::vector<PathStep> steps;  // forward order, from the query entity
    PathTag tag = PathTag::GnnExtracted;
};

struct ScoredCandidate {
    EntityId entity;
    double score;
};

struct CandidateSet {
    std::vector<ScoredCandidate> items;  // nonincreasing score, ties by lower id
};

struct BacktrackError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

CandidateSet top_k_candidates(const CandidateScores& scores, std::size_t k);

ReasoningPath backtrack_path(EntityId candidate, const LayeredSubgraph& subgraph);

enum class TimeStyle { DiscreteIndex, RawLabel };

// One line: "(s, r, o, T<idx>) -> (s, r, o, T<idx>)". RawLabel substitutes
// the original timestamp label and exists only for the anonymization
// ablation.
std::string serialize_path(const ReasoningPath& path, const TemporalKnowledgeGraph& graph,
                           TimeStyle style = TimeStyle::DiscreteIndex);

// Inverse of serialize_path over the discrete-index style; labels are
// resolved against the graph vocabulary.
std::optional<ReasoningPath> parse_serialized_path(const std::string& line,
                                                   const TemporalKnowledgeGraph& graph);

// Structural validity: endpoints, connectivity, historical times, length.
struct PathCheck {
    bool ok = true;
    std::string reason;
};

PathCheck check_path(const ReasoningPath& path, std::size_t max_length);

// Chronological order within the chain (nondecreasing step times).
bool path_is_chronological(const ReasoningPath& path);

}  // namespace tkgr
