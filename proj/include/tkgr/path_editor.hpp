#pragma once
// Path refinement: builds the editing prompt, parses the edit script coming
// back from a backend, validates every operation against the hard constraint
// set (vocabulary, type consistency, chronology), and applies what survives.
// A deterministic rule editor covers the offline/fallback route.

#include "tkgr/gateway.hpp"
#include "tkgr/path_engine.hpp"
#include "tkgr/tkg.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tkgr {

enum class EditAction { Keep, Remove, Revise };

struct EditOperation {
    EditAction action = EditAction::Keep;
    std::size_t step = 0;  // index into the original path
    std::optional<std::string> entity;    // replacement label (or numeric id)
    std::optional<std::string> relation;  // replacement label (or numeric id)
    std::optional<TimeId> time;
    std::string reason;  // free-form, kept for the audit trail
};

struct ConstraintSet {
    bool vocabulary = true;
    bool type_consistency = true;
    bool chronology = true;
};

struct Verdict {
    bool accepted = true;
    std::string reason;  // set when rejected
};

struct EditParseError : std::runtime_error {
    EditParseError(const std::string& what, std::string raw)
        : std::runtime_error(what), raw_text(std::move(raw)) {}
    std::string raw_text;
};

struct OpRecord {
    EditOperation op;
    Verdict verdict;
};

struct EditAudit {
    std::size_t path_index = 0;
    std::string original;
    std::optional<std::string> refined;  // absent when the path was dropped
    std::vector<OpRecord> operations;
    std::string raw_response;  // backend text, llm mode only
    long prompt_tokens = 0;
    bool fallback = false;  // rule engine took over after parse failures
};

std::string build_edit_prompt(const TemporalQuery& query,
                              const std::vector<ReasoningPath>& paths,
                              const TemporalKnowledgeGraph& graph,
                              TimeStyle style = TimeStyle::DiscreteIndex);

struct ParsedEditScript {
    std::vector<std::pair<int, EditOperation>> ops;  // (path index, op)
    std::vector<std::string> warnings;               // skipped elements
};

ParsedEditScript parse_edit_response(const std::string& text);

Verdict validate_edit(const EditOperation& op, const ReasoningPath& path,
                      const TemporalKnowledgeGraph& graph, const ConstraintSet& constraints);

// Applies accepted operations; revising a step's entity renames the chain
// node, so the successor's subject follows. Returns nothing when the path is
// dropped entirely (all steps removed or the chain cannot be repaired).
std::optional<ReasoningPath> apply_edits(const ReasoningPath& path,
                                         const std::vector<EditOperation>& ops,
                                         const TemporalKnowledgeGraph& graph, PathTag tag);

// Self-loop, duplicate, and chronology removals. Idempotent.
std::vector<EditOperation> deterministic_editor(const ReasoningPath& path);

enum class EditorMode { Off, Rules, Llm };

std::string to_string(EditorMode mode);

struct EditOptions {
    ConstraintSet constraints;
    TimeStyle time_style = TimeStyle::DiscreteIndex;
    bool strict_parse = false;  // surface parse errors instead of falling back
    int parse_retries = 2;
};

struct EditOutcome {
    std::vector<ReasoningPath> refined;
    std::vector<EditAudit> audits;
    long prompt_tokens = 0;
};

// Runs one query's paths through the configured editor. `gateway` is only
// consulted in Llm mode.
EditOutcome edit_paths(const TemporalQuery& query, const std::vector<ReasoningPath>& paths,
                       const TemporalKnowledgeGraph& graph, EditorMode mode,
                       llm::Gateway* gateway, const EditOptions& options = {});

}  // namespace tkgr
