#include "tkgr/path_editor.hpp"

#include "tkgr/edit_rules.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>

namespace tkgr {

namespace {

using nlohmann::json;

std::string format_query(const TemporalQuery& query, const TemporalKnowledgeGraph& graph,
                         TimeStyle style) {
    std::string time = style == TimeStyle::DiscreteIndex ? "T" + std::to_string(query.time)
                                                         : graph.time_label(query.time);
    return "(" + graph.entity_label(query.subject) + ", " + graph.relation_label(query.relation) +
           ", ?, " + time + ")";
}

std::optional<EntityId> resolve_entity(const std::string& text,
                                       const TemporalKnowledgeGraph& graph) {
    if (auto id = graph.find_entity(text)) return id;
    EntityId numeric = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), numeric);
    if (res.ec == std::errc{} && res.ptr == text.data() + text.size() && numeric >= 0 &&
        static_cast<std::size_t>(numeric) < graph.entity_count())
        return numeric;
    return std::nullopt;
}

std::optional<RelationId> resolve_relation(const std::string& text,
                                           const TemporalKnowledgeGraph& graph) {
    if (auto id = graph.find_relation(text)) return id;
    RelationId numeric = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), numeric);
    if (res.ec == std::errc{} && res.ptr == text.data() + text.size() && numeric >= 0 &&
        static_cast<std::size_t>(numeric) < graph.relation_count())
        return numeric;
    return std::nullopt;
}

// The step with `op` applied, neighbors untouched. Unresolvable replacement
// labels leave their field unchanged; validation rejects those ops upstream.
PathStep revised_step(const PathStep& original, const EditOperation& op,
                      const TemporalKnowledgeGraph& graph) {
    PathStep step = original;
    if (op.entity) {
        if (auto id = resolve_entity(*op.entity, graph)) step.object = *id;
    }
    if (op.relation) {
        if (auto id = resolve_relation(*op.relation, graph)) step.relation = *id;
    }
    if (op.time) step.time = *op.time;
    return step;
}

std::vector<pathtext::TextStep> id_level_steps(const ReasoningPath& path) {
    std::vector<pathtext::TextStep> steps;
    steps.reserve(path.steps.size());
    for (const auto& s : path.steps)
        steps.push_back({std::to_string(s.subject), std::to_string(s.relation),
                         std::to_string(s.object), "T" + std::to_string(s.time)});
    return steps;
}

// First JSON array in the reply, tolerant of markdown fences and prose.
std::optional<std::string> extract_json_array(const std::string& text) {
    auto start = text.find('[');
    while (start != std::string::npos) {
        int depth = 0;
        bool in_string = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (c == '\\')
                    ++i;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == '[')
                ++depth;
            else if (c == ']') {
                if (--depth == 0) return text.substr(start, i - start + 1);
            }
        }
        start = text.find('[', start + 1);
    }
    return std::nullopt;
}

}  // namespace

std::string to_string(EditorMode mode) {
    switch (mode) {
        case EditorMode::Off: return "off";
        case EditorMode::Rules: return "rules";
        case EditorMode::Llm: return "llm";
    }
    return "off";
}

std::string build_edit_prompt(const TemporalQuery& query, const std::vector<ReasoningPath>& paths,
                              const TemporalKnowledgeGraph& graph, TimeStyle style) {
    std::string prompt;
    prompt += "You review reasoning paths mined from a temporal event graph.";
    if (style == TimeStyle::DiscreteIndex)
        prompt += " Times are discrete indices, not calendar dates.";
    prompt += "\n";
    prompt += "Query: " + format_query(query, graph, style) + "\n";
    prompt += "Paths (confidence = extractor attention, higher means better grounded):\n";
    for (std::size_t i = 0; i < paths.size(); ++i) {
        double confidence = 1.0;
        for (const auto& s : paths[i].steps) confidence = std::min(confidence, s.alpha);
        char conf[16];
        std::snprintf(conf, sizeof(conf), "%.2f", confidence);
        prompt += "Path " + std::to_string(i) + " (confidence " + conf +
                  "): " + serialize_path(paths[i], graph, style) + "\n";
    }
    prompt +=
        "Edit each step with exactly one operation:\n"
        "- keep: the step is logically coherent and relevant to the query.\n"
        "- remove: the step is contradictory, redundant, or irrelevant.\n"
        "- revise: fix an entity-relation mismatch by replacing the step's object entity and/or "
        "relation.\n"
        "Hard constraints on revise: replacements must already exist in the graph vocabulary; "
        "the revised entity must keep the original entity's semantic type; step times must stay "
        "in chain order (previous time <= revised time <= next time) and strictly before the "
        "query time.\n"
        "Respect the confidence scores: do not alter high-confidence steps without a clear "
        "logical fault.\n"
        "Answer with only a JSON array, one object per decided step:\n"
        "[{\"path\": 0, \"step\": 0, \"action\": \"keep|remove|revise\", "
        "\"replacement\": {\"entity\": \"label\", \"relation\": \"label\"}, \"time\": 0, "
        "\"reason\": \"short reason\"}]\n";
    return prompt;
}

ParsedEditScript parse_edit_response(const std::string& text) {
    auto array_text = extract_json_array(text);
    if (!array_text) throw EditParseError("edit reply contains no JSON array", text);
    json array;
    try {
        array = json::parse(*array_text);
    } catch (const json::exception& e) {
        throw EditParseError(std::string("edit reply JSON invalid: ") + e.what(), text);
    }
    if (!array.is_array()) throw EditParseError("edit reply is not a JSON array", text);

    ParsedEditScript script;
    for (const auto& item : array) {
        if (!item.is_object()) {
            script.warnings.push_back("skipped non-object element");
            continue;
        }
        if (!item.contains("action") || !item["action"].is_string()) {
            script.warnings.push_back("skipped element without action");
            continue;
        }
        std::string action = item["action"].get<std::string>();
        std::transform(action.begin(), action.end(), action.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        EditOperation op;
        if (action == "keep")
            op.action = EditAction::Keep;
        else if (action == "remove")
            op.action = EditAction::Remove;
        else if (action == "revise")
            op.action = EditAction::Revise;
        else {
            script.warnings.push_back("skipped unknown action '" + action + "'");
            continue;
        }
        if (!item.contains("step") || !item["step"].is_number_integer()) {
            script.warnings.push_back("skipped element without step index");
            continue;
        }
        auto step = item["step"].get<long long>();
        if (step < 0) {
            script.warnings.push_back("skipped negative step index");
            continue;
        }
        op.step = static_cast<std::size_t>(step);
        int path_index = item.value("path", 0);

        auto read_string = [&](const json& node, const char* key) -> std::optional<std::string> {
            if (!node.contains(key)) return std::nullopt;
            if (node[key].is_string()) return node[key].get<std::string>();
            if (node[key].is_number_integer())
                return std::to_string(node[key].get<long long>());
            return std::nullopt;
        };
        const json& repl = item.contains("replacement") && item["replacement"].is_object()
                               ? item["replacement"]
                               : item;
        op.entity = read_string(repl, "entity");
        op.relation = read_string(repl, "relation");
        if (item.contains("time")) {
            if (item["time"].is_number_integer())
                op.time = item["time"].get<TimeId>();
            else if (item["time"].is_string()) {
                if (auto idx = pathtext::parse_time_index(item["time"].get<std::string>()))
                    op.time = static_cast<TimeId>(*idx);
            }
        }
        op.reason = item.value("reason", std::string{});

        if (op.action == EditAction::Revise && !op.entity && !op.relation && !op.time) {
            script.warnings.push_back("skipped revise without replacement at step " +
                                      std::to_string(op.step));
            continue;
        }
        script.ops.emplace_back(path_index, std::move(op));
    }
    return script;
}

Verdict validate_edit(const EditOperation& op, const ReasoningPath& path,
                      const TemporalKnowledgeGraph& graph, const ConstraintSet& constraints) {
    if (op.step >= path.steps.size()) return {false, "step index out of range"};
    if (op.action != EditAction::Revise) return {};

    const auto& original = path.steps[op.step];

    if (constraints.vocabulary) {
        if (op.entity && !resolve_entity(*op.entity, graph))
            return {false, "vocabulary: unknown entity '" + *op.entity + "'"};
        if (op.relation && !resolve_relation(*op.relation, graph))
            return {false, "vocabulary: unknown relation '" + *op.relation + "'"};
    } else if ((op.entity && !resolve_entity(*op.entity, graph)) ||
               (op.relation && !resolve_relation(*op.relation, graph))) {
        // Without the vocabulary check an unresolvable label still cannot be
        // applied to the id-level path.
        return {false, "vocabulary: replacement does not resolve"};
    }

    if (op.entity && op.step + 1 == path.steps.size())
        return {false, "candidate: the final step's entity anchors the path"};

    PathStep step = revised_step(original, op, graph);

    if (constraints.type_consistency && op.entity) {
        if (!graph.types_match(original.object, step.object))
            return {false, "type: replacement entity type does not match the original"};
    }

    if (constraints.chronology) {
        if (step.time >= path.query.time) return {false, "chronology: step not before the query"};
        if (op.step > 0 && step.time < path.steps[op.step - 1].time)
            return {false, "chronology: earlier than the preceding step"};
        if (op.step + 1 < path.steps.size() && step.time > path.steps[op.step + 1].time)
            return {false, "chronology: later than the following step"};
    }

    // A revised timestamp must point at a time where the revised fact holds.
    if (op.time && !graph.has_fact(step.subject, step.relation, step.object, step.time))
        return {false, "fact: revised fact does not hold at the revised time"};

    return {};
}

std::optional<ReasoningPath> apply_edits(const ReasoningPath& path,
                                         const std::vector<EditOperation>& ops,
                                         const TemporalKnowledgeGraph& graph, PathTag tag) {
    std::vector<PathStep> steps = path.steps;
    std::vector<bool> removed(steps.size(), false);
    for (const auto& op : ops)
        if (op.action == EditAction::Remove && op.step < steps.size()) removed[op.step] = true;

    for (const auto& op : ops) {
        if (op.action != EditAction::Revise || op.step >= steps.size() || removed[op.step])
            continue;
        PathStep revised = revised_step(path.steps[op.step], op, graph);
        // Revising the object renames the chain node, so the successor's
        // subject follows it.
        if (op.entity && op.step + 1 < steps.size()) steps[op.step + 1].subject = revised.object;
        steps[op.step] = revised;
    }

    std::vector<PathStep> surviving;
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (!removed[i]) surviving.push_back(steps[i]);
    if (surviving.empty()) return std::nullopt;
    if (surviving.back().object != path.candidate) return std::nullopt;

    // Longest internally connected suffix that still starts at the query
    // entity; anything less is dropped.
    std::size_t suffix_start = surviving.size() - 1;
    while (suffix_start > 0 &&
           surviving[suffix_start - 1].object == surviving[suffix_start].subject)
        --suffix_start;
    std::optional<std::size_t> anchor;
    for (std::size_t i = suffix_start; i < surviving.size(); ++i) {
        if (surviving[i].subject == path.query.subject) {
            anchor = i;
            break;
        }
    }
    if (!anchor) return std::nullopt;

    ReasoningPath refined;
    refined.query = path.query;
    refined.candidate = path.candidate;
    refined.tag = tag;
    refined.steps.assign(surviving.begin() + static_cast<std::ptrdiff_t>(*anchor),
                         surviving.end());
    return refined;
}

std::vector<EditOperation> deterministic_editor(const ReasoningPath& path) {
    auto decisions = editrules::decide(id_level_steps(path));
    std::vector<EditOperation> ops;
    ops.reserve(decisions.size());
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        EditOperation op;
        op.step = i;
        op.action = decisions[i].action == editrules::Action::Remove ? EditAction::Remove
                                                                     : EditAction::Keep;
        op.reason = decisions[i].reason;
        ops.push_back(std::move(op));
    }
    return ops;
}

namespace {

// Rule-based refinement for one path; shared by Rules mode and the Llm
// fallback route.
EditAudit refine_with_rules(std::size_t index, const ReasoningPath& path,
                            const TemporalKnowledgeGraph& graph, const ConstraintSet& constraints,
                            std::vector<ReasoningPath>& refined_out) {
    EditAudit audit;
    audit.path_index = index;
    audit.original = serialize_path(path, graph);
    auto ops = deterministic_editor(path);
    std::vector<EditOperation> accepted;
    for (auto& op : ops) {
        auto verdict = validate_edit(op, path, graph, constraints);
        if (verdict.accepted) accepted.push_back(op);
        audit.operations.push_back({std::move(op), std::move(verdict)});
    }
    if (auto refined = apply_edits(path, accepted, graph, PathTag::RuleRefined)) {
        audit.refined = serialize_path(*refined, graph);
        refined_out.push_back(std::move(*refined));
    }
    return audit;
}

}  // namespace

EditOutcome edit_paths(const TemporalQuery& query, const std::vector<ReasoningPath>& paths,
                       const TemporalKnowledgeGraph& graph, EditorMode mode,
                       llm::Gateway* gateway, const EditOptions& options) {
    EditOutcome outcome;
    if (paths.empty()) return outcome;

    if (mode == EditorMode::Off) {
        outcome.refined = paths;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            EditAudit audit;
            audit.path_index = i;
            audit.original = serialize_path(paths[i], graph);
            audit.refined = audit.original;
            outcome.audits.push_back(std::move(audit));
        }
        return outcome;
    }

    if (mode == EditorMode::Rules) {
        for (std::size_t i = 0; i < paths.size(); ++i)
            outcome.audits.push_back(
                refine_with_rules(i, paths[i], graph, options.constraints, outcome.refined));
        return outcome;
    }

    // Llm mode.
    if (gateway == nullptr) throw llm::BackendError("editor: llm mode requires a gateway");
    std::string prompt = build_edit_prompt(query, paths, graph, options.time_style);
    outcome.prompt_tokens = llm::estimate_tokens(prompt);

    std::optional<ParsedEditScript> script;
    std::string raw_text;
    std::string parse_failure;
    for (int attempt = 0; attempt <= std::max(0, options.parse_retries); ++attempt) {
        auto response = gateway->chat_edit_response(prompt);
        raw_text = response.text;
        // prefer the provider's accounting when it reports one
        if (response.usage.prompt_tokens > 0) outcome.prompt_tokens = response.usage.prompt_tokens;
        try {
            script = parse_edit_response(raw_text);
            break;
        } catch (const EditParseError& e) {
            parse_failure = e.what();
        }
    }
    if (!script) {
        if (options.strict_parse)
            throw EditParseError("edit reply unparsable after retries: " + parse_failure,
                                 raw_text);
        for (std::size_t i = 0; i < paths.size(); ++i) {
            auto audit = refine_with_rules(i, paths[i], graph, options.constraints,
                                           outcome.refined);
            audit.fallback = true;
            if (i == 0) audit.raw_response = raw_text;
            audit.prompt_tokens = outcome.prompt_tokens;
            outcome.audits.push_back(std::move(audit));
        }
        return outcome;
    }

    for (const auto& warning : script->warnings)
        std::fprintf(stderr, "editor: %s\n", warning.c_str());

    std::vector<std::vector<EditOperation>> per_path(paths.size());
    for (auto& [path_index, op] : script->ops) {
        if (path_index < 0 || static_cast<std::size_t>(path_index) >= paths.size()) continue;
        per_path[static_cast<std::size_t>(path_index)].push_back(std::move(op));
    }
    for (std::size_t i = 0; i < paths.size(); ++i) {
        EditAudit audit;
        audit.path_index = i;
        audit.original = serialize_path(paths[i], graph);
        audit.prompt_tokens = outcome.prompt_tokens;
        if (i == 0) audit.raw_response = raw_text;
        std::vector<EditOperation> accepted;
        for (auto& op : per_path[i]) {
            auto verdict = validate_edit(op, paths[i], graph, options.constraints);
            if (verdict.accepted) accepted.push_back(op);
            audit.operations.push_back({std::move(op), std::move(verdict)});
        }
        if (auto refined = apply_edits(paths[i], accepted, graph, PathTag::LlmRefined)) {
            audit.refined = serialize_path(*refined, graph);
            outcome.refined.push_back(std::move(*refined));
        }
        outcome.audits.push_back(std::move(audit));
    }
    return outcome;
}

}  // namespace tkgr
