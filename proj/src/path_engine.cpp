#include "tkgr/path_engine.hpp"

#include <algorithm>
#include <charconv>

namespace tkgr::pathtext {

std::string format_step(const TextStep& step) {
    return "(" + step.subject + ", " + step.relation + ", " + step.object + ", " + step.time + ")";
}

std::string format_path(const std::vector<TextStep>& steps) {
    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i > 0) out += " -> ";
        out += format_step(steps[i]);
    }
    return out;
}

std::optional<TextStep> parse_step(const std::string& text) {
    if (text.size() < 2 || text.front() != '(' || text.back() != ')') return std::nullopt;
    std::string inner = text.substr(1, text.size() - 2);
    // time is everything after the last ", "
    auto last = inner.rfind(", ");
    if (last == std::string::npos) return std::nullopt;
    TextStep step;
    step.time = inner.substr(last + 2);
    std::string rest = inner.substr(0, last);
    auto first = rest.find(", ");
    if (first == std::string::npos) return std::nullopt;
    step.subject = rest.substr(0, first);
    auto second = rest.find(", ", first + 2);
    if (second == std::string::npos) return std::nullopt;
    step.relation = rest.substr(first + 2, second - first - 2);
    step.object = rest.substr(second + 2);
    if (step.subject.empty() || step.relation.empty() || step.object.empty() || step.time.empty())
        return std::nullopt;
    return step;
}

std::optional<std::vector<TextStep>> parse_path(const std::string& line) {
    std::vector<TextStep> steps;
    std::size_t pos = 0;
    while (pos < line.size()) {
        std::size_t next = line.find(" -> ", pos);
        std::string piece =
            next == std::string::npos ? line.substr(pos) : line.substr(pos, next - pos);
        auto step = parse_step(piece);
        if (!step) return std::nullopt;
        steps.push_back(std::move(*step));
        if (next == std::string::npos) break;
        pos = next + 4;
    }
    if (steps.empty()) return std::nullopt;
    return steps;
}

std::optional<long long> parse_time_index(const std::string& field) {
    std::string_view v = field;
    if (!v.empty() && (v.front() == 'T' || v.front() == 't')) v.remove_prefix(1);
    if (v.empty()) return std::nullopt;
    long long out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) return std::nullopt;
    return out;
}

bool time_less(const std::string& a, const std::string& b) {
    auto ia = parse_time_index(a), ib = parse_time_index(b);
    if (ia && ib) return *ia < *ib;
    return a < b;
}

bool time_equal(const std::string& a, const std::string& b) {
    auto ia = parse_time_index(a), ib = parse_time_index(b);
    if (ia && ib) return *ia == *ib;
    return a == b;
}

}  // namespace tkgr::pathtext

namespace tkgr {

std::string to_string(PathTag tag) {
    switch (tag) {
        case PathTag::GnnExtracted: return "gnn-extracted";
        case PathTag::LlmRefined: return "llm-refined";
        case PathTag::RuleRefined: return "rule-refined";
    }
    return "gnn-extracted";
}

std::optional<PathTag> path_tag_from_string(const std::string& s) {
    if (s == "gnn-extracted") return PathTag::GnnExtracted;
    if (s == "llm-refined") return PathTag::LlmRefined;
    if (s == "rule-refined") return PathTag::RuleRefined;
    return std::nullopt;
}

CandidateSet top_k_candidates(const CandidateScores& scores, std::size_t k) {
    if (k < 1) throw std::invalid_argument("top_k_candidates: k must be >= 1");
    CandidateSet out;
    out.items.reserve(scores.entities.size());
    for (std::size_t i = 0; i < scores.entities.size(); ++i)
        out.items.push_back({scores.entities[i], scores.values[i]});
    std::sort(out.items.begin(), out.items.end(), [](const ScoredCandidate& a,
                                                     const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.entity < b.entity;
    });
    if (out.items.size() > k) out.items.resize(k);
    return out;
}

ReasoningPath backtrack_path(EntityId candidate, const LayeredSubgraph& sg) {
    int final_layer = static_cast<int>(sg.layers.size()) - 1;
    const auto& nodes = sg.layers[static_cast<std::size_t>(final_layer)];
    int node_index = -1;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].entity == candidate) {
            node_index = static_cast<int>(i);
            break;
        }
    if (node_index < 0)
        throw BacktrackError("backtrack: candidate is not a final-layer node");

    ReasoningPath path;
    path.query = sg.query;
    path.candidate = candidate;
    path.tag = PathTag::GnnExtracted;

    std::vector<PathStep> reversed;
    int layer = final_layer;
    int current = node_index;
    while (layer > 0) {
        const auto& layer_edges = sg.edges[static_cast<std::size_t>(layer)];
        const SubgraphEdge* best = nullptr;
        for (const auto& e : layer_edges) {
            if (e.dst != current) continue;
            if (best == nullptr) {
                best = &e;
                continue;
            }
            // max alpha; ties to the smaller time distance, then insertion order
            if (e.alpha_value > best->alpha_value ||
                (e.alpha_value == best->alpha_value &&
                 (e.time > best->time ||
                  (e.time == best->time && e.insertion_index < best->insertion_index))))
                best = &e;
        }
        if (best == nullptr)
            throw BacktrackError("backtrack: no in-edge at layer " + std::to_string(layer));
        const auto& src_node = sg.layers[static_cast<std::size_t>(layer - 1)][static_cast<std::size_t>(best->src)];
        const auto& dst_node = sg.layers[static_cast<std::size_t>(layer)][static_cast<std::size_t>(best->dst)];
        reversed.push_back({src_node.entity, best->relation, dst_node.entity, best->time,
                            best->alpha_value});
        current = best->src;
        --layer;
        if (src_node.entity == sg.query.subject) break;  // reached the query entity early
    }
    path.steps.assign(reversed.rbegin(), reversed.rend());
    return path;
}

std::string serialize_path(const ReasoningPath& path, const TemporalKnowledgeGraph& graph,
                           TimeStyle style) {
    if (path.steps.empty())
        throw std::invalid_argument("serialize_path: empty path");
    std::vector<pathtext::TextStep> steps;
    steps.reserve(path.steps.size());
    for (const auto& s : path.steps) {
        pathtext::TextStep t;
        t.subject = graph.entity_label(s.subject);
        t.relation = graph.relation_label(s.relation);
        t.object = graph.entity_label(s.object);
        t.time = style == TimeStyle::DiscreteIndex ? "T" + std::to_string(s.time)
                                                   : graph.time_label(s.time);
        steps.push_back(std::move(t));
    }
    return pathtext::format_path(steps);
}

std::optional<ReasoningPath> parse_serialized_path(const std::string& line,
                                                   const TemporalKnowledgeGraph& graph) {
    auto text_steps = pathtext::parse_path(line);
    if (!text_steps) return std::nullopt;
    ReasoningPath path;
    for (const auto& t : *text_steps) {
        auto s = graph.find_entity(t.subject);
        auto r = graph.find_relation(t.relation);
        auto o = graph.find_entity(t.object);
        auto idx = pathtext::parse_time_index(t.time);
        if (!s || !r || !o || !idx) return std::nullopt;
        path.steps.push_back({*s, *r, *o, static_cast<TimeId>(*idx), 0.0});
    }
    path.candidate = path.steps.back().object;
    return path;
}

PathCheck check_path(const ReasoningPath& path, std::size_t max_length) {
    auto fail = [](std::string reason) { return PathCheck{false, std::move(reason)}; };
    if (path.steps.empty()) return fail("no steps");
    if (path.steps.size() > max_length) return fail("longer than the layer budget");
    if (path.steps.front().subject != path.query.subject)
        return fail("does not start at the query entity");
    if (path.steps.back().object != path.candidate)
        return fail("does not end at the candidate");
    for (std::size_t i = 0; i + 1 < path.steps.size(); ++i)
        if (path.steps[i].object != path.steps[i + 1].subject)
            return fail("chain broken at step " + std::to_string(i + 1));
    for (const auto& s : path.steps)
        if (s.time >= path.query.time) return fail("step not strictly before the query time");
    return {};
}

bool path_is_chronological(const ReasoningPath& path) {
    for (std::size_t i = 0; i + 1 < path.steps.size(); ++i)
        if (path.steps[i + 1].time < path.steps[i].time) return false;
    return true;
}

}  // namespace tkgr
