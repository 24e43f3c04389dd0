#include "tkgr/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <ostream>
#include <unordered_set>

namespace tkgr {

double rank_of_gold(const std::vector<RankedEntity>& ranking, EntityId gold,
                    const std::vector<EntityId>& filter_out, std::size_t total_entities) {
    std::unordered_set<EntityId> filtered(filter_out.begin(), filter_out.end());
    filtered.erase(gold);

    bool found = false;
    double gold_score = 0.0;
    for (const auto& r : ranking) {
        if (r.entity == gold) {
            found = true;
            gold_score = r.score;
            break;
        }
    }
    if (!found) return static_cast<double>(total_entities);

    std::size_t higher = 0, tied = 0;
    for (const auto& r : ranking) {
        if (r.entity == gold || filtered.count(r.entity)) continue;
        if (r.score > gold_score)
            ++higher;
        else if (r.score == gold_score)
            ++tied;
    }
    // mean rank over the tied block, gold included
    return static_cast<double>(higher) + (static_cast<double>(tied) + 2.0) / 2.0;
}

double hits_at_k(const std::vector<double>& ranks, double k) {
    if (ranks.empty()) return 0.0;
    std::size_t hits = 0;
    for (double r : ranks)
        if (r <= k) ++hits;
    return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

EvalReport EvalReport::from_outcomes(std::vector<QueryOutcome> outcomes) {
    EvalReport report;
    report.per_query = std::move(outcomes);
    report.query_count = report.per_query.size();
    std::vector<double> raw, filtered;
    raw.reserve(report.query_count);
    filtered.reserve(report.query_count);
    for (const auto& q : report.per_query) {
        raw.push_back(q.raw_rank);
        filtered.push_back(q.filtered_rank);
    }
    report.raw = {hits_at_k(raw, 1), hits_at_k(raw, 3), hits_at_k(raw, 10)};
    report.filtered = {hits_at_k(filtered, 1), hits_at_k(filtered, 3), hits_at_k(filtered, 10)};
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["query_count"] = query_count;
    j["editor_mode"] = editor_mode;
    j["time_style"] = time_style;
    j["edit_prompt_tokens"] = edit_prompt_tokens;
    j["hits"]["raw"] = {{"h1", raw.h1}, {"h3", raw.h3}, {"h10", raw.h10}};
    j["hits"]["filtered"] = {{"h1", filtered.h1}, {"h3", filtered.h3}, {"h10", filtered.h10}};
    auto queries = nlohmann::ordered_json::array();
    for (const auto& q : per_query) {
        queries.push_back({{"subject", q.query.subject},
                           {"relation", q.query.relation},
                           {"time", q.query.time},
                           {"gold", q.query.gold_object},
                           {"raw_rank", q.raw_rank},
                           {"filtered_rank", q.filtered_rank},
                           {"predicted", q.predicted},
                           {"provenance", q.provenance}});
    }
    j["per_query"] = std::move(queries);
    return j.dump(2);
}

void EvalReport::write_text(std::ostream& out) const {
    out << "queries: " << query_count << "  editor: " << editor_mode
        << "  times: " << time_style << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %8s %8s %8s\n", "metric", "Hits@1", "Hits@3",
                  "Hits@10");
    out << line;
    if (metrics != "filtered") {
        std::snprintf(line, sizeof(line), "%-10s %8.4f %8.4f %8.4f\n", "raw", raw.h1, raw.h3,
                      raw.h10);
        out << line;
    }
    if (metrics != "raw") {
        std::snprintf(line, sizeof(line), "%-10s %8.4f %8.4f %8.4f\n", "filtered", filtered.h1,
                      filtered.h3, filtered.h10);
        out << line;
    }
    if (edit_prompt_tokens > 0)
        out << "edit prompt tokens: " << edit_prompt_tokens << " ("
            << (query_count > 0 ? edit_prompt_tokens / static_cast<long>(query_count) : 0)
            << " per query)\n";
}

}  // namespace tkgr
