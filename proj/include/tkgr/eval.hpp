#pragma once
// Ranking metrics (raw and time-aware filtered Hits@k) and report assembly.

#include "tkgr/tkg.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace tkgr {

struct RankedEntity {
    EntityId entity;
    double score;
};

// 1-based rank of `gold` in the scored list: higher scores rank first, tied
// blocks take their mean rank, and entities in `filter_out` (other known true
// answers) are removed first. A gold missing from the list ranks
// pessimistically as `total_entities`.
double rank_of_gold(const std::vector<RankedEntity>& ranking, EntityId gold,
                    const std::vector<EntityId>& filter_out, std::size_t total_entities);

double hits_at_k(const std::vector<double>& ranks, double k);

struct HitsRow {
    double h1 = 0.0, h3 = 0.0, h10 = 0.0;
};

struct QueryOutcome {
    TemporalQuery query;
    double raw_rank = 0.0;
    double filtered_rank = 0.0;
    EntityId predicted = -1;
    std::string provenance;
};

struct EvalReport {
    std::size_t query_count = 0;
    HitsRow raw;
    HitsRow filtered;
    std::vector<QueryOutcome> per_query;
    long edit_prompt_tokens = 0;
    std::string editor_mode = "off";
    std::string time_style = "index";
    std::string metrics = "both";  // which rows the text table shows

    static EvalReport from_outcomes(std::vector<QueryOutcome> outcomes);

    std::string to_json() const;
    void write_text(std::ostream& out) const;
};

}  // namespace tkgr
