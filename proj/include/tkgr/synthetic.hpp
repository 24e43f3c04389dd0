#pragma once
// Planted-rule TKG generator for end-to-end verification: every rule instance
// emits its two-step premise chain and the implied conclusion, so held-out
// conclusion queries have a known answer reachable through the graph.

#include "tkgr/tkg.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace tkgr {

struct SyntheticSpecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PlantedRule {
    TimeId delta1 = 1;  // premise1 -> premise2 gap
    TimeId delta2 = 1;  // premise2 -> conclusion gap
};

struct SyntheticSpec {
    int entities = 200;
    std::vector<PlantedRule> rules = {{1, 1}};
    double noise_ratio = 0.05;  // in [0, 1)
    TimeId horizon = 100;
    std::uint64_t seed = 7;
    int noise_relations = 2;
};

struct SyntheticData {
    TemporalKnowledgeGraph graph;
    std::string train_tsv, valid_tsv, test_tsv;
    // Conclusion-fact queries (object direction) per split.
    std::vector<TemporalQuery> train_queries, valid_queries, test_queries;
    std::size_t instances_per_rule = 0;  // horizon - delta1 - delta2, closed form
    std::size_t noise_facts = 0;
};

SyntheticData generate_synthetic_tkg(const SyntheticSpec& spec);

}  // namespace tkgr
