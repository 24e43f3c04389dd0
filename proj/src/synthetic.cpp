#include "tkgr/synthetic.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace tkgr {

namespace {

struct RawFact {
    std::string subject, relation, object;
    TimeId time;
    bool conclusion;  // query-eligible
};

}  // namespace

SyntheticData generate_synthetic_tkg(const SyntheticSpec& spec) {
    if (spec.entities < 3) throw SyntheticSpecError("synthetic: need at least 3 entities");
    if (spec.noise_ratio < 0.0 || spec.noise_ratio >= 1.0)
        throw SyntheticSpecError("synthetic: noise ratio must be in [0, 1)");
    if (spec.rules.empty()) throw SyntheticSpecError("synthetic: no rules");

    std::mt19937_64 rng(spec.seed);
    auto entity_name = [](int i) { return "e" + std::to_string(i); };

    std::vector<int> perm(static_cast<std::size_t>(spec.entities));
    for (int i = 0; i < spec.entities; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<RawFact> facts;
    std::size_t instances = 0;
    for (std::size_t rule_idx = 0; rule_idx < spec.rules.size(); ++rule_idx) {
        const auto& rule = spec.rules[rule_idx];
        if (rule.delta1 < 0 || rule.delta2 < 0)
            throw SyntheticSpecError("synthetic: rule deltas must be nonnegative");
        TimeId span = rule.delta1 + rule.delta2;
        TimeId n_inst = spec.horizon - span;
        if (n_inst < 1)
            throw SyntheticSpecError("synthetic: horizon " + std::to_string(spec.horizon) +
                                     " too short for rule deltas " + std::to_string(span));
        instances = static_cast<std::size_t>(n_inst);
        std::string tag = std::to_string(rule_idx);
        std::string r1 = "r" + tag + "_premise1";
        std::string r2 = "r" + tag + "_premise2";
        std::string r3 = "r" + tag + "_concludes";
        std::uniform_int_distribution<int> any_entity(0, spec.entities - 1);
        for (TimeId t0 = 0; t0 < n_inst; ++t0) {
            // Heads and middles come from disjoint permutation slices while
            // they last, so chains rarely share prefixes.
            auto pick = [&](std::size_t offset) {
                return perm[(offset + static_cast<std::size_t>(t0) +
                             2 * static_cast<std::size_t>(n_inst) * rule_idx) %
                            perm.size()];
            };
            int a = pick(0);
            int b = pick(static_cast<std::size_t>(n_inst));
            if (b == a) b = (b + 1) % spec.entities;
            int c = any_entity(rng);
            while (c == a || c == b) c = any_entity(rng);
            facts.push_back({entity_name(a), r1, entity_name(b), t0, false});
            facts.push_back({entity_name(b), r2, entity_name(c), t0 + rule.delta1, false});
            facts.push_back({entity_name(a), r3, entity_name(c), t0 + span, true});
        }
    }

    std::size_t noise_count =
        static_cast<std::size_t>(spec.noise_ratio * static_cast<double>(facts.size()) + 0.5);
    std::uniform_int_distribution<int> any_entity(0, spec.entities - 1);
    std::uniform_int_distribution<int> any_noise_rel(0, std::max(1, spec.noise_relations) - 1);
    std::uniform_int_distribution<TimeId> any_time(0, spec.horizon - 1);
    for (std::size_t i = 0; i < noise_count; ++i) {
        int s = any_entity(rng);
        int o = any_entity(rng);
        if (o == s) o = (o + 1) % spec.entities;
        facts.push_back({entity_name(s), "noise" + std::to_string(any_noise_rel(rng)),
                         entity_name(o), any_time(rng), false});
    }

    // Chronological 80/10/10 split at time boundaries.
    std::sort(facts.begin(), facts.end(), [](const RawFact& a, const RawFact& b) {
        return a.time < b.time;
    });
    std::size_t total = facts.size();
    auto cut_time = [&](double quantile) {
        std::size_t idx = static_cast<std::size_t>(quantile * static_cast<double>(total));
        idx = std::min(idx, total - 1);
        TimeId t = facts[idx].time;
        // extend to the end of this time point so splits stay disjoint in time
        return t;
    };
    TimeId t1 = cut_time(0.8);
    TimeId t2 = std::max<TimeId>(cut_time(0.9), t1 + 1);

    std::ostringstream train, valid, test;
    SyntheticData data;
    auto emit = [](std::ostringstream& out, const RawFact& f) {
        out << f.subject << '\t' << f.relation << '\t' << f.object << '\t' << f.time << '\n';
    };
    std::vector<const RawFact*> train_concl, valid_concl, test_concl;
    for (const auto& f : facts) {
        if (f.time <= t1) {
            emit(train, f);
            if (f.conclusion) train_concl.push_back(&f);
        } else if (f.time <= t2) {
            emit(valid, f);
            if (f.conclusion) valid_concl.push_back(&f);
        } else {
            emit(test, f);
            if (f.conclusion) test_concl.push_back(&f);
        }
    }
    data.train_tsv = train.str();
    data.valid_tsv = valid.str();
    data.test_tsv = test.str();
    if (data.valid_tsv.empty() || data.test_tsv.empty())
        throw SyntheticSpecError("synthetic: horizon too short for a chronological split");

    std::istringstream train_in(data.train_tsv), valid_in(data.valid_tsv),
        test_in(data.test_tsv);
    data.graph = load_graph_streams(train_in, valid_in, test_in, {TimeFormat::Index, false});
    data.instances_per_rule = instances;
    data.noise_facts = noise_count;

    auto to_query = [&](const RawFact& f) {
        TemporalQuery q;
        q.subject = *data.graph.find_entity(f.subject);
        q.relation = *data.graph.find_relation(f.relation);
        q.time = f.time;  // index format: normalized ids equal raw times here
        q.gold_object = *data.graph.find_entity(f.object);
        return q;
    };
    for (auto* f : train_concl) data.train_queries.push_back(to_query(*f));
    for (auto* f : valid_concl) data.valid_queries.push_back(to_query(*f));
    for (auto* f : test_concl) data.test_queries.push_back(to_query(*f));
    return data;
}

}  // namespace tkgr
