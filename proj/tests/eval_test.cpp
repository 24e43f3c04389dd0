#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tkgr/eval.hpp"
#include "tkgr/synthetic.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>

using namespace tkgr;

TEST_CASE("raw rank counts strictly higher scores") {
    std::vector<RankedEntity> ranking{{0, 5.0}, {1, 7.0}, {2, 3.0}};  // gold = 0
    CHECK(rank_of_gold(ranking, 0, {}, 100) == doctest::Approx(2.0));
}

TEST_CASE("filtering removes other known answers before ranking") {
    std::vector<RankedEntity> ranking{{0, 5.0}, {1, 7.0}, {2, 3.0}};
    CHECK(rank_of_gold(ranking, 0, {1}, 100) == doctest::Approx(1.0));
    // the gold itself is never filtered
    CHECK(rank_of_gold(ranking, 0, {0, 1}, 100) == doctest::Approx(1.0));
}

TEST_CASE("ties take the mean rank of the tied block") {
    std::vector<RankedEntity> ranking{{0, 5.0}, {1, 5.0}, {2, 5.0}, {3, 9.0}};
    // one higher, tied block of three -> 1 + (1+2+3)/3 = 3
    CHECK(rank_of_gold(ranking, 1, {}, 100) == doctest::Approx(3.0));
}

TEST_CASE("missing gold ranks pessimistically as the entity count") {
    std::vector<RankedEntity> ranking{{1, 7.0}};
    CHECK(rank_of_gold(ranking, 0, {}, 41) == doctest::Approx(41.0));
}

TEST_CASE("rank agrees with a brute-force oracle under ties and filtering") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 2 + rng() % 30;
        std::vector<RankedEntity> ranking;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse scores force frequent ties
            ranking.push_back({static_cast<EntityId>(i),
                               static_cast<double>(rng() % 6)});
        }
        EntityId gold = static_cast<EntityId>(rng() % n);
        std::vector<EntityId> filter;
        for (std::size_t i = 0; i < n / 4; ++i)
            filter.push_back(static_cast<EntityId>(rng() % n));

        double got = rank_of_gold(ranking, gold, filter, 1000);

        // oracle: O(n^2) comparison count
        std::set<EntityId> filtered(filter.begin(), filter.end());
        filtered.erase(gold);
        double gold_score = 0.0;
        for (const auto& r : ranking)
            if (r.entity == gold) gold_score = r.score;
        double higher = 0.0, tied = 0.0;
        for (const auto& r : ranking) {
            if (r.entity == gold || filtered.count(r.entity)) continue;
            if (r.score > gold_score) higher += 1.0;
            if (r.score == gold_score) tied += 1.0;
        }
        double expected = higher + (tied + 2.0) / 2.0;
        CHECK(got == doctest::Approx(expected));
        // filtered rank never exceeds the raw rank
        CHECK(rank_of_gold(ranking, gold, filter, 1000) <=
              rank_of_gold(ranking, gold, {}, 1000));
    }
}

TEST_CASE("hits@k is the fraction of ranks within k") {
    CHECK(hits_at_k({1, 2, 11}, 10) == doctest::Approx(2.0 / 3.0));
    CHECK(hits_at_k({1, 1, 1}, 1) == doctest::Approx(1.0));
    CHECK(hits_at_k({1, 1, 1}, 10) == doctest::Approx(1.0));
    CHECK(hits_at_k({}, 3) == 0.0);
}

TEST_CASE("reports aggregate outcomes with monotone hits") {
    std::mt19937_64 rng(5);
    std::vector<QueryOutcome> outcomes;
    for (int i = 0; i < 60; ++i) {
        QueryOutcome o;
        o.query = {0, 0, 10, 1};
        o.raw_rank = static_cast<double>(1 + rng() % 15);
        o.filtered_rank = std::max(1.0, o.raw_rank - static_cast<double>(rng() % 3));
        outcomes.push_back(o);
    }
    auto report = EvalReport::from_outcomes(outcomes);
    CHECK(report.query_count == 60);
    CHECK(report.raw.h1 <= report.raw.h3);
    CHECK(report.raw.h3 <= report.raw.h10);
    CHECK(report.raw.h10 <= 1.0);
    CHECK(report.filtered.h1 >= report.raw.h1);  // filtered ranks are never worse
    CHECK(report.filtered.h1 <= report.filtered.h3);
    CHECK(report.filtered.h3 <= report.filtered.h10);

    auto json_text = report.to_json();
    CHECK(json_text.find("\"hits\"") != std::string::npos);
    std::ostringstream text;
    report.write_text(text);
    CHECK(text.str().find("Hits@10") != std::string::npos);
}

TEST_CASE("the generator plants answerable rules without noise") {
    SyntheticSpec spec;
    spec.entities = 50;
    spec.rules = {{1, 1}};
    spec.noise_ratio = 0.0;
    spec.horizon = 60;
    spec.seed = 9;
    auto data = generate_synthetic_tkg(spec);
    CHECK(data.instances_per_rule == 58);
    CHECK(data.noise_facts == 0);
    CHECK_FALSE(data.test_queries.empty());

    // every test query is answerable through its premise chain
    for (const auto& q : data.test_queries) {
        bool found = false;
        for (const auto& first : data.graph.neighbors_before(q.subject, q.time)) {
            if (data.graph.is_inverse(first.relation)) continue;
            for (const auto& second : data.graph.neighbors_before(first.object, q.time)) {
                if (second.time < first.time) continue;
                if (second.object == q.gold_object) found = true;
            }
        }
        CHECK_MESSAGE(found, "query lacks a premise chain");
    }
}

TEST_CASE("generation is deterministic for a fixed seed") {
    SyntheticSpec spec;
    spec.entities = 40;
    spec.horizon = 30;
    spec.noise_ratio = 0.2;
    spec.seed = 77;
    auto a = generate_synthetic_tkg(spec);
    auto b = generate_synthetic_tkg(spec);
    CHECK(a.train_tsv == b.train_tsv);
    CHECK(a.valid_tsv == b.valid_tsv);
    CHECK(a.test_tsv == b.test_tsv);
}

TEST_CASE("rule-chain count matches the closed form by enumeration") {
    SyntheticSpec spec;
    spec.entities = 60;
    spec.rules = {{2, 3}};
    spec.noise_ratio = 0.0;
    spec.horizon = 40;
    spec.seed = 21;
    auto data = generate_synthetic_tkg(spec);
    CHECK(data.instances_per_rule == static_cast<std::size_t>(40 - 5));

    // enumerate premise chains that land on a stored conclusion
    const auto& g = data.graph;
    auto r1 = *g.find_relation("r0_premise1");
    auto r2 = *g.find_relation("r0_premise2");
    auto r3 = *g.find_relation("r0_concludes");
    std::size_t found = 0;
    std::vector<Quadruple> all;
    for (const auto* split : {&g.train(), &g.valid(), &g.test()})
        for (const auto& q : *split) all.push_back(q);
    for (const auto& first : all) {
        if (first.relation != r1) continue;
        for (const auto& second : all) {
            if (second.relation != r2 || second.subject != first.object) continue;
            if (second.time != first.time + 2) continue;
            if (g.has_fact(first.subject, r3, second.object, second.time + 3)) ++found;
        }
    }
    CHECK(found >= data.instances_per_rule);  // collisions can only add chains
    CHECK(found <= data.instances_per_rule + 5);
}

TEST_CASE("an infeasible horizon is a spec error") {
    SyntheticSpec spec;
    spec.horizon = 3;
    spec.rules = {{5, 5}};
    CHECK_THROWS_AS(generate_synthetic_tkg(spec), SyntheticSpecError);
    SyntheticSpec bad_noise;
    bad_noise.noise_ratio = 1.5;
    CHECK_THROWS_AS(generate_synthetic_tkg(bad_noise), SyntheticSpecError);
}

TEST_CASE("splits stay chronologically ordered with roughly 80/10/10 mass") {
    SyntheticSpec spec;
    spec.entities = 80;
    spec.horizon = 100;
    spec.noise_ratio = 0.1;
    spec.seed = 31;
    auto data = generate_synthetic_tkg(spec);
    auto stats = data.graph.stats();
    double total = static_cast<double>(stats.train + stats.valid + stats.test);
    CHECK(static_cast<double>(stats.train) / total > 0.7);
    CHECK(static_cast<double>(stats.train) / total < 0.9);
    CHECK(stats.valid > 0);
    CHECK(stats.test > 0);
}
