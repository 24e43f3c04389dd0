#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tkgr/tkg.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

using namespace tkgr;

namespace {

TemporalKnowledgeGraph toy_graph() {
    std::istringstream train(
        "a\tknows\tb\t0\n"
        "b\tknows\tc\t1\n"
        "a\tvisits\tc\t2\n"
        "c\tknows\ta\t3\n"
        "b\tvisits\ta\t3\n"
        "a\tknows\tc\t5\n"
        "c\tvisits\tb\t5\n"
        "b\tknows\ta\t6\n"
        "a\tvisits\tb\t7\n"
        "c\tknows\tb\t8\n");
    std::istringstream valid("a\tknows\tb\t9\n");
    std::istringstream test("b\tknows\tc\t10\n");
    return load_graph_streams(train, valid, test, {TimeFormat::Index, false});
}

}  // namespace

TEST_CASE("first line interns dense ids") {
    GraphBuilder builder({TimeFormat::IsoDate, false});
    auto q = builder.parse_line("Barack Obama\tMake statement\tRussia\t2014-10-23", 1);
    CHECK(q.subject == 0);
    CHECK(q.relation == 0);
    CHECK(q.object == 1);
    CHECK(q.time == 16366);  // days since 1970-01-01
}

TEST_CASE("short line is a parse error with its line number") {
    GraphBuilder builder;
    CHECK_THROWS_AS(builder.parse_line("A\tB", 7), ParseError);
    try {
        builder.parse_line("A\tB", 7);
    } catch (const ParseError& e) {
        CHECK(e.line_number == 7);
        CHECK(std::string(e.what()).find("field count 2") != std::string::npos);
    }
}

TEST_CASE("unparsable time is a parse error") {
    GraphBuilder builder;
    CHECK_THROWS_AS(builder.parse_line("a\tr\tb\tlater", 3), ParseError);
    GraphBuilder iso({TimeFormat::IsoDate, false});
    CHECK_THROWS_AS(iso.parse_line("a\tr\tb\t2014-13-99", 3), ParseError);
}

TEST_CASE("fifth column is ignored") {
    GraphBuilder builder;
    auto q = builder.parse_line("a\tr\tb\t4\textra", 1);
    CHECK(q.time == 4);
}

TEST_CASE("load builds an inverse-augmented graph") {
    auto g = toy_graph();
    auto stats = g.stats();
    CHECK(stats.entities == 3);
    CHECK(stats.base_relations == 2);
    CHECK(stats.relations == 4);
    CHECK(stats.train == 10);
    CHECK(stats.valid == 1);
    CHECK(stats.test == 1);

    auto knows = *g.find_relation("knows");
    CHECK(g.inverse(g.inverse(knows)) == knows);
    CHECK(g.inverse(knows) == knows + static_cast<RelationId>(stats.base_relations));
    CHECK(g.relation_label(g.inverse(knows)) == "inverse of knows");
    CHECK(*g.find_relation("inverse of knows") == g.inverse(knows));
}

TEST_CASE("hour-granular integer times normalize to day indices") {
    std::istringstream train("a\tr\tb\t0\nb\tr\tc\t24\n");
    std::istringstream valid("a\tr\tc\t48\n");
    std::istringstream test("c\tr\ta\t72\n");
    auto g = load_graph_streams(train, valid, test, {TimeFormat::Index, false});
    CHECK(g.train()[1].time == 1);
    CHECK(g.valid()[0].time == 2);
    CHECK(g.test()[0].time == 3);
    CHECK(g.time_label(1) == "24");
}

TEST_CASE("split order violation is a load error naming times") {
    std::istringstream train("a\tr\tb\t5\n");
    std::istringstream valid("a\tr\tb\t3\n");
    std::istringstream test("a\tr\tb\t9\n");
    CHECK_THROWS_WITH_AS(load_graph_streams(train, valid, test, {TimeFormat::Index, false}),
                         doctest::Contains("split order violated"), LoadError);
}

TEST_CASE("empty split errors unless allowed") {
    {
        std::istringstream train("a\tr\tb\t0\n"), valid(""), test("a\tr\tb\t2\n");
        CHECK_THROWS_AS(load_graph_streams(train, valid, test, {TimeFormat::Index, false}),
                        LoadError);
    }
    {
        std::istringstream train("a\tr\tb\t0\n"), valid(""), test("a\tr\tb\t2\n");
        auto g = load_graph_streams(train, valid, test, {TimeFormat::Index, true});
        CHECK(g.valid().empty());
    }
}

TEST_CASE("neighbors_before respects strict inequality and the window") {
    std::istringstream train(
        "x\tr\ta\t0\n"
        "x\tr\tb\t3\n"
        "x\tr\tc\t5\n"
        "x\tr\tc\t9\n");
    std::istringstream valid("x\tr\ta\t10\n");
    std::istringstream test("x\tr\ta\t11\n");
    auto g = load_graph_streams(train, valid, test, {TimeFormat::Index, false});
    auto x = *g.find_entity("x");

    auto before6 = g.neighbors_before(x, 6);
    REQUIRE(before6.size() == 3);
    CHECK(before6[0].time == 5);  // newest first
    CHECK(before6[1].time == 3);
    CHECK(before6[2].time == 0);

    CHECK(g.neighbors_before(x, 0).empty());

    auto windowed = g.neighbors_before(x, 6, 2);
    REQUIRE(windowed.size() == 1);
    CHECK(windowed[0].time == 5);
}

TEST_CASE("neighbors_before agrees with a brute-force scan") {
    auto g = toy_graph();
    struct Fact {
        EntityId s;
        RelationId r;
        EntityId o;
        TimeId t;
    };
    std::vector<Fact> all;
    for (const auto* split : {&g.train(), &g.valid(), &g.test()}) {
        for (const auto& q : *split) {
            all.push_back({q.subject, q.relation, q.object, q.time});
            all.push_back({q.object, g.inverse(q.relation), q.subject, q.time});
        }
    }
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        EntityId e = static_cast<EntityId>(rng() % g.entity_count());
        TimeId t = static_cast<TimeId>(rng() % 12);
        auto got = g.neighbors_before(e, t);
        std::vector<Fact> expected;
        for (const auto& f : all)
            if (f.s == e && f.t < t) expected.push_back(f);
        REQUIRE(got.size() == expected.size());
        std::multiset<std::tuple<RelationId, EntityId, TimeId>> a, b;
        for (const auto& f : expected) a.emplace(f.r, f.o, f.t);
        for (const auto& f : got) {
            b.emplace(f.relation, f.object, f.time);
            CHECK(f.time < t);
        }
        CHECK(a == b);
        for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].time >= got[i].time);
    }
}

TEST_CASE("every fact is reachable through its inverse edge") {
    auto g = toy_graph();
    for (const auto& q : g.train()) {
        CHECK(g.has_fact(q.subject, q.relation, q.object, q.time));
        CHECK(g.has_fact(q.object, g.inverse(q.relation), q.subject, q.time));
    }
}

TEST_CASE("entity types derive from label suffixes") {
    CHECK(label_type_suffix("Police (India)") == "India");
    CHECK(label_type_suffix("Barack Obama") == "");
    CHECK(label_type_suffix("Governor (Ohio)") == "Ohio");

    std::istringstream train(
        "Police (India)\tr\tCitizen (India)\t0\n"
        "Barack Obama\tr\tGovernor (Ohio)\t1\n");
    std::istringstream valid("Police (India)\tr\tBarack Obama\t2\n");
    std::istringstream test("Police (India)\tr\tBarack Obama\t3\n");
    auto g = load_graph_streams(train, valid, test, {TimeFormat::Index, false});
    auto police = *g.find_entity("Police (India)");
    auto citizen = *g.find_entity("Citizen (India)");
    auto obama = *g.find_entity("Barack Obama");
    auto governor = *g.find_entity("Governor (Ohio)");
    CHECK(g.types_match(police, citizen));
    CHECK_FALSE(g.types_match(police, governor));
    CHECK_FALSE(g.types_match(police, obama));
    CHECK(g.types_match(obama, obama));  // untyped matches untyped
    CHECK(g.entity_type(obama) == -1);
}

TEST_CASE("serialize-reload roundtrip preserves ids and facts") {
    auto g = toy_graph();
    std::ostringstream train, valid, test;
    g.write_split(train, g.train());
    g.write_split(valid, g.valid());
    g.write_split(test, g.test());
    std::istringstream train_in(train.str()), valid_in(valid.str()), test_in(test.str());
    auto g2 = load_graph_streams(train_in, valid_in, test_in, {TimeFormat::Index, false});

    CHECK(g2.stats().entities == g.stats().entities);
    CHECK(g2.stats().base_relations == g.stats().base_relations);
    REQUIRE(g2.train().size() == g.train().size());
    for (std::size_t i = 0; i < g.train().size(); ++i) CHECK(g2.train()[i] == g.train()[i]);
    for (std::size_t e = 0; e < g.entity_count(); ++e)
        CHECK(g2.entity_label(static_cast<EntityId>(e)) ==
              g.entity_label(static_cast<EntityId>(e)));
}

TEST_CASE("objects_at collects the filter set for a query") {
    std::istringstream train(
        "s\tr\ta\t0\n"
        "s\tr\tb\t0\n"
        "s\tr\tc\t1\n");
    std::istringstream valid("s\tr\ta\t2\n");
    std::istringstream test("s\tr\ta\t3\n");
    auto g = load_graph_streams(train, valid, test, {TimeFormat::Index, false});
    auto s = *g.find_entity("s");
    auto r = *g.find_relation("r");
    CHECK(g.objects_at(s, r, 0).size() == 2);
    CHECK(g.objects_at(s, r, 1).size() == 1);
    CHECK(g.objects_at(s, r, 4).empty());
}
