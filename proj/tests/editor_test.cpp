#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tkgr/path_editor.hpp"

#include <algorithm>
#include <random>
#include <regex>
#include <sstream>

using namespace tkgr;

namespace {

// ICEWS-flavoured labels keep prompt-size checks honest.
TemporalKnowledgeGraph event_graph() {
    std::istringstream train(
        "Police (India)\tCriticized or denounced\tCitizen (India)\t0\n"
        "Citizen (India)\tMake an appeal or request\tGovernment (India)\t1\n"
        "Government (India)\tConsult\tMinistry of Foreign Affairs (India)\t2\n"
        "Police (India)\tMake statement\tGovernment (India)\t2\n"
        "Citizen (India)\tCriticized or denounced\tPolice (India)\t3\n"
        "Employee (India)\tMake statement\tCitizen (India)\t3\n"
        "Government (India)\tMake statement\tCitizen (India)\t4\n");
    std::istringstream valid("Police (India)\tConsult\tCitizen (India)\t6\n");
    std::istringstream test("Police (India)\tConsult\tCitizen (India)\t7\n");
    return load_graph_streams(train, valid, test, {TimeFormat::Index, false});
}

ReasoningPath make_path(const TemporalKnowledgeGraph& g,
                        std::initializer_list<const char*> hops,
                        std::initializer_list<const char*> relations,
                        std::initializer_list<TimeId> times, TimeId query_time) {
    ReasoningPath path;
    std::vector<EntityId> entities;
    for (const char* label : hops) entities.push_back(*g.find_entity(label));
    std::vector<RelationId> rels;
    for (const char* label : relations) rels.push_back(*g.find_relation(label));
    std::vector<TimeId> ts(times);
    path.query = {entities.front(), rels.front(), query_time, entities.back()};
    for (std::size_t i = 0; i + 1 < entities.size(); ++i)
        path.steps.push_back({entities[i], rels[i], entities[i + 1], ts[i], 0.8});
    path.candidate = entities.back();
    return path;
}

}  // namespace

TEST_CASE("edit prompt carries query, numbered paths, rules, and schema") {
    auto g = event_graph();
    auto p1 = make_path(g, {"Police (India)", "Citizen (India)", "Government (India)"},
                        {"Criticized or denounced", "Make an appeal or request"}, {0, 1}, 5);
    auto p2 = make_path(g, {"Police (India)", "Government (India)"}, {"Make statement"}, {2}, 5);
    TemporalQuery query{*g.find_entity("Police (India)"), *g.find_relation("Consult"), 5, -1};

    auto prompt = build_edit_prompt(query, {p1, p2}, g);
    CHECK(prompt.find("Query: (Police (India), Consult, ?, T5)") != std::string::npos);
    CHECK(prompt.find(": (Police (India), Criticized or denounced, Citizen (India), T0)") !=
          std::string::npos);
    CHECK(prompt.find("Path 0 (confidence ") != std::string::npos);
    CHECK(prompt.find("Path 1 (confidence ") != std::string::npos);
    CHECK(prompt.find("keep") != std::string::npos);
    CHECK(prompt.find("remove") != std::string::npos);
    CHECK(prompt.find("revise") != std::string::npos);
    CHECK(prompt.find("vocabulary") != std::string::npos);
    CHECK(prompt.find("semantic type") != std::string::npos);
    CHECK(prompt.find("previous time <= revised time <= next time") != std::string::npos);
    CHECK(prompt.find("confidence") != std::string::npos);
    CHECK(prompt.find("JSON array") != std::string::npos);
    // byte-stable across builds
    CHECK(prompt == build_edit_prompt(query, {p1, p2}, g));
    // never a calendar date
    CHECK_FALSE(std::regex_search(prompt, std::regex(R"(\d{4}-\d{2}-\d{2})")));
}

TEST_CASE("a K=30, L=3 prompt lands in the expected token band") {
    auto g = event_graph();
    auto base = make_path(
        g,
        {"Police (India)", "Citizen (India)", "Government (India)",
         "Ministry of Foreign Affairs (India)"},
        {"Criticized or denounced", "Make an appeal or request", "Consult"}, {0, 1, 2}, 5);
    std::vector<ReasoningPath> paths(30, base);
    TemporalQuery query{*g.find_entity("Police (India)"), *g.find_relation("Consult"), 5, -1};
    auto prompt = build_edit_prompt(query, paths, g);
    long tokens = llm::estimate_tokens(prompt);
    CHECK(tokens >= 1300);
    CHECK(tokens <= 2200);
}

TEST_CASE("parse accepts a plain JSON script") {
    auto script = parse_edit_response(
        R"([{"path":0,"step":1,"action":"remove","reason":"self-loop"}])");
    REQUIRE(script.ops.size() == 1);
    CHECK(script.ops[0].first == 0);
    CHECK(script.ops[0].second.action == EditAction::Remove);
    CHECK(script.ops[0].second.step == 1);
    CHECK(script.ops[0].second.reason == "self-loop");
    CHECK(script.warnings.empty());
}

TEST_CASE("parse tolerates markdown fences and prose") {
    auto script = parse_edit_response(
        "Here is my edit plan.\n```json\n"
        R"([{"path":2,"step":0,"action":"KEEP"}])"
        "\n```\nDone.");
    REQUIRE(script.ops.size() == 1);
    CHECK(script.ops[0].first == 2);
    CHECK(script.ops[0].second.action == EditAction::Keep);
}

TEST_CASE("revise without replacement is skipped with a warning") {
    auto script = parse_edit_response(R"([{"path":0,"step":0,"action":"revise"}])");
    CHECK(script.ops.empty());
    REQUIRE(script.warnings.size() == 1);
    CHECK(script.warnings[0].find("revise without replacement") != std::string::npos);
}

TEST_CASE("reply without JSON raises a parse error carrying the raw text") {
    try {
        parse_edit_response("I cannot help with that.");
        FAIL("expected EditParseError");
    } catch (const EditParseError& e) {
        CHECK(e.raw_text == "I cannot help with that.");
    }
}

TEST_CASE("replacement fields accept nested and flat spellings") {
    auto nested = parse_edit_response(
        R"([{"path":0,"step":0,"action":"revise","replacement":{"entity":"X","relation":"r"}}])");
    REQUIRE(nested.ops.size() == 1);
    CHECK(*nested.ops[0].second.entity == "X");
    CHECK(*nested.ops[0].second.relation == "r");

    auto flat = parse_edit_response(
        R"([{"path":0,"step":0,"action":"revise","entity":"Y","time":"T4"}])");
    REQUIRE(flat.ops.size() == 1);
    CHECK(*flat.ops[0].second.entity == "Y");
    CHECK(*flat.ops[0].second.time == 4);
}

TEST_CASE("keep and remove are always accepted; revise obeys the constraints") {
    auto g = event_graph();
    auto path = make_path(g, {"Police (India)", "Citizen (India)", "Government (India)"},
                          {"Criticized or denounced", "Make an appeal or request"}, {0, 1}, 5);
    ConstraintSet constraints;

    EditOperation keep{EditAction::Keep, 0, {}, {}, {}, ""};
    CHECK(validate_edit(keep, path, g, constraints).accepted);
    EditOperation remove{EditAction::Remove, 1, {}, {}, {}, ""};
    CHECK(validate_edit(remove, path, g, constraints).accepted);

    EditOperation unknown{EditAction::Revise, 0, std::string("Martian (Mars)"), {}, {}, ""};
    auto v1 = validate_edit(unknown, path, g, constraints);
    CHECK_FALSE(v1.accepted);
    CHECK(v1.reason.find("vocabulary") != std::string::npos);

    // same type suffix: Citizen (India) -> Employee (India)
    EditOperation same_type{EditAction::Revise, 0, std::string("Employee (India)"), {}, {}, ""};
    CHECK(validate_edit(same_type, path, g, constraints).accepted);

    // typed -> untyped style mismatch via a different suffix
    EditOperation cross_type{EditAction::Revise, 0,
                             std::string("Ministry of Foreign Affairs (India)"), {}, {}, ""};
    CHECK(validate_edit(cross_type, path, g, constraints).accepted);  // same suffix "India"

    EditOperation out_of_range{EditAction::Revise, 7, std::string("Employee (India)"), {}, {}, ""};
    CHECK_FALSE(validate_edit(out_of_range, path, g, constraints).accepted);
}

TEST_CASE("chronology violations are rejected") {
    auto g = event_graph();
    auto path = make_path(g, {"Police (India)", "Citizen (India)", "Government (India)"},
                          {"Criticized or denounced", "Make an appeal or request"}, {0, 1}, 5);
    ConstraintSet constraints;

    // time later than the following step
    EditOperation late{EditAction::Revise, 0, {}, {}, TimeId{3}, ""};
    auto v = validate_edit(late, path, g, constraints);
    CHECK_FALSE(v.accepted);
    CHECK(v.reason.find("chronology") != std::string::npos);

    // time at or past the query
    EditOperation beyond{EditAction::Revise, 1, {}, {}, TimeId{5}, ""};
    CHECK_FALSE(validate_edit(beyond, path, g, constraints).accepted);
}

TEST_CASE("a revised timestamp must point at a real fact") {
    auto g = event_graph();
    // (Citizen, Criticized or denounced, Police) holds at t=3 only
    auto path = make_path(g, {"Citizen (India)", "Police (India)"},
                          {"Criticized or denounced"}, {3}, 6);
    ConstraintSet constraints;
    EditOperation to_valid{EditAction::Revise, 0, {}, {}, TimeId{3}, ""};
    CHECK(validate_edit(to_valid, path, g, constraints).accepted);
    EditOperation to_missing{EditAction::Revise, 0, {}, {}, TimeId{2}, ""};
    auto v = validate_edit(to_missing, path, g, constraints);
    CHECK_FALSE(v.accepted);
    CHECK(v.reason.find("fact") != std::string::npos);
}

TEST_CASE("revising the final step's entity is rejected to keep the candidate") {
    auto g = event_graph();
    auto path = make_path(g, {"Police (India)", "Citizen (India)"},
                          {"Criticized or denounced"}, {0}, 5);
    ConstraintSet constraints;
    EditOperation op{EditAction::Revise, 0, std::string("Employee (India)"), {}, {}, ""};
    auto v = validate_edit(op, path, g, constraints);
    CHECK_FALSE(v.accepted);
    CHECK(v.reason.find("candidate") != std::string::npos);
}

TEST_CASE("all-keep edits leave the path intact and retag it") {
    auto g = event_graph();
    auto path = make_path(g, {"Police (India)", "Citizen (India)", "Government (India)"},
                          {"Criticized or denounced", "Make an appeal or request"}, {0, 1}, 5);
    std::vector<EditOperation> ops{{EditAction::Keep, 0, {}, {}, {}, ""},
                                   {EditAction::Keep, 1, {}, {}, {}, ""}};
    auto refined = apply_edits(path, ops, g, PathTag::LlmRefined);
    REQUIRE(refined.has_value());
    CHECK(refined->steps.size() == 2);
    CHECK(refined->tag == PathTag::LlmRefined);
    for (std::size_t i = 0; i < 2; ++i) CHECK(refined->steps[i] == path.steps[i]);
}

TEST_CASE("removing the middle of a broken 3-chain drops the path") {
    auto g = event_graph();
    auto path = make_path(
        g,
        {"Police (India)", "Citizen (India)", "Government (India)",
         "Ministry of Foreign Affairs (India)"},
        {"Criticized or denounced", "Make an appeal or request", "Consult"}, {0, 1, 2}, 5);
    std::vector<EditOperation> ops{{EditAction::Remove, 1, {}, {}, {}, ""}};
    CHECK_FALSE(apply_edits(path, ops, g, PathTag::LlmRefined).has_value());
}

TEST_CASE("a disconnected prefix is trimmed when the query entity reappears") {
    auto g = event_graph();
    // Police -> Citizen -> Police -> Government; removing the first two steps
    // leaves a suffix that still starts at the query entity.
    auto path = make_path(g,
                          {"Police (India)", "Citizen (India)", "Police (India)",
                           "Government (India)"},
                          {"Criticized or denounced", "Criticized or denounced",
                           "Make statement"},
                          {0, 3, 4}, 6);
    std::vector<EditOperation> ops{{EditAction::Remove, 0, {}, {}, {}, ""},
                                   {EditAction::Remove, 1, {}, {}, {}, ""}};
    auto refined = apply_edits(path, ops, g, PathTag::RuleRefined);
    REQUIRE(refined.has_value());
    REQUIRE(refined->steps.size() == 1);
    CHECK(refined->steps[0].subject == path.query.subject);
    CHECK(refined->steps[0].object == path.candidate);
}

TEST_CASE("entity revision renames the chain node through the next step") {
    auto g = event_graph();
    auto path = make_path(g, {"Police (India)", "Citizen (India)", "Government (India)"},
                          {"Criticized or denounced", "Make an appeal or request"}, {0, 1}, 5);
    EditOperation revise{EditAction::Revise, 0, std::string("Employee (India)"), {}, {}, ""};
    REQUIRE(validate_edit(revise, path, g, {}).accepted);
    auto refined = apply_edits(path, {revise}, g, PathTag::LlmRefined);
    REQUIRE(refined.has_value());
    auto employee = *g.find_entity("Employee (India)");
    CHECK(refined->steps[0].object == employee);
    CHECK(refined->steps[1].subject == employee);
    CHECK(check_path(*refined, 3).ok);
}

TEST_CASE("a mixed script matches the hand-applied result") {
    auto g = event_graph();
    auto path = make_path(g,
                          {"Police (India)", "Citizen (India)", "Citizen (India)",
                           "Government (India)"},
                          {"Criticized or denounced", "Make statement",
                           "Make an appeal or request"},
                          {0, 1, 1}, 5);
    // remove the self-loop step, revise the relation of the final step
    std::vector<EditOperation> ops{
        {EditAction::Remove, 1, {}, {}, {}, "self-loop"},
        {EditAction::Revise, 2, {}, std::string("Make statement"), {}, ""},
    };
    auto refined = apply_edits(path, ops, g, PathTag::LlmRefined);
    REQUIRE(refined.has_value());
    REQUIRE(refined->steps.size() == 2);
    CHECK(refined->steps[0] == path.steps[0]);
    CHECK(refined->steps[1].relation == *g.find_relation("Make statement"));
    CHECK(refined->steps[1].subject == *g.find_entity("Citizen (India)"));
    CHECK(check_path(*refined, 3).ok);
}

TEST_CASE("the deterministic editor removes exactly the planted defects") {
    auto g = event_graph();
    auto clean = make_path(g, {"Police (India)", "Citizen (India)", "Government (India)"},
                           {"Criticized or denounced", "Make an appeal or request"}, {0, 1}, 5);
    auto ops = deterministic_editor(clean);
    REQUIRE(ops.size() == 2);
    for (const auto& op : ops) CHECK(op.action == EditAction::Keep);

    auto looped = make_path(g,
                            {"Police (India)", "Citizen (India)", "Citizen (India)",
                             "Government (India)"},
                            {"Criticized or denounced", "Make statement",
                             "Make an appeal or request"},
                            {0, 1, 1}, 5);
    auto loop_ops = deterministic_editor(looped);
    int removes = 0;
    for (const auto& op : loop_ops)
        if (op.action == EditAction::Remove) {
            ++removes;
            CHECK(op.step == 1);
            CHECK(op.reason == "self-loop");
        }
    CHECK(removes == 1);
}

TEST_CASE("the deterministic editor is idempotent over fuzzed paths") {
    auto g = event_graph();
    std::mt19937_64 rng(7);
    auto entities = static_cast<EntityId>(g.entity_count());
    auto relations = static_cast<RelationId>(g.relation_count());
    for (int trial = 0; trial < 300; ++trial) {
        ReasoningPath path;
        path.query = {static_cast<EntityId>(rng() % entities),
                      static_cast<RelationId>(rng() % relations), 40, -1};
        EntityId subject = path.query.subject;
        std::size_t len = 1 + rng() % 5;
        for (std::size_t i = 0; i < len; ++i) {
            EntityId object = rng() % 4 == 0 ? subject  // inject self-loops
                                             : static_cast<EntityId>(rng() % entities);
            path.steps.push_back({subject, static_cast<RelationId>(rng() % relations), object,
                                  static_cast<TimeId>(rng() % 30), 0.5});
            subject = object;
        }
        path.candidate = path.steps.back().object;

        auto first_ops = deterministic_editor(path);
        auto refined = apply_edits(path, first_ops, g, PathTag::RuleRefined);
        if (!refined) continue;  // the whole path was junk
        auto second_ops = deterministic_editor(*refined);
        for (const auto& op : second_ops) CHECK(op.action == EditAction::Keep);
    }
}

TEST_CASE("rules mode refines a noisy path end to end") {
    auto g = event_graph();
    auto looped = make_path(g,
                            {"Police (India)", "Citizen (India)", "Citizen (India)",
                             "Government (India)"},
                            {"Criticized or denounced", "Make statement",
                             "Make an appeal or request"},
                            {0, 1, 1}, 5);
    TemporalQuery query = looped.query;
    auto outcome = edit_paths(query, {looped}, g, EditorMode::Rules, nullptr);
    REQUIRE(outcome.refined.size() == 1);
    CHECK(outcome.refined[0].steps.size() == 2);
    CHECK(outcome.refined[0].tag == PathTag::RuleRefined);
    REQUIRE(outcome.audits.size() == 1);
    CHECK(outcome.audits[0].refined.has_value());
}

TEST_CASE("llm mode with the offline backend mirrors the rule engine") {
    auto g = event_graph();
    auto looped = make_path(g,
                            {"Police (India)", "Citizen (India)", "Citizen (India)",
                             "Government (India)"},
                            {"Criticized or denounced", "Make statement",
                             "Make an appeal or request"},
                            {0, 1, 1}, 5);
    llm::BackendConfig cfg;
    cfg.backend = "offline";
    llm::Gateway gateway(cfg);
    auto outcome = edit_paths(looped.query, {looped}, g, EditorMode::Llm, &gateway);
    REQUIRE(outcome.refined.size() == 1);
    CHECK(outcome.refined[0].steps.size() == 2);
    CHECK(outcome.refined[0].tag == PathTag::LlmRefined);
    CHECK(outcome.prompt_tokens > 0);
    CHECK(check_path(outcome.refined[0], 3).ok);
}

TEST_CASE("unparsable llm replies fall back to the rule engine") {
    auto g = event_graph();
    auto path = make_path(g, {"Police (India)", "Citizen (India)"},
                          {"Criticized or denounced"}, {0}, 5);
    llm::BackendConfig cfg;
    cfg.backend = "offline";
    llm::Gateway gateway(cfg);
    gateway.set_offline_handler([](const std::string&) { return "no json here"; });

    auto outcome = edit_paths(path.query, {path}, g, EditorMode::Llm, &gateway);
    REQUIRE(outcome.refined.size() == 1);
    CHECK(outcome.refined[0].tag == PathTag::RuleRefined);
    REQUIRE_FALSE(outcome.audits.empty());
    CHECK(outcome.audits[0].fallback);

    EditOptions strict;
    strict.strict_parse = true;
    CHECK_THROWS_AS(edit_paths(path.query, {path}, g, EditorMode::Llm, &gateway, strict),
                    EditParseError);
}

TEST_CASE("fuzzed revise operations agree with an independent constraint oracle") {
    auto g = event_graph();
    std::mt19937_64 rng(13);
    auto entities = static_cast<EntityId>(g.entity_count());
    auto relations = static_cast<RelationId>(g.relation_count());

    std::vector<std::string> alien{"Nobody (Nowhere)", "Unknown Actor", ""};
    ConstraintSet constraints;
    std::size_t rejected = 0, accepted = 0;

    for (int trial = 0; trial < 2000; ++trial) {
        // random connected path over the vocabulary
        ReasoningPath path;
        path.query = {static_cast<EntityId>(rng() % entities),
                      static_cast<RelationId>(rng() % relations),
                      static_cast<TimeId>(5 + rng() % 30), -1};
        EntityId subject = path.query.subject;
        std::size_t len = 1 + rng() % 4;
        for (std::size_t i = 0; i < len; ++i) {
            EntityId object = static_cast<EntityId>(rng() % entities);
            path.steps.push_back({subject, static_cast<RelationId>(rng() % relations), object,
                                  static_cast<TimeId>(rng() % 5), 0.5});
            subject = object;
        }
        path.candidate = path.steps.back().object;

        EditOperation op;
        op.action = EditAction::Revise;
        op.step = rng() % (len + 1);  // sometimes out of range
        if (rng() % 2) {
            op.entity = rng() % 4 == 0 ? alien[rng() % alien.size()]
                                       : g.entity_label(static_cast<EntityId>(rng() % entities));
        }
        if (rng() % 2) {
            op.relation = rng() % 4 == 0
                              ? std::string("no such relation")
                              : g.relation_label(static_cast<RelationId>(rng() % relations));
        }
        if (rng() % 2) op.time = static_cast<TimeId>(rng() % 8);
        if (!op.entity && !op.relation && !op.time) op.time = 1;

        auto verdict = validate_edit(op, path, g, constraints);

        // independent re-implementation of the checks
        bool expect_ok = true;
        if (op.step >= path.steps.size()) {
            expect_ok = false;
        } else {
            const auto& original = path.steps[op.step];
            EntityId new_object = original.object;
            RelationId new_rel = original.relation;
            TimeId new_time = op.time.value_or(original.time);
            if (op.entity) {
                auto found = g.find_entity(*op.entity);
                if (!found)
                    expect_ok = false;
                else
                    new_object = *found;
            }
            if (expect_ok && op.relation) {
                auto found = g.find_relation(*op.relation);
                if (!found)
                    expect_ok = false;
                else
                    new_rel = *found;
            }
            if (expect_ok && op.entity && op.step + 1 == path.steps.size()) expect_ok = false;
            if (expect_ok && op.entity &&
                label_type_suffix(g.entity_label(original.object)) !=
                    label_type_suffix(g.entity_label(new_object)))
                expect_ok = false;
            if (expect_ok) {
                if (new_time >= path.query.time) expect_ok = false;
                if (op.step > 0 && new_time < path.steps[op.step - 1].time) expect_ok = false;
                if (op.step + 1 < path.steps.size() && new_time > path.steps[op.step + 1].time)
                    expect_ok = false;
            }
            if (expect_ok && op.time &&
                !g.has_fact(original.subject, new_rel, new_object, new_time))
                expect_ok = false;
        }
        CHECK_MESSAGE(verdict.accepted == expect_ok, "trial ", trial, " reason ", verdict.reason);
        if (verdict.accepted) {
            ++accepted;
            // accepted edits must yield a valid path
            auto refined = apply_edits(path, {op}, g, PathTag::LlmRefined);
            if (refined) {
                for (std::size_t i = 0; i + 1 < refined->steps.size(); ++i)
                    CHECK(refined->steps[i].object == refined->steps[i + 1].subject);
                CHECK(refined->steps.back().object == path.candidate);
            }
        } else {
            ++rejected;
        }
    }
    CHECK(accepted > 50);   // the fuzz covers both outcomes
    CHECK(rejected > 500);
}
