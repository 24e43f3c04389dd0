#pragma once
// Textual form of reasoning-path steps as they appear in prompts:
//
//   (<subject>, <relation>, <object>, T<index>) -> (<subject>, ...)
//
// Discrete T-prefixed indices are the default; raw time labels are only
// emitted by the anonymization ablation.

#include <optional>
#include <string>
#include <vector>

namespace tkgr::pathtext {

struct TextStep {
    std::string subject;
    std::string relation;
    std::string object;
    std::string time;
};

std::string format_step(const TextStep& step);
std::string format_path(const std::vector<TextStep>& steps);

// Right-anchored field split; an object label containing ", " is absorbed
// into the object field, subject and relation labels must not contain it.
std::optional<TextStep> parse_step(const std::string& text);
std::optional<std::vector<TextStep>> parse_path(const std::string& line);

// "T12" or "12" -> 12.
std::optional<long long> parse_time_index(const std::string& field);

// Total order over time fields: numeric when both parse as indices,
// lexicographic otherwise (ISO dates order correctly this way).
bool time_less(const std::string& a, const std::string& b);
bool time_equal(const std::string& a, const std::string& b);

}  // namespace tkgr::pathtext
