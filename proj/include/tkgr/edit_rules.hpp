#pragma once
// Deterministic rule engine behind the offline path editor: removes
// self-loops, consecutive duplicates, and chronology breaks; keeps the rest.
// Idempotent by construction.

#include "tkgr/path_text.hpp"

#include <string>
#include <vector>

namespace tkgr::editrules {

enum class Action { Keep, Remove };

struct Decision {
    Action action = Action::Keep;
    std::string reason;
};

inline std::vector<Decision> decide(const std::vector<pathtext::TextStep>& steps) {
    std::vector<Decision> out(steps.size());

    // Self-loops contribute nothing; duplicates of the previous surviving
    // step are redundant evidence.
    const pathtext::TextStep* prev_survivor = nullptr;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const auto& s = steps[i];
        if (s.subject == s.object) {
            out[i] = {Action::Remove, "self-loop"};
            continue;
        }
        if (prev_survivor != nullptr && s.subject == prev_survivor->subject &&
            s.relation == prev_survivor->relation && s.object == prev_survivor->object) {
            out[i] = {Action::Remove, "duplicate"};
            continue;
        }
        prev_survivor = &s;
    }

    // Chronology: keep a longest nondecreasing-time subsequence of the
    // survivors, removing as few steps as possible.
    std::vector<std::size_t> survivors;
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (out[i].action == Action::Keep) survivors.push_back(i);
    std::size_t n = survivors.size();
    if (n > 1) {
        std::vector<std::size_t> dp(n, 1);
        for (std::size_t i = 1; i < n; ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (!pathtext::time_less(steps[survivors[i]].time, steps[survivors[j]].time))
                    dp[i] = std::max(dp[i], dp[j] + 1);
        std::size_t best = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (dp[i] > dp[best]) best = i;  // earliest maximal end
        std::vector<bool> kept(n, false);
        std::size_t cur = best;
        kept[cur] = true;
        for (std::size_t len = dp[best]; len > 1; --len) {
            for (std::size_t j = 0; j < cur; ++j) {
                if (dp[j] == len - 1 &&
                    !pathtext::time_less(steps[survivors[cur]].time, steps[survivors[j]].time)) {
                    cur = j;
                    kept[cur] = true;
                    break;
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!kept[i]) out[survivors[i]] = {Action::Remove, "chronology"};
    }
    return out;
}

}  // namespace tkgr::editrules
