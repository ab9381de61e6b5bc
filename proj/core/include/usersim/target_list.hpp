#pragma once

#include <string>
#include <vector>

#include "usersim/util.hpp"

namespace usersim {

/// Ranked user concerns fixed at the first turn of a session.
/// Primary concerns are ordered by priority; minor concerns are a set.
struct TargetList {
    std::vector<std::string> primary_concerns;
    std::vector<std::string> minor_concerns;

    bool empty() const { return primary_concerns.empty() && minor_concerns.empty(); }
    bool operator==(const TargetList&) const = default;
};

/// Non-empty primary list, no duplicate or blank entries, and the two lists disjoint.
std::vector<std::string> target_list_violations(const TargetList& list);

/// Envelope form: {"primary":[...], "minor":[...]}.
void to_json(json& j, const TargetList& list);
void from_json(const json& j, TargetList& list);

}  // namespace usersim
