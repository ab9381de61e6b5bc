#include "usersim/state.hpp"

#include <algorithm>
#include <set>

#include "usersim/errors.hpp"

namespace usersim {

namespace {
constexpr std::array<std::string_view, 5> kLabels = {"very_low", "low", "neutral", "high", "very_high"};
}

std::string_view axis_name(Axis axis) {
    switch (axis) {
        case Axis::trust: return "trust";
        case Axis::emotion: return "emotion";
        case Axis::patience: return "patience";
        case Axis::participation: return "participation";
    }
    return "trust";
}

std::string_view level_label(Level level) { return kLabels[static_cast<std::size_t>(level)]; }

std::optional<Level> level_from_label(std::string_view label) {
    const auto lowered = to_lower(label);
    for (std::size_t i = 0; i < kLabels.size(); ++i) {
        if (kLabels[i] == lowered) return static_cast<Level>(i);
    }
    return std::nullopt;
}

Level& StateValues::operator[](Axis axis) {
    switch (axis) {
        case Axis::trust: return trust;
        case Axis::emotion: return emotion;
        case Axis::patience: return patience;
        case Axis::participation: return participation;
    }
    return trust;
}

Level StateValues::operator[](Axis axis) const { return const_cast<StateValues&>(*this)[axis]; }

int& StateDelta::operator[](Axis axis) {
    switch (axis) {
        case Axis::trust: return trust;
        case Axis::emotion: return emotion;
        case Axis::patience: return patience;
        case Axis::participation: return participation;
    }
    return trust;
}

int StateDelta::operator[](Axis axis) const { return const_cast<StateDelta&>(*this)[axis]; }

StateValues apply_state_update(const StateValues& state, const StateDelta& delta) {
    for (auto axis : kAxes) {
        if (std::abs(delta[axis]) > kMaxDeltaPerStep) {
            throw InvalidDelta(std::string(axis_name(axis)) + " delta " + std::to_string(delta[axis]) +
                               " exceeds the per-step bound of " + std::to_string(kMaxDeltaPerStep));
        }
    }
    StateValues next = state;
    for (auto axis : kAxes) {
        const int value = std::clamp(level_value(state[axis]) + delta[axis], kMinLevel, kMaxLevel);
        next[axis] = static_cast<Level>(value);
    }
    return next;
}

StateDelta delta_between(const StateValues& from, const StateValues& to) {
    StateDelta delta;
    for (auto axis : kAxes) delta[axis] = level_value(to[axis]) - level_value(from[axis]);
    return delta;
}

StateDelta clamp_delta(const StateDelta& delta) {
    StateDelta out;
    for (auto axis : kAxes) out[axis] = std::clamp(delta[axis], -kMaxDeltaPerStep, kMaxDeltaPerStep);
    return out;
}

StateValues parse_state_json(const json& object) {
    if (!object.is_object()) throw ParseError("", "state block is not an object");
    for (const auto& [key, _] : object.items()) {
        const bool known = std::any_of(kAxes.begin(), kAxes.end(), [&](Axis a) { return axis_name(a) == key; });
        if (!known) throw ParseError(key, "unknown state axis");
    }
    StateValues state;
    for (auto axis : kAxes) {
        const std::string name(axis_name(axis));
        auto it = object.find(name);
        if (it == object.end()) throw ParseError(name, "missing axis");
        if (it->is_number_integer() || it->is_number_unsigned()) {
            const auto value = it->get<std::int64_t>();
            if (value < kMinLevel || value > kMaxLevel) {
                throw ParseError(name, "value " + std::to_string(value) + " outside 0..4");
            }
            state[axis] = static_cast<Level>(value);
        } else if (it->is_string()) {
            auto level = level_from_label(it->get<std::string>());
            if (!level) throw ParseError(name, "unknown label '" + it->get<std::string>() + "'");
            state[axis] = *level;
        } else {
            throw ParseError(name, "expected an integer level or a label");
        }
    }
    return state;
}

StateValues parse_state_block(std::string_view text) {
    json object;
    try {
        object = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("", std::string("state block is not valid JSON: ") + e.what());
    }
    return parse_state_json(object);
}

ordered_json state_to_json(const StateValues& state) {
    ordered_json out = ordered_json::object();
    for (auto axis : kAxes) out[std::string(axis_name(axis))] = level_value(state[axis]);
    return out;
}

std::string render_state_block(const StateValues& state) { return state_to_json(state).dump(); }

// ---------------------------------------------------------------------------

std::vector<std::string> target_list_violations(const TargetList& list) {
    std::vector<std::string> out;
    if (list.primary_concerns.empty()) out.emplace_back("primary concerns are empty");
    std::set<std::string> seen_primary;
    for (const auto& c : list.primary_concerns) {
        if (trim(c).empty()) out.emplace_back("blank primary concern");
        if (!seen_primary.insert(c).second) out.push_back("duplicate primary concern: " + c);
    }
    std::set<std::string> seen_minor;
    for (const auto& c : list.minor_concerns) {
        if (trim(c).empty()) out.emplace_back("blank minor concern");
        if (!seen_minor.insert(c).second) out.push_back("duplicate minor concern: " + c);
        if (seen_primary.count(c) != 0) out.push_back("concern listed as both primary and minor: " + c);
    }
    return out;
}

void to_json(json& j, const TargetList& list) {
    j = json{{"primary", list.primary_concerns}, {"minor", list.minor_concerns}};
}

void from_json(const json& j, TargetList& list) {
    list.primary_concerns = j.at("primary").get<std::vector<std::string>>();
    list.minor_concerns = j.at("minor").get<std::vector<std::string>>();
}

ConsistencyReport check_target_list_consistency(std::span<const TargetListObservation> observations) {
    auto first = std::find_if(observations.begin(), observations.end(),
                              [](const auto& o) { return o.target_list.has_value(); });
    if (first == observations.end()) throw NoTargetList("no turn in the session carries a target list");

    const TargetList& baseline = *first->target_list;
    const std::set<std::string> base_primary(baseline.primary_concerns.begin(), baseline.primary_concerns.end());
    const std::set<std::string> base_minor(baseline.minor_concerns.begin(), baseline.minor_concerns.end());

    ConsistencyReport report;
    for (auto it = std::next(first); it != observations.end(); ++it) {
        if (!it->target_list) continue;
        const auto& list = *it->target_list;
        const std::set<std::string> primary(list.primary_concerns.begin(), list.primary_concerns.end());
        const std::set<std::string> minor(list.minor_concerns.begin(), list.minor_concerns.end());
        bool membership_changed = false;
        for (const auto& c : baseline.primary_concerns) {
            if (primary.count(c) == 0) {
                report.push_back({it->turn_index, "missing primary: " + c});
                membership_changed = true;
            }
        }
        for (const auto& c : list.primary_concerns) {
            if (base_primary.count(c) == 0) {
                report.push_back({it->turn_index, "unexpected primary: " + c});
                membership_changed = true;
            }
        }
        if (!membership_changed && list.primary_concerns != baseline.primary_concerns) {
            report.push_back({it->turn_index, "primary order changed"});
        }
        for (const auto& c : base_minor) {
            if (minor.count(c) == 0) report.push_back({it->turn_index, "missing minor: " + c});
        }
        for (const auto& c : minor) {
            if (base_minor.count(c) == 0) report.push_back({it->turn_index, "unexpected minor: " + c});
        }
    }
    return report;
}

}  // namespace usersim
