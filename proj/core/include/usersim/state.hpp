#pragma once
// Discrete user mental state and target-list session consistency.
//
// Four axes (trust, emotion, patience, participation), each on a five-level
// scale 0..4 labelled very_low, low, neutral, high, very_high. Sessions start
// at neutral. A single update may move an axis by at most two levels.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usersim/target_list.hpp"
#include "usersim/util.hpp"

namespace usersim {

enum class Level : std::uint8_t { very_low = 0, low = 1, neutral = 2, high = 3, very_high = 4 };

inline constexpr int kMinLevel = 0;
inline constexpr int kMaxLevel = 4;
inline constexpr int kMaxDeltaPerStep = 2;

enum class Axis { trust, emotion, patience, participation };
inline constexpr std::array<Axis, 4> kAxes = {Axis::trust, Axis::emotion, Axis::patience, Axis::participation};

std::string_view axis_name(Axis axis);
std::string_view level_label(Level level);
std::optional<Level> level_from_label(std::string_view label);
inline int level_value(Level level) { return static_cast<int>(level); }

struct StateValues {
    Level trust = Level::neutral;
    Level emotion = Level::neutral;
    Level patience = Level::neutral;
    Level participation = Level::neutral;

    Level& operator[](Axis axis);
    Level operator[](Axis axis) const;
    bool operator==(const StateValues&) const = default;
};

struct StateDelta {
    int trust = 0;
    int emotion = 0;
    int patience = 0;
    int participation = 0;

    int& operator[](Axis axis);
    int operator[](Axis axis) const;
    bool operator==(const StateDelta&) const = default;
};

/// Each axis becomes clamp(state + delta, 0, 4). Throws InvalidDelta if any
/// |delta| exceeds 2.
StateValues apply_state_update(const StateValues& state, const StateDelta& delta);

/// Per-axis difference `to - from` (may exceed the step bound).
StateDelta delta_between(const StateValues& from, const StateValues& to);

/// Clamps every axis of `delta` into [-2, 2].
StateDelta clamp_delta(const StateDelta& delta);

/// Parses the flat four-key state object. Accepts integers 0..4 or labels.
/// Throws ParseError naming the offending axis.
StateValues parse_state_block(std::string_view text);
StateValues parse_state_json(const json& object);

/// Canonical numeric rendering: {"trust":N,"emotion":N,"patience":N,"participation":N}.
std::string render_state_block(const StateValues& state);
ordered_json state_to_json(const StateValues& state);

// ---------------------------------------------------------------------------
// Target-list consistency

struct TargetListObservation {
    int turn_index = 0;
    std::optional<TargetList> target_list;  ///< absent when the turn did not parse
};

struct TargetListDivergence {
    int turn_index = 0;
    std::string divergence;  ///< e.g. "missing primary: X"

    bool operator==(const TargetListDivergence&) const = default;
};

using ConsistencyReport = std::vector<TargetListDivergence>;

/// Compares every observed list to the first one. Primary concerns are
/// compared in order, minor concerns as sets. Throws NoTargetList when no
/// observation carries a list.
ConsistencyReport check_target_list_consistency(std::span<const TargetListObservation> observations);

}  // namespace usersim
