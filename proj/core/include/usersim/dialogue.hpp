#pragma once
// Agent <-> user-simulator sessions.
//
// The agent opens every session. Each turn the agent speaks, the simulator
// is prompted with (instruction, static profile, current dynamic snapshot,
// context) and must answer in the think/answer envelope. A parsed envelope
// becomes the next dynamic snapshot; a failed parse is retried, then recorded
// with diagnostics and the previous snapshot carried forward.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usersim/backend.hpp"
#include "usersim/envelope.hpp"
#include "usersim/profile.hpp"

namespace usersim {

enum class Speaker { agent, user };

std::string_view to_string(Speaker s);
Speaker speaker_from_string(std::string_view text);

struct Utterance {
    Speaker speaker = Speaker::agent;
    std::string text;

    bool operator==(const Utterance&) const = default;
};

/// Everything the simulator is conditioned on for one turn.
struct PromptPayload {
    std::string instruction;
    std::string static_profile;   ///< rendered static profile
    std::string dynamic_profile;  ///< rendered dynamic snapshot for this turn
    std::vector<Utterance> context;

    bool operator==(const PromptPayload&) const = default;

    ordered_json to_json() const;
    static PromptPayload from_json(const json& j);
    /// Canonical bytes the prompt hash is computed over.
    std::string canonical_bytes() const;
    std::string hash() const;

    /// Chat messages for the simulator: one system message holding the
    /// instruction and both profiles, then the context with agent lines as
    /// `user` and simulator lines as `assistant`.
    std::vector<Message> to_messages() const;
};

/// Throws ContextOrderError unless the context is non-empty, starts with the
/// agent, alternates speakers, and ends with the agent line being answered.
void validate_context(std::span<const Utterance> context);

PromptPayload build_user_prompt(std::string_view instruction, const StaticProfile& sp, const DynamicProfile& dp,
                                std::span<const Utterance> context);

/// Dynamic snapshot after a parsed turn: state moves by the envelope's delta
/// (clamped to the per-step bound), the target list is fixed by the first
/// envelope, and the decision policy is replaced. Clamps are reported in `notes`.
DynamicProfile next_snapshot(const DynamicProfile& previous, const AnswerEnvelope& envelope,
                             std::vector<std::string>* notes = nullptr);

/// Alternative simulator output for the same prompt (RL rollouts).
struct Rollout {
    int index = 0;
    std::uint64_t seed = 0;
    std::string raw_output;

    bool operator==(const Rollout&) const = default;
};

struct Turn {
    int index = 0;  ///< 1-based
    std::string agent_utterance;
    std::string raw_user_output;
    std::string rationale;
    std::string reply;
    std::optional<AnswerEnvelope> envelope;
    std::vector<Diagnostic> diagnostics;
    int parse_attempts = 1;
    std::uint64_t user_seed = 0;  ///< sampling seed of the recorded attempt
    PromptPayload payload;
    std::string prompt_hash;
    std::vector<Rollout> rollouts;  ///< rollout 0 is the turn itself and is not repeated here
    std::vector<std::string> notes;
    std::chrono::system_clock::time_point timestamp{};  ///< in memory only

    bool parsed() const { return envelope.has_value(); }
};

enum class Termination { end_token, turn_limit, error };

std::string_view to_string(Termination t);
Termination termination_from_string(std::string_view text);

struct DialogueLimits {
    int max_turns = 30;
    int max_parse_retries = 1;
    int rollouts_per_turn = 1;  ///< simulator samples per prompt; extra ones feed RL groups

    bool operator==(const DialogueLimits&) const = default;
};

void to_json(json& j, const DialogueLimits& l);
void from_json(const json& j, DialogueLimits& l);

struct Dialogue {
    std::string dialogue_id;
    AgentTask task;
    StaticProfile static_profile;
    DynamicProfile initial_dynamic;
    std::vector<DynamicProfile> snapshots;  ///< snapshots[j] conditioned turn j+1
    std::vector<Turn> turns;
    Termination terminated_by = Termination::turn_limit;
    std::string error;
    DialogueLimits limits;
    std::string agent_backend;
    std::string user_backend;
};

struct DialogueOptions {
    DialogueLimits limits;
    std::string instruction;
    EnvelopeOptions envelope;
    ChatParams agent_params;
    ChatParams user_params;
    std::uint64_t seed = 0;  ///< simulator sampling seeds derive from this and the dialogue id
};

/// Throws std::invalid_argument when limits.max_turns < 1. Backend failures
/// end the session with terminated_by = error; they are not rethrown.
Dialogue run_dialogue(ChatBackend& agent, ChatBackend& user, const AgentTask& task, const StaticProfile& sp,
                      const DynamicProfile& dp0, std::string dialogue_id, const DialogueOptions& options);

/// Agent-side chat messages given the turns completed so far.
std::vector<Message> agent_messages(const AgentTask& task, std::span<const Turn> prior_turns);

/// Context for the simulator at a new agent line.
std::vector<Utterance> user_context(std::span<const Turn> prior_turns, std::string_view agent_line);

ConsistencyReport check_target_list_consistency(const Dialogue& dialogue);

// ---------------------------------------------------------------------------
// Transcripts: one header record then one record per turn.

std::vector<ordered_json> transcript_records(const Dialogue& dialogue);
std::string render_transcript(const Dialogue& dialogue);
void write_transcript(const std::filesystem::path& path, const Dialogue& dialogue);
Dialogue read_transcript(const std::filesystem::path& path);
Dialogue dialogue_from_records(const std::vector<json>& records);

// ---------------------------------------------------------------------------
// Supervised fine-tuning export

struct SftExport {
    std::vector<json> records;
    std::size_t skipped = 0;
};

/// One record per parsed turn, ordered by (dialogue_id, turn). Inputs are
/// (instruction, static profile, turn snapshot, context); targets are the
/// rationale and the reply plus the answer envelope.
SftExport export_sft_records(std::span<const Dialogue> dialogues);

}  // namespace usersim
