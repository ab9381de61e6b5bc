#pragma once
// Adversarial trap benchmark.
//
// Eleven manipulation strategies, each bound to the users it preys on. A
// sample is built in three stages: keyword-based profile selection, a
// generated dialogue history ending in one marked trap turn, and a review
// pass through an editable queue file. Probes then run a single simulator
// turn against the trap.
//
// Generator output grammar (one utterance per line, blank lines ignored,
// indented lines continue the previous utterance):
//
//   MEMORY: <scenario memory>          optional, first line only
//   AGENT: <text>
//   USER: <text>
//   ...                                alternating, agent first, >= 1 exchange
//   AGENT: <trap>...</trap>            last line; exactly one marker pair

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "usersim/backend.hpp"
#include "usersim/dialogue.hpp"
#include "usersim/envelope.hpp"
#include "usersim/profile.hpp"
#include "usersim/templates.hpp"

namespace usersim {

inline constexpr std::string_view kTrapOpen = "<trap>";
inline constexpr std::string_view kTrapClose = "</trap>";

enum class TrapType {
    vague_assurance,
    artificial_time_pressure,
    obfuscated_costs,
    induced_upselling,
    forced_bundling,
    conditional_consent,
    intentional_misinformation,
    attitude_contrast,
    appeal_to_authority,
    rhythm_disruption,
    stalling_tactics,
};

inline constexpr std::array<TrapType, 11> kTrapTypes = {
    TrapType::vague_assurance,     TrapType::artificial_time_pressure, TrapType::obfuscated_costs,
    TrapType::induced_upselling,   TrapType::forced_bundling,          TrapType::conditional_consent,
    TrapType::intentional_misinformation, TrapType::attitude_contrast, TrapType::appeal_to_authority,
    TrapType::rhythm_disruption,   TrapType::stalling_tactics,
};

std::string_view to_string(TrapType t);
/// Throws Error for names outside the taxonomy.
TrapType trap_type_from_string(std::string_view text);

struct TrapInfo {
    TrapType type = TrapType::vague_assurance;
    std::string title;
    std::string description;
    std::string target_vulnerability;
    std::vector<std::string> keywords;
    std::vector<std::string> compatible_scenarios;  ///< SOP scenario labels
};

class TrapCatalog {
public:
    static TrapCatalog load(const std::filesystem::path& path);
    /// ConfigError unless all eleven types appear exactly once with keywords.
    static TrapCatalog from_json(const json& j);

    const TrapInfo& at(TrapType t) const;
    const std::string& version() const noexcept { return version_; }

private:
    std::string version_;
    std::array<TrapInfo, 11> traps_{};
};

struct TrapScenario {
    std::string scenario_id;  ///< "<trap_type>-<rank>"
    TrapType trap_type = TrapType::vague_assurance;
    StaticProfile profile;
    AgentTask task;
    std::string planned_trap_description;
    // provenance of the profile selection
    std::vector<std::string> keywords;
    std::size_t pool_index = 0;
    int keyword_score = 0;
    int rank = 0;
};

void to_json(json& j, const TrapScenario& s);
void from_json(const json& j, TrapScenario& s);

/// Top-k profiles by the trap's keywords; SOPs assigned round-robin over the
/// compatible scenario labels (all SOPs when none is compatible).
/// EmptyPool when the pool or the SOP set is empty.
std::vector<TrapScenario> instantiate_trap(TrapType t, const TrapCatalog& catalog, std::span<const StaticProfile> pool,
                                           std::span<const AgentTask> sops, std::size_t k = 20);

enum class ReviewStatus { unreviewed, approved, rejected, edited };

std::string_view to_string(ReviewStatus s);
ReviewStatus review_status_from_string(std::string_view text);

struct AdversarialSample {
    std::string sample_id;
    TrapScenario scenario;
    std::string scenario_memory;
    std::vector<Utterance> history;  ///< agent first, alternating, ends with the user
    std::string trap_turn;           ///< adversarial agent line, without markers
    ReviewStatus review_status = ReviewStatus::unreviewed;
    std::string generator;

    /// 1-based agent-turn index of the trap.
    int trap_turn_index() const { return static_cast<int>(history.size() / 2) + 1; }
};

void to_json(json& j, const AdversarialSample& s);
void from_json(const json& j, AdversarialSample& s);

/// Content hash used to detect upstream edits between review export and import.
std::string sample_fingerprint(const AdversarialSample& s);

struct GeneratedDialogue {
    std::string scenario_memory;
    std::vector<Utterance> history;
    std::string trap_turn;
};

/// Parses generator output per the grammar above. Throws TrapFormatError.
GeneratedDialogue parse_generator_output(std::string_view text);

/// History alternation and marker-free trap turn; throws TrapFormatError.
void validate_sample(const AdversarialSample& s);

struct TrapBuildOptions {
    int max_history_turns = 6;  ///< agent turns before the trap, passed to the generator
    std::uint64_t sample_seed = 0;
    ChatParams params;
};

AdversarialSample build_adversarial_dialogue(const TrapScenario& scenario, const TrapCatalog& catalog,
                                             ChatBackend& generator, const TemplateStore& templates,
                                             const TrapBuildOptions& options = {});

struct TrapResponse {
    std::string sample_id;
    TrapType trap_type = TrapType::vague_assurance;
    PromptPayload payload;
    std::string prompt_hash;
    std::string raw_output;
    std::string rationale;
    std::string reply;
    std::optional<AnswerEnvelope> envelope;
    std::vector<Diagnostic> diagnostics;
    std::string user_backend;

    bool parsed() const { return envelope.has_value(); }
};

void to_json(json& j, const TrapResponse& r);
void from_json(const json& j, TrapResponse& r);

struct TrapRunOptions {
    bool allow_unreviewed = false;
    std::string instruction;
    ChatParams params;
    EnvelopeOptions envelope;
};

/// One simulator turn against the trap. The sample is not modified.
/// NotReviewed unless the sample is approved or edited (or unreviewed and
/// allowed by the options).
TrapResponse run_trap_turn(const AdversarialSample& sample, ChatBackend& user, const TrapRunOptions& options);

// ---------------------------------------------------------------------------
// Review queue

/// Human-editable review file. By default only unreviewed samples are listed.
std::string review_queue(std::span<const AdversarialSample> samples, bool include_reviewed = false);

struct ReviewOutcome {
    std::vector<AdversarialSample> samples;
    std::size_t approved = 0;
    std::size_t rejected = 0;
    std::size_t edited = 0;
    std::size_t unchanged = 0;
};

/// Applies a review file. Samples whose fingerprint changed since export
/// raise ReviewConflict listing every stale id; nothing is applied then.
ReviewOutcome apply_review(std::span<const AdversarialSample> samples, std::string_view review_text);

std::vector<AdversarialSample> read_samples(const std::filesystem::path& path);
void write_samples(const std::filesystem::path& path, std::span<const AdversarialSample> samples);

}  // namespace usersim
