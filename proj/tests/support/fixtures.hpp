#pragma once
// Shared builders for tests: valid profiles, tasks, envelopes, scripted
// simulators and scratch directories.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "usersim/backend.hpp"
#include "usersim/config.hpp"
#include "usersim/dialogue.hpp"
#include "usersim/envelope.hpp"
#include "usersim/profile.hpp"
#include "usersim/templates.hpp"

namespace usersim::fixture {

const OptionLists& option_lists();
const TemplateStore& templates();

/// A profile that passes validation against the shipped option lists.
StaticProfile make_profile(const std::string& id, const std::string& name = "Lin Wei");
/// `n` valid profiles with varied attributes, ids "p0000".."p<n-1>".
std::vector<StaticProfile> synthetic_pool(std::size_t n);

AgentTask make_task(const std::string& id, const std::string& label = "telecom");
/// A handful of SOPs across scenario labels.
std::vector<AgentTask> synthetic_sops(std::size_t n);

/// Rationale of exactly `chars` characters (no surrounding whitespace).
std::string rationale_of_length(std::size_t chars, char fill = 'r');

AnswerEnvelope make_envelope(const std::string& utterance, bool end = false, StateValues state = {});
/// Well-formed turn with a 240-character rationale.
std::string valid_turn(const std::string& utterance, bool end = false, StateValues state = {});

/// Scripted simulator that answers every agent line with a valid envelope;
/// it ends the session on turn `end_turn` (0 = never). Rationale length
/// depends on the sampling seed so rollouts of one prompt differ.
std::shared_ptr<ScriptedBackend> simulator(int end_turn, std::string name = "sim");

/// Scripted agent: "Agent line <k>" for k = 1, 2, ...
std::shared_ptr<ScriptedBackend> agent(std::string name = "agent");

/// Judge replying with a fixed score line to every prompt.
std::shared_ptr<ScriptedBackend> constant_judge(const std::string& reply);

/// Fresh empty directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// JSON specs for a fully scripted configuration (agent, user, judge and
/// generator) usable from config files.
json scripted_backends_json(int end_turn = 3, int rollouts = 1);

/// Writes `n` profiles and `m` SOPs as JSONL files under dir.
void write_inputs(const std::filesystem::path& dir, std::size_t profiles, std::size_t sops);

}  // namespace usersim::fixture
