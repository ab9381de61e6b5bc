#include "usersim/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "usersim/adversarial.hpp"
#include "usersim/errors.hpp"
#include "usersim/rng.hpp"
#include "usersim/templates.hpp"
#include "usersim/util.hpp"

#ifndef USERSIM_VERSION
#define USERSIM_VERSION "0.0.0"
#endif

namespace usersim {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Task pairing

std::vector<std::pair<std::size_t, std::size_t>> pair_indices(std::size_t pool_size, std::size_t sop_count,
                                                              std::size_t n, PairingStrategy strategy,
                                                              std::uint64_t seed) {
    if (pool_size == 0) throw EmptyPool("pair-tasks: profile pool is empty");
    if (sop_count == 0) throw EmptyPool("pair-tasks: SOP set is empty");
    if (pool_size > std::numeric_limits<std::uint64_t>::max() / sop_count) {
        throw CapacityError("pair-tasks: profile x SOP space is too large to index");
    }
    if (n == 0) n = pool_size * sop_count;
    if (n / sop_count > pool_size || (n / sop_count == pool_size && n % sop_count != 0)) {
        throw CapacityError("pair-tasks: n = " + std::to_string(n) + " exceeds " + std::to_string(pool_size) +
                            " profiles x " + std::to_string(sop_count) + " SOPs");
    }
    const std::uint64_t total = static_cast<std::uint64_t>(pool_size) * sop_count;
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(n);

    if (strategy == PairingStrategy::round_robin) {
        // k -> (k mod P, (k mod P + k div P) mod S): bijective on the product.
        for (std::uint64_t k = 0; k < n; ++k) {
            const auto p = k % pool_size;
            const auto s = (p + k / pool_size) % sop_count;
            out.emplace_back(p, s);
        }
        return out;
    }

    Rng rng(seed, "pairing");
    std::vector<std::uint64_t> chosen;
    if (n == total) {
        chosen.resize(total);
        for (std::uint64_t k = 0; k < total; ++k) chosen[k] = k;
    } else {
        // Floyd's sampling: n distinct values from [0, total).
        std::set<std::uint64_t> picked;
        for (std::uint64_t j = total - n; j < total; ++j) {
            const auto t = rng.below(j + 1);
            if (!picked.insert(t).second) picked.insert(j);
        }
        chosen.assign(picked.begin(), picked.end());
    }
    rng.shuffle(chosen);
    for (auto k : chosen) out.emplace_back(k / sop_count, k % sop_count);
    return out;
}

namespace {

std::string task_id_for(std::size_t i, std::size_t n) {
    const auto width = std::max<std::size_t>(5, std::to_string(n).size());
    auto digits = std::to_string(i + 1);
    return "task-" + std::string(width - digits.size(), '0') + digits;
}

}  // namespace

TaskPairing pair_tasks(std::span<const StaticProfile> pool, std::span<const AgentTask> sops, std::size_t n,
                       PairingStrategy strategy, std::uint64_t seed) {
    std::set<std::string> ids;
    for (const auto& p : pool) {
        if (!ids.insert(p.profile_id).second) throw ConfigError("duplicate profile_id '" + p.profile_id + "' in pool");
    }
    ids.clear();
    for (const auto& s : sops) {
        if (!ids.insert(s.sop_id).second) throw ConfigError("duplicate sop_id '" + s.sop_id + "'");
    }
    const auto idx = pair_indices(pool.size(), sops.size(), n, strategy, seed);
    TaskPairing out;
    out.pairs.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.pairs.push_back({task_id_for(i, idx.size()), pool[idx[i].first].profile_id, sops[idx[i].second].sop_id});
    }
    return out;
}

void write_pairing(const fs::path& path, const TaskPairing& pairing) {
    std::string text;
    for (const auto& p : pairing.pairs) {
        ordered_json j = {{"task_id", p.task_id}, {"profile_id", p.profile_id}, {"sop_id", p.sop_id}};
        text += j.dump() + "\n";
    }
    write_file(path, text);
}

TaskPairing read_pairing(const fs::path& path) {
    TaskPairing out;
    for (const auto& r : read_jsonl(path)) {
        out.pairs.push_back(
            {r.at("task_id").get<std::string>(), r.at("profile_id").get<std::string>(), r.at("sop_id").get<std::string>()});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run directory

RunLock::RunLock(const fs::path& out_dir) : path_(out_dir / ".lock") {
    fs::create_directories(out_dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw LockError("run directory " + out_dir.string() + " is in use (remove " + path_.string() +
                        " if no command is running)");
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

std::vector<std::string> parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    std::vector<std::string> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
                if (errors[i].empty()) errors[i] = "unknown error";
            }
        }
    };
    const auto threads = static_cast<std::size_t>(std::max(1, jobs));
    if (threads == 1 || n <= 1) {
        worker();
        return errors;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return errors;
}

RunConfig apply_overrides(RunConfig config, const CommandOverrides& o) {
    if (o.seed) config.seed = *o.seed;
    if (o.out) config.output_dir = fs::absolute(*o.out).lexically_normal().string();
    if (o.jobs) {
        if (*o.jobs < 1) throw ConfigError("--jobs must be >= 1");
        config.jobs = *o.jobs;
    }
    if (o.allow_unreviewed) config.allow_unreviewed = true;
    return config;
}

std::map<std::string, std::string> run_directory_digest(const fs::path& out_dir) {
    std::map<std::string, std::string> out;
    if (!fs::exists(out_dir)) return out;
    for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), out_dir).generic_string();
        if (rel == "manifest.json" || rel == ".lock") continue;
        out[rel] = sha256_hex(read_file(entry.path()));
    }
    return out;
}

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string file_digest(const fs::path& p) {
    std::error_code ec;
    if (p.empty() || !fs::is_regular_file(p, ec)) return "";
    return sha256_hex(read_file(p));
}

/// Shared per-command state: lock, templates, backend construction and the
/// manifest entry written on completion.
class Command {
public:
    Command(std::string name, const RunConfig& config)
        : name_(std::move(name)), config_(config), out_(config.out_dir()), started_(utc_now()) {
        config_.validate();
        lock_.emplace(out_);
        templates_ = TemplateStore::load(config_.templates_dir());
        result.command = name_;
    }

    const RunConfig& config() const { return config_; }
    const fs::path& out() const { return out_; }
    const TemplateStore& templates() const { return templates_; }

    fs::path dir(const char* sub) const {
        auto p = out_ / sub;
        fs::create_directories(p);
        return p;
    }

    void input(const fs::path& p) {
        if (!p.empty()) inputs_[p.string()] = file_digest(p);
    }

    void output(const fs::path& p) { result.outputs.push_back(fs::relative(p, out_).generic_string()); }

    /// Fresh backend instance for one work item.
    std::shared_ptr<ChatBackend> backend(const BackendSpec& spec, const std::string& role) {
        auto s = spec;
        if (config_.record) {
            s.record_to = (dir("replay") / (role + ".jsonl")).string();
            recorded_.insert(s.record_to);
        }
        return make_backend(s, stores_, config_.base_dir);
    }

    void fail(std::string item, std::string error) { result.failures.push_back({std::move(item), std::move(error)}); }

    CommandResult finish() {
        for (const auto& file : recorded_) sort_store(file);
        std::sort(result.failures.begin(), result.failures.end(),
                  [](const Failure& a, const Failure& b) { return a.item < b.item; });

        const auto manifest_path = out_ / "manifest.json";
        ordered_json manifest;
        if (fs::exists(manifest_path)) {
            try {
                manifest = ordered_json::parse(read_file(manifest_path));
            } catch (const std::exception&) {
                manifest = ordered_json::object();
            }
        }
        manifest["run_id"] = config_.run_id;
        manifest["tool_version"] = USERSIM_VERSION;

        ordered_json entry;
        entry["command"] = name_;
        entry["started_at"] = started_;
        entry["finished_at"] = utc_now();
        entry["seed"] = config_.seed;
        entry["config_hash"] = config_hash(config_);
        entry["config"] = resolved_config_json(config_);
        entry["template_hashes"] = templates_.content_hashes();
        entry["data_files"] = {{"option_lists", file_digest(config_.option_lists_path())},
                               {"trap_catalog", file_digest(config_.trap_catalog_path())}};
        entry["inputs"] = inputs_;
        std::map<std::string, std::string> outputs;
        for (const auto& rel : result.outputs) outputs[rel] = file_digest(out_ / rel);
        entry["outputs"] = outputs;
        entry["counts"] = result.counts;
        entry["failure_count"] = result.failures.size();
        ordered_json failures = ordered_json::array();
        for (const auto& f : result.failures) failures.push_back({{"item", f.item}, {"error", f.error}});
        entry["failures"] = failures;
        manifest["commands"][name_] = entry;
        write_file(manifest_path, manifest.dump(2) + "\n");
        return result;
    }

    CommandResult result;

private:
    static void sort_store(const std::string& file) {
        if (!fs::exists(file)) return;
        auto lines = split_lines(read_file(file));
        std::set<std::string> unique;
        for (auto& l : lines) {
            if (!trim(l).empty()) unique.insert(l);
        }
        std::string text;
        for (const auto& l : unique) text += l + "\n";
        write_file(file, text);
    }

    std::string name_;
    RunConfig config_;
    fs::path out_;
    std::string started_;
    std::optional<RunLock> lock_;
    TemplateStore templates_;
    StoreRegistry stores_;
    std::set<std::string> recorded_;
    std::map<std::string, std::string> inputs_;
};

std::vector<fs::path> jsonl_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<StaticProfile> load_pool(Command& cmd) {
    const auto path = cmd.config().resolve(cmd.config().profile_pool);
    if (path.empty()) throw ConfigError("profile_pool is not set");
    cmd.input(path);
    return read_profile_pool(path);
}

std::vector<AgentTask> load_sops(Command& cmd) {
    const auto path = cmd.config().resolve(cmd.config().sops);
    if (path.empty()) throw ConfigError("sops is not set");
    cmd.input(path);
    return read_tasks(path);
}

std::vector<Dialogue> load_transcripts(Command& cmd, const fs::path& run_dir) {
    std::vector<Dialogue> out;
    for (const auto& f : jsonl_files(run_dir / "transcripts")) {
        cmd.input(f);
        out.push_back(read_transcript(f));
    }
    return out;
}

template <typename T>
void write_records(const fs::path& path, const std::vector<T>& items) {
    std::string text;
    for (const auto& item : items) {
        json j = item;
        text += j.dump() + "\n";
    }
    write_file(path, text);
}

std::vector<TrapType> selected_trap_types(const RunConfig& c) {
    if (c.traps.types.empty()) return {kTrapTypes.begin(), kTrapTypes.end()};
    std::vector<TrapType> out;
    for (const auto& t : c.traps.types) out.push_back(trap_type_from_string(t));
    return out;
}

std::string run_id_of(const fs::path& run_dir) {
    const auto manifest = run_dir / "manifest.json";
    if (fs::exists(manifest)) {
        const auto j = json::parse(read_file(manifest));
        if (j.contains("run_id")) return j.at("run_id").get<std::string>();
    }
    return run_dir.filename().string();
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

CommandResult cmd_pair_tasks(const RunConfig& config) {
    Command cmd("pair-tasks", config);
    const auto pool = load_pool(cmd);
    const auto sops = load_sops(cmd);
    const auto pairing = pair_tasks(pool, sops, config.pairing.n, config.pairing.strategy, config.seed);
    const auto path = cmd.dir("datasets") / "tasks.jsonl";
    write_pairing(path, pairing);
    cmd.output(path);
    cmd.result.counts = {{"tasks", pairing.pairs.size()}, {"profiles", pool.size()}, {"sops", sops.size()}};
    cmd.result.report = "paired " + std::to_string(pairing.pairs.size()) + " tasks (" +
                        std::string(to_string(config.pairing.strategy)) + ")\n";
    return cmd.finish();
}

CommandResult cmd_simulate(const RunConfig& config) {
    Command cmd("simulate", config);
    const auto pool = load_pool(cmd);
    const auto sops = load_sops(cmd);
    const auto pairing = pair_tasks(pool, sops, config.pairing.n, config.pairing.strategy, config.seed);
    const auto tasks_path = cmd.dir("datasets") / "tasks.jsonl";
    write_pairing(tasks_path, pairing);
    cmd.output(tasks_path);

    std::unordered_map<std::string, std::size_t> profile_at;
    std::unordered_map<std::string, std::size_t> sop_at;
    for (std::size_t i = 0; i < pool.size(); ++i) profile_at[pool[i].profile_id] = i;
    for (std::size_t i = 0; i < sops.size(); ++i) sop_at[sops[i].sop_id] = i;

    const auto transcripts = cmd.dir("transcripts");
    DialogueOptions options;
    options.limits = config.limits;
    options.instruction = cmd.templates().body("simulator/instruction");
    options.agent_params = config.agent.params;
    options.user_params = config.user.params;
    options.seed = config.seed;

    std::vector<std::string> run_errors(pairing.pairs.size());
    std::vector<Termination> endings(pairing.pairs.size(), Termination::error);
    std::vector<std::size_t> turns(pairing.pairs.size(), 0);
    const auto errors = parallel_for(pairing.pairs.size(), config.jobs, [&](std::size_t i) {
        const auto& pair = pairing.pairs[i];
        const auto& sp = pool[profile_at.at(pair.profile_id)];
        const auto task = bind_task(sops[sop_at.at(pair.sop_id)], sp);
        auto agent = cmd.backend(config.agent, "agent");
        auto user = cmd.backend(config.user, "user");
        auto generator = cmd.backend(config.generator, "generator");
        GenerationOptions gen;
        gen.params = config.generator.params;
        gen.params.seed = substream_seed(config.seed, "memory", fnv1a64(pair.task_id));
        const auto dp0 = init_dynamic_profile(sp, task, *generator, cmd.templates(), gen);
        const auto d = run_dialogue(*agent, *user, task, sp, dp0, pair.task_id, options);
        write_transcript(transcripts / (pair.task_id + ".jsonl"), d);
        endings[i] = d.terminated_by;
        turns[i] = d.turns.size();
        if (d.terminated_by == Termination::error) run_errors[i] = d.error;
    });

    std::map<std::string, std::size_t> by_ending;
    std::size_t total_turns = 0;
    std::size_t written = 0;
    for (std::size_t i = 0; i < pairing.pairs.size(); ++i) {
        const auto& id = pairing.pairs[i].task_id;
        if (!errors[i].empty()) {
            cmd.fail(id, errors[i]);
            continue;
        }
        ++written;
        cmd.output(transcripts / (id + ".jsonl"));
        ++by_ending[std::string(to_string(endings[i]))];
        total_turns += turns[i];
        if (!run_errors[i].empty()) cmd.fail(id, run_errors[i]);
    }
    cmd.result.counts = {{"tasks", pairing.pairs.size()},
                         {"transcripts", written},
                         {"turns", total_turns},
                         {"terminated_by", by_ending}};
    cmd.result.report = "simulated " + std::to_string(written) + "/" + std::to_string(pairing.pairs.size()) +
                        " dialogues, " + std::to_string(total_turns) + " turns\n";
    return cmd.finish();
}

CommandResult cmd_build_traps(const RunConfig& config) {
    Command cmd("build-traps", config);
    const auto pool = load_pool(cmd);
    const auto sops = load_sops(cmd);
    cmd.input(config.trap_catalog_path());
    const auto catalog = TrapCatalog::load(config.trap_catalog_path());

    std::vector<TrapScenario> scenarios;
    for (auto t : selected_trap_types(config)) {
        auto s = instantiate_trap(t, catalog, pool, sops, config.traps.per_type);
        scenarios.insert(scenarios.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }

    std::vector<std::optional<AdversarialSample>> built(scenarios.size());
    const auto errors = parallel_for(scenarios.size(), config.jobs, [&](std::size_t i) {
        auto generator = cmd.backend(config.generator, "generator");
        TrapBuildOptions opts;
        opts.max_history_turns = config.traps.max_history_turns;
        opts.sample_seed = substream_seed(config.seed, "generator", fnv1a64(scenarios[i].scenario_id));
        opts.params = config.generator.params;
        built[i] = build_adversarial_dialogue(scenarios[i], catalog, *generator, cmd.templates(), opts);
    });

    std::vector<AdversarialSample> samples;
    std::map<std::string, std::size_t> per_type;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        if (!errors[i].empty()) {
            cmd.fail(scenarios[i].scenario_id, errors[i]);
            continue;
        }
        ++per_type[std::string(to_string(built[i]->scenario.trap_type))];
        samples.push_back(std::move(*built[i]));
    }
    const auto datasets = cmd.dir("datasets");
    write_samples(datasets / "traps.jsonl", samples);
    write_file(datasets / "review_queue.txt", review_queue(samples));
    cmd.output(datasets / "traps.jsonl");
    cmd.output(datasets / "review_queue.txt");
    cmd.result.counts = {{"scenarios", scenarios.size()}, {"samples", samples.size()}, {"per_type", per_type}};
    cmd.result.report = "built " + std::to_string(samples.size()) + " trap samples; review queue at " +
                        (datasets / "review_queue.txt").string() + "\n";
    return cmd.finish();
}

CommandResult cmd_review_queue(const RunConfig& config, bool include_reviewed) {
    Command cmd("review-queue", config);
    const auto traps = cmd.out() / "datasets" / "traps.jsonl";
    if (!fs::exists(traps)) throw Error("no trap samples at " + traps.string() + "; run build-traps first");
    cmd.input(traps);
    const auto samples = read_samples(traps);
    const auto path = cmd.dir("datasets") / "review_queue.txt";
    write_file(path, review_queue(samples, include_reviewed));
    cmd.output(path);
    cmd.result.counts = {{"samples", samples.size()}};
    cmd.result.report = "review queue written to " + path.string() + "\n";
    return cmd.finish();
}

CommandResult cmd_apply_review(const RunConfig& config, const fs::path& review_file) {
    Command cmd("apply-review", config);
    const auto traps = cmd.out() / "datasets" / "traps.jsonl";
    if (!fs::exists(traps)) throw Error("no trap samples at " + traps.string() + "; run build-traps first");
    cmd.input(traps);
    cmd.input(review_file);
    const auto samples = read_samples(traps);
    const auto outcome = apply_review(samples, read_file(review_file));
    write_samples(traps, outcome.samples);
    cmd.output(traps);
    cmd.result.counts = {{"approved", outcome.approved},
                         {"rejected", outcome.rejected},
                         {"edited", outcome.edited},
                         {"unchanged", outcome.unchanged}};
    cmd.result.report = "review applied: " + std::to_string(outcome.approved) + " approved, " +
                        std::to_string(outcome.rejected) + " rejected, " + std::to_string(outcome.edited) +
                        " edited, " + std::to_string(outcome.unchanged) + " unchanged\n";
    return cmd.finish();
}

CommandResult cmd_score(const RunConfig& config) {
    Command cmd("score", config);
    const auto dialogues = load_transcripts(cmd, cmd.out());
    std::vector<std::vector<RewardRecord>> per_dialogue(dialogues.size());
    const auto errors = parallel_for(dialogues.size(), config.jobs, [&](std::size_t i) {
        auto judge = cmd.backend(config.judge, "judge");
        per_dialogue[i] = score_dialogue(dialogues[i], config.scoring, *judge, cmd.templates());
    });
    std::vector<RewardRecord> records;
    std::size_t skipped = 0;
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        if (!errors[i].empty()) {
            cmd.fail(dialogues[i].dialogue_id, errors[i]);
            continue;
        }
        for (auto& r : per_dialogue[i]) {
            skipped += r.rubric_skipped ? 1 : 0;
            flagged += r.flagged_rubrics.empty() ? 0 : 1;
            records.push_back(std::move(r));
        }
    }
    const auto path = cmd.dir("rewards") / "rewards.jsonl";
    write_records(path, records);
    cmd.output(path);
    cmd.result.counts = {{"dialogues", dialogues.size()},
                         {"records", records.size()},
                         {"rubric_skipped", skipped},
                         {"flagged", flagged}};
    cmd.result.report = "scored " + std::to_string(records.size()) + " outputs from " +
                        std::to_string(dialogues.size()) + " dialogues\n";
    return cmd.finish();
}

CommandResult cmd_evaluate(const RunConfig& config) {
    Command cmd("evaluate", config);
    JudgeOptions jopts;
    jopts.max_retries = config.judge_retries;
    jopts.params = config.judge.params;
    jopts.aggregation = config.aggregation;
    const auto scorecards = cmd.dir("scorecards");
    std::string report;
    json tables = json::object();

    const auto dialogues = load_transcripts(cmd, cmd.out());
    std::vector<SessionScorecard> sessions;
    if (!dialogues.empty()) {
        std::vector<std::optional<SessionScorecard>> cards(dialogues.size());
        const auto errors = parallel_for(dialogues.size(), config.jobs, [&](std::size_t i) {
            auto judge = cmd.backend(config.judge, "judge");
            cards[i] = judge_session(dialogues[i], *judge, cmd.templates(), jopts, config.run_id);
        });
        for (std::size_t i = 0; i < dialogues.size(); ++i) {
            if (errors[i].empty()) sessions.push_back(std::move(*cards[i]));
            else cmd.fail(dialogues[i].dialogue_id, errors[i]);
        }
        write_records(scorecards / "session.jsonl", sessions);
        cmd.output(scorecards / "session.jsonl");
        if (!sessions.empty()) {
            const auto table = aggregate(std::span<const SessionScorecard>(sessions), "none", config.aggregation);
            report += "Session-level\n" + render_table(table);
            tables["session"] = to_json(table);
        }
    }

    const auto traps = cmd.out() / "datasets" / "traps.jsonl";
    std::vector<TurnScorecard> turn_cards;
    std::size_t not_reviewed = 0;
    if (fs::exists(traps)) {
        cmd.input(traps);
        std::vector<AdversarialSample> runnable;
        for (auto& s : read_samples(traps)) {
            const bool ok = s.review_status == ReviewStatus::approved || s.review_status == ReviewStatus::edited ||
                            (config.allow_unreviewed && s.review_status == ReviewStatus::unreviewed);
            if (ok) runnable.push_back(std::move(s));
            else ++not_reviewed;
        }
        TrapRunOptions ropts;
        ropts.allow_unreviewed = config.allow_unreviewed;
        ropts.instruction = cmd.templates().body("simulator/instruction");
        ropts.params = config.user.params;
        std::vector<std::optional<TrapResponse>> responses(runnable.size());
        std::vector<std::optional<TurnScorecard>> cards(runnable.size());
        const auto errors = parallel_for(runnable.size(), config.jobs, [&](std::size_t i) {
            auto user = cmd.backend(config.user, "user");
            auto judge = cmd.backend(config.judge, "judge");
            auto r = run_trap_turn(runnable[i], *user, ropts);
            cards[i] = judge_turn(r, *judge, cmd.templates(), jopts, config.run_id);
            responses[i] = std::move(r);
        });
        std::vector<TrapResponse> kept;
        for (std::size_t i = 0; i < runnable.size(); ++i) {
            if (!errors[i].empty()) {
                cmd.fail(runnable[i].sample_id, errors[i]);
                continue;
            }
            kept.push_back(std::move(*responses[i]));
            turn_cards.push_back(std::move(*cards[i]));
        }
        write_records(scorecards / "trap_responses.jsonl", kept);
        write_records(scorecards / "turn.jsonl", turn_cards);
        cmd.output(scorecards / "trap_responses.jsonl");
        cmd.output(scorecards / "turn.jsonl");
        if (!turn_cards.empty()) {
            const auto overall = aggregate(std::span<const TurnScorecard>(turn_cards), "none", config.aggregation);
            const auto by_type = aggregate(std::span<const TurnScorecard>(turn_cards), "trap_type", config.aggregation);
            report += (report.empty() ? "" : "\n") + std::string("Turn-level\n") + render_table(overall) +
                      "\nTurn-level by trap type\n" + render_table(by_type);
            tables["turn"] = to_json(overall);
            tables["turn_by_trap_type"] = to_json(by_type);
        }
    }
    if (not_reviewed > 0) {
        report += "skipped " + std::to_string(not_reviewed) +
                  " trap samples that are not approved (see apply-review, or allow_unreviewed)\n";
    }

    write_file(scorecards / "report.txt", report);
    write_file(scorecards / "report.json", tables.dump(2) + "\n");
    cmd.output(scorecards / "report.txt");
    cmd.output(scorecards / "report.json");
    cmd.result.counts = {{"sessions", sessions.size()}, {"turns", turn_cards.size()}, {"not_reviewed", not_reviewed}};
    cmd.result.report = report;
    return cmd.finish();
}

CommandResult cmd_compare(const RunConfig& config, const fs::path& run_a, const fs::path& run_b,
                          const std::string& level) {
    Command cmd("compare", config);
    RunItems a{run_id_of(run_a), {}};
    RunItems b{run_id_of(run_b), {}};
    PairwiseOptions popts;
    popts.seed = config.seed;
    popts.max_retries = config.judge_retries;
    popts.params = config.judge.params;

    if (level == "session") {
        for (const auto& d : load_transcripts(cmd, run_a)) {
            a.items[d.dialogue_id] = render_dialogue_text(d);
            popts.context[d.dialogue_id] = static_profile_to_ordered_json(d.static_profile).dump(2) +
                                           "\n\nScenario memory:\n" + d.initial_dynamic.scenario_memory;
        }
        for (const auto& d : load_transcripts(cmd, run_b)) b.items[d.dialogue_id] = render_dialogue_text(d);
    } else if (level == "turn") {
        auto load = [&](const fs::path& dir, RunItems& items, bool with_context) {
            const auto path = dir / "scorecards" / "trap_responses.jsonl";
            cmd.input(path);
            for (const auto& rec : read_jsonl(path)) {
                const auto r = rec.get<TrapResponse>();
                items.items[r.sample_id] = r.reply;
                if (!with_context) continue;
                std::string ctx = r.payload.static_profile + "\n\n";
                for (const auto& u : r.payload.context) {
                    ctx += std::string(u.speaker == Speaker::agent ? "AGENT: " : "USER: ") + u.text + "\n";
                }
                popts.context[r.sample_id] = ctx;
            }
        };
        load(run_a, a, true);
        load(run_b, b, false);
    } else {
        throw ConfigError("compare level must be session or turn, got '" + level + "'");
    }

    std::vector<std::shared_ptr<ChatBackend>> owned;
    if (config.raters.empty()) {
        owned.push_back(cmd.backend(config.judge, "judge"));
    } else {
        for (std::size_t i = 0; i < config.raters.size(); ++i) {
            owned.push_back(cmd.backend(config.raters[i], "rater" + std::to_string(i + 1)));
        }
    }
    std::vector<ChatBackend*> raters;
    for (const auto& r : owned) raters.push_back(r.get());
    const auto report = compare_pairwise(a, b, raters, cmd.templates(), popts);

    const auto dir = cmd.dir("scorecards");
    const auto stem = "compare-" + level + "-" + a.run_id + "-vs-" + b.run_id;
    write_file(dir / (stem + ".json"), to_json(report).dump(2) + "\n");
    write_file(dir / (stem + ".txt"), render_comparison(report));
    cmd.output(dir / (stem + ".json"));
    cmd.output(dir / (stem + ".txt"));
    cmd.result.counts = {{"items", report.item_ids.size()},
                         {"wins", report.wins},
                         {"ties", report.ties},
                         {"losses", report.losses}};
    cmd.result.report = render_comparison(report);
    return cmd.finish();
}

CommandResult cmd_export_sft(const RunConfig& config) {
    Command cmd("export-sft", config);
    const auto dialogues = load_transcripts(cmd, cmd.out());
    const auto sft = export_sft_records(dialogues);
    const auto path = cmd.dir("datasets") / "sft.jsonl";
    write_jsonl(path, sft.records);
    cmd.output(path);
    cmd.result.counts = {{"dialogues", dialogues.size()}, {"records", sft.records.size()}, {"skipped", sft.skipped}};
    cmd.result.report = "exported " + std::to_string(sft.records.size()) + " SFT records (" +
                        std::to_string(sft.skipped) + " unparsed turns skipped)\n";
    return cmd.finish();
}

CommandResult cmd_export_rl(const RunConfig& config) {
    Command cmd("export-rl", config);
    const auto rewards = cmd.out() / "rewards" / "rewards.jsonl";
    if (!fs::exists(rewards)) throw Error("no reward records at " + rewards.string() + "; run score first");
    cmd.input(rewards);
    std::vector<RewardRecord> records;
    for (const auto& j : read_jsonl(rewards)) records.push_back(j.get<RewardRecord>());
    const auto batch = build_rl_batch(records);
    const auto path = cmd.dir("datasets") / "rl_batch.jsonl";
    write_jsonl(path, batch);
    cmd.output(path);
    cmd.result.counts = {{"records", records.size()}, {"groups", batch.size()}};
    cmd.result.report = "exported " + std::to_string(batch.size()) + " RL groups from " +
                        std::to_string(records.size()) + " scored outputs\n";
    return cmd.finish();
}

CommandResult cmd_gen_profiles(const RunConfig& config) {
    Command cmd("gen-profiles", config);
    const auto seeds_path = config.resolve(config.preference_records);
    if (seeds_path.empty()) throw ConfigError("preference_records is not set");
    cmd.input(seeds_path);
    cmd.input(config.option_lists_path());
    const auto seeds = read_preference_records(seeds_path);
    const auto options = OptionLists::load(config.option_lists_path());
    options.require_complete();

    std::vector<std::optional<StaticProfile>> made(seeds.size());
    const auto errors = parallel_for(seeds.size(), config.jobs, [&](std::size_t i) {
        auto generator = cmd.backend(config.generator, "generator");
        GenerationOptions gen;
        gen.params = config.generator.params;
        gen.params.seed = substream_seed(config.seed, "profiles", fnv1a64(seeds[i].user_id));
        made[i] = generate_static_profile(seeds[i], *generator, options, cmd.templates(), gen);
    });
    std::vector<StaticProfile> pool;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (errors[i].empty()) pool.push_back(std::move(*made[i]));
        else cmd.fail(seeds[i].user_id, errors[i]);
    }
    const auto path = cmd.dir("datasets") / "profiles.jsonl";
    write_profile_pool(path, pool);
    cmd.output(path);
    cmd.result.counts = {{"seeds", seeds.size()}, {"profiles", pool.size()}};
    cmd.result.report = "generated " + std::to_string(pool.size()) + "/" + std::to_string(seeds.size()) + " profiles\n";
    return cmd.finish();
}

CommandResult cmd_dedup_pool(const RunConfig& config, const fs::path& output) {
    Command cmd("dedup-pool", config);
    const auto seeds_path = config.resolve(config.preference_records);
    if (seeds_path.empty()) throw ConfigError("preference_records is not set");
    cmd.input(seeds_path);
    const auto records = read_preference_records(seeds_path);
    const auto unique = dedup_pool(records);
    const auto path = output.empty() ? cmd.dir("datasets") / "preference_records.dedup.jsonl" : output;
    std::vector<json> out;
    for (const auto& r : unique) out.push_back(r);
    write_jsonl(path, out);
    if (!output.empty()) cmd.input(path);
    else cmd.output(path);
    cmd.result.counts = {{"records", records.size()}, {"unique", unique.size()},
                         {"removed", records.size() - unique.size()}};
    cmd.result.report = "kept " + std::to_string(unique.size()) + " of " + std::to_string(records.size()) +
                        " records\n";
    return cmd.finish();
}

CommandResult cmd_pool_stats(const RunConfig& config) {
    Command cmd("pool-stats", config);
    const auto pool = load_pool(cmd);
    const auto report = pool_statistics(pool);
    const auto path = cmd.dir("datasets") / "pool_stats.json";
    write_file(path, to_json(report).dump(2) + "\n");
    cmd.output(path);
    cmd.result.counts = {{"profiles", pool.size()}};
    cmd.result.report = render_text(report);
    return cmd.finish();
}

}  // namespace usersim
