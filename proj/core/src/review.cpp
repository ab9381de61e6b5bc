#include <map>
#include <set>

#include "usersim/adversarial.hpp"
#include "usersim/errors.hpp"

namespace usersim {

namespace {

constexpr std::string_view kBlockPrefix = "=== sample: ";

std::string escape_line(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string unescape_line(std::string_view text) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) {
            const char next = text[i + 1];
            if (next == 'n' || next == 'r' || next == '\\') {
                out.push_back(next == 'n' ? '\n' : next == 'r' ? '\r' : '\\');
                ++i;
                continue;
            }
        }
        out.push_back(text[i]);
    }
    return out;
}

struct ReviewBlock {
    std::string id;
    std::size_t line = 0;
    std::optional<std::string> fingerprint;
    std::optional<std::string> status;
    std::optional<std::string> trap_turn;
};

std::vector<ReviewBlock> parse_review(std::string_view text) {
    std::vector<ReviewBlock> blocks;
    const auto lines = split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const auto& line = lines[n];
        if (line.starts_with(kBlockPrefix)) {
            blocks.push_back(ReviewBlock{trim(std::string_view(line).substr(kBlockPrefix.size())), n + 1, {}, {}, {}});
            continue;
        }
        const auto t = trim(line);
        if (t.empty() || t.starts_with("#") || t.starts_with("|")) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) throw Error("review file line " + std::to_string(n + 1) + ": expected key: value");
        if (blocks.empty()) throw Error("review file line " + std::to_string(n + 1) + ": field outside a sample block");
        const auto key = trim(std::string_view(line).substr(0, colon));
        auto value = std::string(std::string_view(line).substr(colon + 1));
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        auto& b = blocks.back();
        if (key == "fingerprint") b.fingerprint = trim(value);
        else if (key == "status") b.status = trim(value);
        else if (key == "trap_turn") b.trap_turn = unescape_line(value);
    }
    return blocks;
}

}  // namespace

std::string review_queue(std::span<const AdversarialSample> samples, bool include_reviewed) {
    std::string out;
    out += "# usersim review queue, format 1\n";
    out += "# Set status to approved, rejected or edited for each sample.\n";
    out += "# To rewrite a trap turn, change its trap_turn line (write \\n for a line break).\n";
    out += "# A changed trap turn is stored as edited. Lines starting with # or | are ignored.\n";
    for (const auto& s : samples) {
        if (!include_reviewed && s.review_status != ReviewStatus::unreviewed) continue;
        out += "\n";
        out += std::string(kBlockPrefix) + s.sample_id + "\n";
        out += "trap_type: " + std::string(to_string(s.scenario.trap_type)) + "\n";
        out += "fingerprint: " + sample_fingerprint(s) + "\n";
        if (!s.scenario_memory.empty()) out += "| MEMORY: " + escape_line(s.scenario_memory) + "\n";
        for (const auto& u : s.history) {
            out += std::string("| ") + (u.speaker == Speaker::agent ? "AGENT: " : "USER: ") + escape_line(u.text) + "\n";
        }
        out += "status: " + std::string(to_string(s.review_status)) + "\n";
        out += "trap_turn: " + escape_line(s.trap_turn) + "\n";
    }
    return out;
}

ReviewOutcome apply_review(std::span<const AdversarialSample> samples, std::string_view review_text) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < samples.size(); ++i) index.emplace(samples[i].sample_id, i);

    const auto blocks = parse_review(review_text);
    std::vector<std::string> stale;
    std::set<std::string> seen;
    for (const auto& b : blocks) {
        auto it = index.find(b.id);
        if (it == index.end()) throw Error("review file line " + std::to_string(b.line) + ": unknown sample '" + b.id + "'");
        if (!seen.insert(b.id).second) throw Error("review file lists sample '" + b.id + "' twice");
        if (!b.fingerprint || !b.status || !b.trap_turn) {
            throw Error("review block '" + b.id + "' needs fingerprint, status and trap_turn lines");
        }
        if (*b.fingerprint != sample_fingerprint(samples[it->second])) stale.push_back(b.id);
    }
    if (!stale.empty()) throw ReviewConflict(stale);

    ReviewOutcome out;
    out.samples.assign(samples.begin(), samples.end());
    for (const auto& b : blocks) {
        auto& s = out.samples[index.at(b.id)];
        const auto before_status = s.review_status;
        const auto status = review_status_from_string(*b.status);
        const bool text_changed = *b.trap_turn != s.trap_turn;
        if (status == ReviewStatus::rejected) {
            s.review_status = status;
        } else if (text_changed) {
            s.trap_turn = *b.trap_turn;
            s.review_status = ReviewStatus::edited;
            validate_sample(s);
        } else {
            s.review_status = status;
        }
        if (s.review_status == before_status && !text_changed) {
            ++out.unchanged;
            continue;
        }
        switch (s.review_status) {
            case ReviewStatus::approved: ++out.approved; break;
            case ReviewStatus::rejected: ++out.rejected; break;
            case ReviewStatus::edited: ++out.edited; break;
            case ReviewStatus::unreviewed: ++out.unchanged; break;
        }
    }
    return out;
}

std::vector<AdversarialSample> read_samples(const std::filesystem::path& path) {
    std::vector<AdversarialSample> out;
    for (const auto& record : read_jsonl(path)) out.push_back(record.get<AdversarialSample>());
    return out;
}

void write_samples(const std::filesystem::path& path, std::span<const AdversarialSample> samples) {
    std::string text;
    for (const auto& s : samples) {
        json j = s;
        text += j.dump();
        text.push_back('\n');
    }
    write_file(path, text);
}

}  // namespace usersim
