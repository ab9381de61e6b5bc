#include <algorithm>
#include <array>
#include <regex>
#include <sstream>

#include "usersim/errors.hpp"
#include "usersim/eval.hpp"
#include "usersim/rng.hpp"
#include "usersim/util.hpp"

namespace usersim {

std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::win: return "win";
        case Outcome::tie: return "tie";
        case Outcome::loss: return "loss";
    }
    return "tie";
}

std::string ComparisonReport::wtl() const {
    return std::to_string(wins) + "/" + std::to_string(ties) + "/" + std::to_string(losses);
}

std::optional<std::string> parse_pairwise_verdict(std::string_view text) {
    static const std::regex re(R"(^VERDICT:[ \t]*(A|B|TIE)[ \t]*$)", std::regex::icase);
    const auto lines = split_lines(text);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        const auto line = trim(*it);
        if (line.empty()) continue;
        std::smatch m;
        if (!std::regex_match(line, m, re)) return std::nullopt;
        return to_lower(m[1].str()) == "tie" ? std::string("TIE") : to_lower(m[1].str()) == "a" ? "A" : "B";
    }
    return std::nullopt;
}

Outcome majority_outcome(std::span<const Outcome> votes) {
    std::array<std::size_t, 3> counts{};
    for (auto v : votes) ++counts[static_cast<std::size_t>(v)];
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (2 * counts[k] > votes.size()) return static_cast<Outcome>(k);
    }
    return Outcome::tie;
}

double cohen_kappa(std::span<const Outcome> a, std::span<const Outcome> b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("cohen_kappa: label lists differ in size or are empty");
    const double n = static_cast<double>(a.size());
    std::array<double, 3> pa{};
    std::array<double, 3> pb{};
    double agree = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[static_cast<std::size_t>(a[i])] += 1.0 / n;
        pb[static_cast<std::size_t>(b[i])] += 1.0 / n;
        if (a[i] == b[i]) agree += 1.0;
    }
    const double po = agree / n;
    double pe = 0.0;
    for (std::size_t k = 0; k < 3; ++k) pe += pa[k] * pb[k];
    if (po == 1.0) return 1.0;
    return (po - pe) / (1.0 - pe);
}

double fleiss_kappa(const std::vector<std::vector<Outcome>>& ratings) {
    if (ratings.size() < 2 || ratings.front().empty()) throw std::invalid_argument("fleiss_kappa: needs >= 2 raters and >= 1 item");
    const std::size_t items = ratings.front().size();
    for (const auto& r : ratings) {
        if (r.size() != items) throw std::invalid_argument("fleiss_kappa: raters labelled different item counts");
    }
    const double n = static_cast<double>(ratings.size());
    std::array<double, 3> pj{};
    double p_bar = 0.0;
    for (std::size_t i = 0; i < items; ++i) {
        std::array<double, 3> counts{};
        for (const auto& r : ratings) counts[static_cast<std::size_t>(r[i])] += 1.0;
        double agree = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            agree += counts[k] * (counts[k] - 1.0);
            pj[k] += counts[k];
        }
        p_bar += agree / (n * (n - 1.0));
    }
    p_bar /= static_cast<double>(items);
    double pe = 0.0;
    for (auto& p : pj) {
        p /= n * static_cast<double>(items);
        pe += p * p;
    }
    if (p_bar == 1.0) return 1.0;
    return (p_bar - pe) / (1.0 - pe);
}

ComparisonReport compare_pairwise(const RunItems& a, const RunItems& b, std::span<ChatBackend* const> raters,
                                  const TemplateStore& templates, const PairwiseOptions& options) {
    if (raters.empty()) throw std::invalid_argument("compare_pairwise: no raters");
    std::vector<std::string> only_a;
    std::vector<std::string> only_b;
    for (const auto& [id, _] : a.items) {
        if (!b.items.count(id)) only_a.push_back(id);
    }
    for (const auto& [id, _] : b.items) {
        if (!a.items.count(id)) only_b.push_back(id);
    }
    if (!only_a.empty() || !only_b.empty()) {
        std::string msg = "runs '" + a.run_id + "' and '" + b.run_id + "' cover different items";
        if (!only_a.empty()) msg += "; only in first: " + only_a.front() + (only_a.size() > 1 ? ", ..." : "");
        if (!only_b.empty()) msg += "; only in second: " + only_b.front() + (only_b.size() > 1 ? ", ..." : "");
        throw ItemMismatch(msg);
    }
    if (a.items.empty()) throw ItemMismatch("no items to compare");

    ComparisonReport report;
    report.run_a = a.run_id;
    report.run_b = b.run_id;
    report.rater_outcomes.assign(raters.size(), {});
    const auto& tmpl = templates.body("judge/pairwise");

    for (const auto& [id, text_a] : a.items) {
        const auto& text_b = b.items.at(id);
        // The draw is oriented by run id so that swapping the two runs puts
        // each text in the same slot as before.
        bool a_first = true;
        if (options.randomize_positions) {
            const bool coin = Rng(options.seed, "judge-position", fnv1a64(id)).coin();
            a_first = a.run_id <= b.run_id ? coin : !coin;
        }
        const auto ctx = options.context.count(id) ? options.context.at(id) : std::string();
        const std::vector<Message> messages = {
            {Role::user, fill_placeholders(tmpl, {{"context", ctx},
                                                  {"first", a_first ? text_a : text_b},
                                                  {"second", a_first ? text_b : text_a}})}};
        for (std::size_t r = 0; r < raters.size(); ++r) {
            std::optional<std::string> verdict;
            for (int attempt = 0; attempt <= options.max_retries && !verdict; ++attempt) {
                auto params = options.params;
                params.seed = params.seed.value_or(0) + static_cast<std::uint64_t>(attempt);
                verdict = parse_pairwise_verdict(raters[r]->chat(messages, params).text);
            }
            if (!verdict) throw JudgeFormatError("pairwise", "no VERDICT line for item '" + id + "'");
            Outcome o = Outcome::tie;
            if (*verdict != "TIE") o = ((*verdict == "A") == a_first) ? Outcome::win : Outcome::loss;
            report.rater_outcomes[r].push_back(o);
        }
        report.item_ids.push_back(id);
        report.a_first.push_back(a_first);
    }

    for (std::size_t i = 0; i < report.item_ids.size(); ++i) {
        std::vector<Outcome> votes;
        for (const auto& r : report.rater_outcomes) votes.push_back(r[i]);
        const auto o = majority_outcome(votes);
        report.outcomes.push_back(o);
        if (o == Outcome::win) ++report.wins;
        else if (o == Outcome::tie) ++report.ties;
        else ++report.losses;
    }
    if (raters.size() == 2) {
        report.kappa = cohen_kappa(report.rater_outcomes[0], report.rater_outcomes[1]);
        report.kappa_kind = "cohen";
    } else if (raters.size() > 2) {
        report.kappa = fleiss_kappa(report.rater_outcomes);
        report.kappa_kind = "fleiss";
    }
    return report;
}

std::string render_comparison(const ComparisonReport& report) {
    std::ostringstream out;
    out << report.run_a << " vs " << report.run_b << ": W/T/L = " << report.wtl() << " over "
        << report.item_ids.size() << " items, " << report.rater_outcomes.size() << " rater(s)";
    if (report.kappa) out << ", " << report.kappa_kind << " kappa = " << std::to_string(*report.kappa);
    out << "\n";
    return out.str();
}

json to_json(const ComparisonReport& report) {
    json items = json::array();
    for (std::size_t i = 0; i < report.item_ids.size(); ++i) {
        json votes = json::array();
        for (const auto& r : report.rater_outcomes) votes.push_back(to_string(r[i]));
        items.push_back({{"item_id", report.item_ids[i]},
                         {"outcome", to_string(report.outcomes[i])},
                         {"a_first", static_cast<bool>(report.a_first[i])},
                         {"votes", votes}});
    }
    return json{{"run_a", report.run_a},
                {"run_b", report.run_b},
                {"wins", report.wins},
                {"ties", report.ties},
                {"losses", report.losses},
                {"wtl", report.wtl()},
                {"kappa", report.kappa ? json(*report.kappa) : json(nullptr)},
                {"kappa_kind", report.kappa_kind},
                {"items", items}};
}

}  // namespace usersim
