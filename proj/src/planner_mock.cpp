#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include "planattr/blocksworld.hpp"
#include "planattr/gateway.hpp"
#include "planattr/memory.hpp"
#include "planattr/prompt.hpp"

namespace planattr::lm {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// Which actions a sentence of domain text talks about.
bool mentions(std::string_view sentence, bw::ActionKind kind) {
    static const std::regex pick(R"(\bpick(ed|ing)? up\b)");
    static const std::regex put(R"(\b(put|placed?) down\b|\bplace a block\b)");
    static const std::regex stack(R"((^|[^n])\bstack(ed|ing)?\b)");
    static const std::regex unstack(R"(\bunstack(ed|ing)?\b)");
    const std::string s = lower(sentence);
    switch (kind) {
        case bw::ActionKind::PickUp: return std::regex_search(s, pick);
        case bw::ActionKind::PutDown: return std::regex_search(s, put);
        case bw::ActionKind::Stack: return std::regex_search(s, stack);
        case bw::ActionKind::Unstack: return std::regex_search(s, unstack);
    }
    return false;
}

const std::vector<std::string>& constraint_sentences() {
    static const std::vector<std::string> sentences = [] {
        std::vector<std::string> out;
        const auto text = prompt::blocksworld_constraints();
        for (const auto& span : prompt::split_sentences(text)) out.emplace_back(text.substr(span.begin, span.size()));
        return out;
    }();
    return sentences;
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

std::string insight_actions_response(const std::string& prompt, std::uint64_t seed) {
    const auto& reference = memory::blocksworld_reference_insights();
    std::string actions;
    for (const auto& content : reference) {
        if (prompt.find(content) == std::string::npos) {
            actions = "[Add] [Insight 0]: " + content + "\n";
            break;
        }
    }
    if (actions.empty()) {
        static const std::regex listed(R"(\[Insight (\d+)\] \(votes: -?\d+\): )");
        std::vector<std::string> ids;
        for (std::sregex_iterator it(prompt.begin(), prompt.end(), listed), end; it != end; ++it) ids.push_back((*it)[1]);
        if (!ids.empty()) actions = "[Support] [Insight " + ids[fnv1a64(prompt, seed) % ids.size()] + "]\n";
    }
    return "Failed Plan Analysis:\nThe failed plan broke an action precondition.\nAction on Current Insight Set:\n" +
           actions + "[Finished]";
}

}  // namespace

PlannerMock::PlannerMock(PlannerMockConfig config) : cfg_(config) {
    const double worst = cfg_.question_amplitude + cfg_.action_defs_effect +
                         cfg_.constraint_effect * static_cast<double>(constraint_sentences().size()) +
                         cfg_.memory_effect * static_cast<double>(memory::blocksworld_reference_insights().size());
    if (!(cfg_.base <= 1.0 && cfg_.base - worst > 0.0 && cfg_.filler_prob > 0.0 && cfg_.filler_prob <= 1.0))
        throw Error(ErrorKind::ConfigError, "planner mock effects must keep probabilities in (0, 1]");
}

std::vector<std::pair<std::size_t, std::size_t>> PlannerMock::tokenize(std::string_view text) {
    auto word = [](unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; };
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
        if (i == text.size() || text[i] == '\n') {
            if (i == start) ++i;  // the newline itself
        } else if (word(static_cast<unsigned char>(text[i]))) {
            while (i < text.size() && word(static_cast<unsigned char>(text[i]))) ++i;
        } else {
            ++i;
        }
        out.emplace_back(start, i);
    }
    return out;
}

namespace {

struct Relevant {
    std::vector<std::string> constraints;
    std::vector<std::string> insights;
};

// Constraint sentences and reference insights that talk about each action.
const Relevant& relevant_to(bw::ActionKind kind) {
    static const std::vector<Relevant> table = [] {
        std::vector<Relevant> out(4);
        for (auto k : {bw::ActionKind::PickUp, bw::ActionKind::PutDown, bw::ActionKind::Stack, bw::ActionKind::Unstack}) {
            auto& r = out[static_cast<std::size_t>(k)];
            for (const auto& s : constraint_sentences())
                if (mentions(s, k)) r.constraints.push_back(s);
            for (const auto& s : memory::blocksworld_reference_insights())
                if (mentions(s, k)) r.insights.push_back(s);
        }
        return out;
    }();
    return table[static_cast<std::size_t>(kind)];
}

std::optional<bw::ParsedPlan> try_parse(std::string_view text) {
    try {
        return bw::parse_plan_text(text);
    } catch (const Error&) {
        return std::nullopt;
    }
}

}  // namespace

double PlannerMock::probability_at(std::string_view prompt, const std::optional<bw::ParsedPlan>& parsed,
                                   std::size_t start) const {
    if (!parsed) return cfg_.filler_prob;
    std::size_t step = 0;
    for (std::size_t k = 0; k < parsed->steps.size(); ++k)
        if (parsed->steps[k].line.contains(start)) step = k + 1;
    if (step == 0) return cfg_.filler_prob;
    const Relevant& rel = relevant_to(parsed->steps[step - 1].action.kind);

    double p = cfg_.base;
    if (prompt.find("My goal is to have that") == std::string_view::npos)
        p -= cfg_.question_amplitude * std::pow(cfg_.question_decay, static_cast<double>(step));
    if (prompt.find("Here are the actions I can do") == std::string_view::npos) p -= cfg_.action_defs_effect;
    for (const auto& sentence : rel.constraints)
        if (prompt.find(sentence) == std::string_view::npos) p -= cfg_.constraint_effect;
    for (const auto& insight : rel.insights)
        if (prompt.find(insight) == std::string_view::npos) p -= cfg_.memory_effect;
    return p;
}

double PlannerMock::token_probability(std::string_view prompt, std::string_view target, std::size_t start) const {
    return probability_at(prompt, try_parse(target), start);
}

std::string PlannerMock::generate(const std::string& prompt, std::size_t max_tokens) {
    std::string text;
    if (prompt.find("Action on Current Insight Set:") != std::string::npos) {
        text = insight_actions_response(prompt, cfg_.seed);
    } else {
        std::optional<bw::Plan> plan;
        try {
            plan = bw::solve_bfs(bw::parse_question(prompt));
        } catch (const Error&) {
        }
        if (!plan) {
            text = "I cannot solve this.";
        } else {
            const bool constrained = prompt.find("I have the following restrictions") != std::string::npos;
            const double rate = (constrained ? cfg_.error_per_step : cfg_.error_per_step_no_constraints) *
                                static_cast<double>(plan->size());
            const std::uint64_t h = fnv1a64(prompt, cfg_.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
            if (!plan->empty() && unit(h) < rate) {
                const std::size_t at = (h >> 7) % plan->size();
                if ((h >> 3) % 2 == 0 || plan->size() < 2)
                    plan->erase(plan->begin() + static_cast<std::ptrdiff_t>(at));
                else
                    std::swap((*plan)[at], (*plan)[(at + 1) % plan->size()]);
            }
            if (prompt.find("[Chosen Insights]") != std::string::npos) {
                static const std::regex numbered(R"((?:Insight Set: |\n)(\d+)\. )");
                std::string ids;
                for (std::sregex_iterator it(prompt.begin(), prompt.end(), numbered), end; it != end; ++it)
                    ids += (ids.empty() ? "" : ", ") + (*it)[1].str();
                text = "[Chosen Insights] " + (ids.empty() ? std::string("none") : ids) + "\n";
            }
            text += "[Plan]\n" + (plan->empty() ? std::string("I cannot solve this.\n") : bw::render_plan(*plan));
        }
    }
    const auto tokens = tokenize(text);
    if (tokens.size() > max_tokens) text.resize(tokens[max_tokens - 1].second);
    return text;
}

TokenScores PlannerMock::score(const ScoreRequest& request) {
    ++score_calls_;
    const auto parsed = try_parse(request.target);
    const std::string_view target = request.target;
    TokenScores out;
    for (const auto& [b, e] : tokenize(target)) {
        out.tokens.push_back({std::string(target.substr(b, e - b)),
                              std::min(0.0, std::log(probability_at(request.prompt, parsed, b))), b, e});
    }
    return out;
}

}  // namespace planattr::lm
