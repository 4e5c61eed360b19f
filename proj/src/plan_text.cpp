#include <algorithm>
#include <cctype>
#include <regex>

#include "planattr/blocksworld.hpp"

namespace planattr::bw {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

const std::regex& action_pattern() {
    static const std::regex re(
        R"(\b(pick\s+up|put\s+down|unstack|stack)\s+(?:the\s+)?(([A-Za-z0-9_-]+)\s+block)\b)"
        R"((?:\s+(?:from\s+on\s+top\s+of|from\s+on\s+top|from|on\s+top\s+of|on\s+top|onto|on)\s+(?:the\s+)?(([A-Za-z0-9_-]+)\s+block)\b)?)",
        std::regex::icase | std::regex::ECMAScript);
    return re;
}

std::optional<ActionKind> verb_kind(std::string verb) {
    verb = lower(verb);
    if (verb.rfind("pick", 0) == 0) return ActionKind::PickUp;
    if (verb.rfind("put", 0) == 0) return ActionKind::PutDown;
    if (verb == "unstack") return ActionKind::Unstack;
    if (verb == "stack") return ActionKind::Stack;
    return std::nullopt;
}

std::size_t find_plan_marker(std::string_view text) {
    const std::string low = lower(text);
    auto pos = low.find("[plan]");
    return pos == std::string::npos ? 0 : pos + 6;
}

}  // namespace

ParsedPlan parse_plan_text(std::string_view text) {
    ParsedPlan out;
    std::size_t pos = find_plan_marker(text);
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        const std::size_t line_end = eol == std::string_view::npos ? text.size() : eol + 1;
        const std::string line(text.substr(pos, line_end - pos));

        std::smatch m;
        bool parsed = false;
        if (std::regex_search(line, m, action_pattern())) {
            auto kind = verb_kind(m[1].str());
            const bool binary = kind == ActionKind::Stack || kind == ActionKind::Unstack;
            if (kind && binary == m[4].matched) {
                ParsedStep step;
                step.action = Action{*kind, m[3].str(), binary ? m[5].str() : std::string{}};
                step.line = {pos, line_end};
                auto span_of = [&](int g) {
                    const auto b = pos + static_cast<std::size_t>(m.position(g));
                    return Span{b, b + static_cast<std::size_t>(m.length(g))};
                };
                step.keywords.push_back(span_of(1));
                step.keywords.push_back(span_of(2));
                if (binary) step.keywords.push_back(span_of(4));
                out.plan.push_back(step.action);
                out.steps.push_back(std::move(step));
                parsed = true;
            }
        }
        if (!parsed && line.find_first_not_of(" \t\r\n") != std::string::npos) ++out.skipped_lines;
        pos = line_end;
    }
    if (out.plan.empty()) throw Error(ErrorKind::EmptyPlan, "no plan steps could be parsed");
    return out;
}

std::string render_action(const Action& a) {
    switch (a.kind) {
        case ActionKind::PickUp: return "pick up the " + a.block + " block";
        case ActionKind::PutDown: return "put down the " + a.block + " block";
        case ActionKind::Stack: return "stack the " + a.block + " block on top of the " + a.target + " block";
        case ActionKind::Unstack: return "unstack the " + a.block + " block from on top of the " + a.target + " block";
    }
    return {};
}

std::string render_plan(const Plan& plan) {
    std::string out;
    for (const auto& a : plan) out += render_action(a) + "\n";
    return out;
}

namespace {

std::string join_facts(const std::vector<std::string>& facts) {
    std::string out;
    for (std::size_t i = 0; i < facts.size(); ++i) {
        if (i > 0) out += (i + 1 == facts.size()) ? " and " : ", ";
        out += facts[i];
    }
    return out;
}

std::string goal_fact(const GoalAtom& g) {
    if (g.type == GoalAtom::Type::OnTable) return "the " + g.block + " block is on the table";
    return "the " + g.block + " block is on top of the " + g.below + " block";
}

constexpr std::string_view kInitialLead = "As initial conditions I have that, ";
constexpr std::string_view kGoalLead = "My goal is to have that ";
constexpr std::string_view kAsk = "What is the plan to achieve my goal?";

std::vector<std::string> split_facts(std::string_view s) {
    static const std::regex sep(R"(, | and )");
    std::string str(s);
    std::vector<std::string> out;
    for (std::sregex_token_iterator it(str.begin(), str.end(), sep, -1), end; it != end; ++it)
        if (it->length() > 0) out.push_back(it->str());
    return out;
}

}  // namespace

RenderedInstance render_instance(const Instance& inst) {
    const WorldState& s = inst.initial;
    const auto blocks = s.blocks();
    std::vector<std::string> facts;
    for (const auto& b : blocks)
        if (s.clear(b)) facts.push_back("the " + b + " block is clear");
    facts.push_back(s.holding ? "I am holding the " + *s.holding + " block" : "the hand is empty");
    for (const auto& [b, below] : s.on) facts.push_back("the " + b + " block is on top of the " + below + " block");
    for (const auto& b : s.on_table) facts.push_back("the " + b + " block is on the table");

    std::vector<std::string> goals;
    for (const auto& g : inst.goal) goals.push_back(goal_fact(g));

    RenderedInstance r;
    r.state_description = std::string(kInitialLead) + join_facts(facts) + ".";
    r.question = r.state_description + "\n" + std::string(kGoalLead) + join_facts(goals) + ".\n\n" + std::string(kAsk);
    return r;
}

Instance parse_question(std::string_view q) {
    auto fail = [](const std::string& why) { return Error(ErrorKind::InvalidInstance, "cannot parse question: " + why); };
    const auto init = q.find(kInitialLead);
    if (init == std::string_view::npos) throw fail("missing initial conditions");
    const auto init_begin = init + kInitialLead.size();
    const auto init_end = q.find(".\n", init_begin);
    if (init_end == std::string_view::npos) throw fail("unterminated initial conditions");
    const auto goal = q.find(kGoalLead, init_end);
    if (goal == std::string_view::npos) throw fail("missing goal");
    const auto goal_begin = goal + kGoalLead.size();
    const auto goal_end = q.find('.', goal_begin);
    if (goal_end == std::string_view::npos) throw fail("unterminated goal");

    static const std::regex clear_re(R"(the (\S+) block is clear)");
    static const std::regex holding_re(R"(I am holding the (\S+) block)");
    static const std::regex on_re(R"(the (\S+) block is on top of the (\S+) block)");
    static const std::regex table_re(R"(the (\S+) block is on the table)");

    Instance inst;
    std::smatch m;
    for (const auto& fact : split_facts(q.substr(init_begin, init_end - init_begin))) {
        if (std::regex_match(fact, m, on_re)) {
            inst.initial.on[m[1]] = m[2];
        } else if (std::regex_match(fact, m, table_re)) {
            inst.initial.on_table.insert(m[1]);
        } else if (std::regex_match(fact, m, holding_re)) {
            inst.initial.holding = m[1];
        } else if (fact != "the hand is empty" && !std::regex_match(fact, m, clear_re)) {
            throw fail("unrecognised fact '" + fact + "'");
        }
    }
    for (const auto& fact : split_facts(q.substr(goal_begin, goal_end - goal_begin))) {
        if (std::regex_match(fact, m, on_re)) {
            inst.goal.push_back({GoalAtom::Type::On, m[1], m[2]});
        } else if (std::regex_match(fact, m, table_re)) {
            inst.goal.push_back({GoalAtom::Type::OnTable, m[1], {}});
        } else {
            throw fail("unrecognised goal '" + fact + "'");
        }
    }
    inst.blocks = inst.initial.blocks();
    check_instance(inst);
    return inst;
}

}  // namespace planattr::bw
