#include "planattr/memory.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "planattr/prompt.hpp"

namespace planattr::memory {

const Insight* InsightSet::find(std::int64_t id) const {
    auto it = std::lower_bound(insights_.begin(), insights_.end(), id,
                               [](const Insight& i, std::int64_t v) { return i.id < v; });
    return (it != insights_.end() && it->id == id) ? &*it : nullptr;
}

Insight& InsightSet::at(std::int64_t id) {
    if (!find(id)) throw Error(ErrorKind::UnknownInsight, "no insight " + std::to_string(id));
    return const_cast<Insight&>(*find(id));
}

std::int64_t InsightSet::add(std::string content, std::int64_t votes) {
    if (content.empty()) throw Error(ErrorKind::ConfigError, "insight content must be non-empty");
    const std::int64_t id = next_id_++;
    insights_.push_back({id, std::move(content), votes});
    return id;
}

nlohmann::json InsightSet::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& i : insights_) arr.push_back({{"id", i.id}, {"content", i.content}, {"votes", i.votes}});
    return {{"next_id", next_id_}, {"insights", arr}};
}

InsightSet InsightSet::from_json(const nlohmann::json& j) {
    InsightSet set;
    try {
        set.next_id_ = j.at("next_id").get<std::int64_t>();
        for (const auto& e : j.at("insights")) {
            Insight i{e.at("id").get<std::int64_t>(), e.at("content").get<std::string>(), e.at("votes").get<std::int64_t>()};
            if (i.content.empty()) throw Error(ErrorKind::ConfigError, "insight content must be non-empty");
            if (!set.insights_.empty() && i.id <= set.insights_.back().id)
                throw Error(ErrorKind::ConfigError, "insight ids must be strictly increasing");
            if (i.id >= set.next_id_) throw Error(ErrorKind::ConfigError, "insight id not below next_id");
            set.insights_.push_back(std::move(i));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("malformed insight store: ") + e.what());
    }
    return set;
}

std::string_view to_string(InsightAction::Kind kind) {
    switch (kind) {
        case InsightAction::Kind::Add: return "Add";
        case InsightAction::Kind::Edit: return "Edit";
        case InsightAction::Kind::Support: return "Support";
        case InsightAction::Kind::Oppose: return "Oppose";
    }
    return "?";
}

InsightSet apply_action(const InsightSet& set, const InsightAction& action) {
    InsightSet next = set;
    switch (action.kind) {
        case InsightAction::Kind::Add: next.add(action.content); break;
        case InsightAction::Kind::Edit:
            if (action.content.empty()) throw Error(ErrorKind::ConfigError, "edit needs content");
            next.at(action.id).content = action.content;
            break;
        case InsightAction::Kind::Support: ++next.at(action.id).votes; break;
        case InsightAction::Kind::Oppose: --next.at(action.id).votes; break;
    }
    return next;
}

std::vector<Insight> visible(const InsightSet& set, std::int64_t threshold) {
    std::vector<Insight> out;
    for (const auto& i : set.insights())
        if (i.votes > threshold) out.push_back(i);
    return out;
}

ParsedInsightActions parse_insight_actions(std::string_view text) {
    static const std::regex line_re(
        R"(^\s*\[\s*(add|edit|modify|support|oppose)\s*\]\s*\[\s*insight\s*#?\s*(\d+)\s*\]\s*:?\s*(.*?)\s*$)",
        std::regex::icase);
    static const std::string header = "action on current insight set:";

    std::string body(text);
    std::string lowered = body;
    std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](unsigned char c) { return std::tolower(c); });
    // The learning prompts also contain "Legal Action on Current Insight
    // Set:"; only the last header belongs to the response section.
    if (auto pos = lowered.rfind(header); pos != std::string::npos) body = body.substr(pos + header.size());

    ParsedInsightActions out;
    std::istringstream in(body);
    std::string line;
    std::smatch m;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (line.find("[Finished]") != std::string::npos) break;
        if (!std::regex_match(line, m, line_re)) {
            ++out.skipped_lines;
            continue;
        }
        std::string verb = m[1];
        std::transform(verb.begin(), verb.end(), verb.begin(), [](unsigned char c) { return std::tolower(c); });
        const std::int64_t id = std::stoll(m[2]);
        std::string content = m[3];
        if (verb == "add") {
            if (content.empty()) {
                ++out.skipped_lines;
                continue;
            }
            out.actions.push_back(InsightAction::add(content));
        } else if (verb == "edit" || verb == "modify") {
            if (content.empty()) {
                ++out.skipped_lines;
                continue;
            }
            out.actions.push_back(InsightAction::edit(id, content));
        } else if (verb == "support") {
            out.actions.push_back(InsightAction::support(id));
        } else {
            out.actions.push_back(InsightAction::oppose(id));
        }
    }
    return out;
}

std::string dump(const InsightSet& set) { return set.to_json().dump(2) + "\n"; }

InsightSet load_insights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open insight store '" + path + "'");
    try {
        return InsightSet::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, "insight store '" + path + "': " + e.what());
    }
}

void save_insights(const std::string& path, const InsightSet& set) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write insight store '" + path + "'");
    out << dump(set);
}

const std::vector<std::string>& blocksworld_reference_insights() {
    static const std::vector<std::string> insights = {
        "Only pick up or unstack one block at a time, ensuring your hand is empty before doing so.",
        "A block can be picked up or unstacked only if it's clear and on the table.",
        "A block is clear if it has no blocks on top and is not currently being held.",
        "When unstacking, ensure the block you're removing is actually on top and clear.",
        "After picking up or unstacking a block, you must hold it until it's placed down or stacked.",
        "You can only place a block you're holding, and stacking can only occur if the target block is clear.",
        "Once a block is placed down or stacked, your hand becomes empty, and the block below a newly stacked one "
        "is no longer clear.",
    };
    return insights;
}

const std::vector<std::string>& travelplanner_reference_insights() {
    static const std::vector<std::string> insights = {
        "Verify transportation and attraction availability before planning and provide alternatives if needed.",
        "Ensure all plan details and activities are based on available data within the designated environment to "
        "avoid inaccuracies.",
        "Include all essential details, such as accommodations and daily activities, ensuring they align logically "
        "with the planned city and timeline.",
        "Maintain diversity by avoiding repetition of restaurant or attraction choices throughout the trip.",
        "Ensure transportation methods are consistent and logical within the trip's context, avoiding conflicting "
        "options like self-driving and flights.",
        "Follow any specified minimum night stay requirements when booking accommodations.",
        "Plan activities, accommodations, and meals to align with the user's budget constraints.",
        "Ensure accommodations comply with specific rules and preferences, including room type and restrictions on "
        "parties, smoking, pets, or visitors.",
        "Adjust transportation options and other preferences according to the user's specified requirements, such "
        "as avoiding flights or self-driving.",
        "Opt for budget-friendly accommodations, restaurants, and transportation methods.",
    };
    return insights;
}

InsightSet reference_set(std::int64_t votes) {
    InsightSet set;
    for (const auto& s : blocksworld_reference_insights()) set.add(s, votes);
    return set;
}

std::vector<std::string> format_for_prompt(const std::vector<Insight>& insights) {
    std::vector<std::string> out;
    for (const auto& i : insights)
        out.push_back(std::to_string(i.id) + ". " + i.content + " [" + std::to_string(i.votes) + "]");
    return out;
}

std::string format_for_learning(const InsightSet& set) {
    if (set.empty()) return "(empty)";
    std::string out;
    for (const auto& i : set.insights()) {
        if (!out.empty()) out += "\n";
        out += "[Insight " + std::to_string(i.id) + "] (votes: " + std::to_string(i.votes) + "): " + i.content;
    }
    return out;
}

InferenceResponse parse_inference_response(std::string_view text) {
    static const std::string chosen_marker = "[Chosen Insights]";
    static const std::string plan_marker = "[Plan]";
    InferenceResponse r;
    const auto chosen = text.find(chosen_marker);
    const auto plan = text.find(plan_marker);

    if (plan == std::string_view::npos) {
        r.plan_offset = chosen == std::string_view::npos ? 0 : chosen + chosen_marker.size();
        r.plan_text = std::string(text.substr(r.plan_offset));
    } else if (chosen != std::string_view::npos && chosen > plan) {
        r.markers_reversed = true;
        r.plan_offset = plan + plan_marker.size();
        r.plan_text = std::string(text.substr(r.plan_offset, chosen - r.plan_offset));
    } else {
        r.plan_offset = plan + plan_marker.size();
        r.plan_text = std::string(text.substr(r.plan_offset));
        if (chosen != std::string_view::npos) {
            const auto begin = chosen + chosen_marker.size();
            r.chosen_text = std::string(text.substr(begin, plan - begin));
            static const std::regex number(R"(\d+)");
            for (std::sregex_iterator it(r.chosen_text.begin(), r.chosen_text.end(), number), end; it != end; ++it)
                r.chosen_ids.push_back(std::stoll(it->str()));
        }
    }
    r.plan = bw::parse_plan_text(r.plan_text);
    return r;
}

std::string_view to_string(LearnMode mode) {
    switch (mode) {
        case LearnMode::BehavioralCloning: return "behavioral_cloning";
        case LearnMode::OracleFeedback: return "oracle_feedback";
        case LearnMode::Reference: return "reference";
    }
    return "?";
}

LearnMode learn_mode_from_string(std::string_view s) {
    if (s == "behavioral_cloning" || s == "bc") return LearnMode::BehavioralCloning;
    if (s == "oracle_feedback" || s == "of") return LearnMode::OracleFeedback;
    if (s == "reference") return LearnMode::Reference;
    throw Error(ErrorKind::ConfigError, "unknown learning mode '" + std::string(s) + "'");
}

std::string_view behavioral_cloning_template() {
    return R"(You are tasked with analyzing both successful and failed plans from previous attempts based on a specific query and background information. These failed plans are presented in chronological order, with the most recent plan including a detailed trajectory. As these plans fail to meet certain constraints, you are encouraged to refine the insights to improve them.

Use the following format to systematically analyze failed plans:
[State]: Describe the current situation, including factors like remaining budget, time constraints, and any other specified conditions in the query or provided information.
[Thought]: Explain the reasoning behind your decisions, considering the current state.
[Action]: Detail the specific parts of your plan in response to the [State] and [Thought].

For the successful plan, add a [Best Practice] section after the final analysis to summarize the key experiences and practices that led to success.
For the failed plan, add an [Error] section immediately after each defective [Action]. This section should identify and explain why the chosen actions or used insights were inappropriate, given the [State] and [Thought].

After evaluating the plans and previous insights, refine the current insight set based on findings from previous attempts and newly identified errors.

Your task involves adding, editing, supporting, and opposing insights from the existing set:
[Add]: Integrate new pairs that are missing in the current set. Add new ones only when absolutely necessary.
[Edit]: Revise pairs that are incomplete or partially incorrect. Editing an insight retains its number of votes.
[Support]: Endorsing specific pairs to emphasize their value. Increase the number of votes for the supported pair by 1 each time. Some previously used insights might have been edited (with the same index). If you support the new version, vote for it.
[Oppose]: Challenging insights that are incorrect, outdated, or only applicable under specific conditions. This will decrease the number of votes by 1 each time.

Opposing and editing are highly encouraged to resolve any conflicting insights. Avoid proposing insights with similar purposes.

Legal Action on Current Insight Set:
[Add/Edit/Support/Oppose] [Insight 1]: [Content].

Insight Set:
{insight_set}
-----
Task Instruction: {task}
-----

Successful Plan: 
{successful_plan}

Failed Plans:
{failed_plan}

Last Failed Plan Trajectory:
{trajectory}

Please use the following format for your response (do not output in the markdown style):
Successful Plan Analysis:
Failed Plan Analysis:
Action on Current Insight Set:
[Finished])";
}

std::string_view oracle_feedback_template() {
    return R"(You are tasked with analyzing failed plans from previous attempts, along with their evaluation results, based on a specific query and background information. These failed plans are presented in chronological order, with the most recent plan including a detailed trajectory. As these plans fail to meet certain constraints, you are encouraged to refine the insights to improve them.

Use the following format to systematically analyze failed plans:
[State]: Describe the current situation, including factors like remaining budget, time constraints, and any other specified conditions in the query or provided information.
[Thought]: Explain the reasoning behind your decisions, considering the current state.
[Action]: Detail the specific parts of your plan in response to the [State] and [Thought].

For the failed plan, add an [Error] section immediately after each defective [Action]. This section should identify and explain why the chosen actions or used insights were inappropriate, given the [State] and [Thought].

After evaluating the plans and previous insights, refine the current insight set based on findings from previous attempts and newly identified errors.

Your task involves adding, editing, supporting, and opposing insights from the existing set:
[Add]: Integrate new pairs that are missing in the current set. Add new ones only when absolutely necessary.
[Edit]: Revise pairs that are incomplete or partially incorrect. Editing an insight retains its number of votes.
[Support]: Endorsing specific pairs to emphasize their value. Increase the number of votes for the supported pair by 1 each time. Some previously used insights might have been edited (with the same index). If you support the new version, vote for it.
[Oppose]: Challenging insights that are incorrect, outdated, or only applicable under specific conditions. This will decrease the number of votes by 1 each time.

Opposing and editing are highly encouraged to resolve any conflicting insights. Avoid proposing insights with similar purposes.
Note: Ensure that the insights are high-level and generalizable, rather than detailed and specific to particular queries. Make sure your contributions do not introduce unrelated insights or go beyond the scope of the provided information.

Legal Action on Current Insight Set:
[Add/Edit/Support/Oppose] [Insight 1]: [Content].

Insight Set:
{insight_set}
-----
Task Instruction: {task}
-----
Failed Plans:
{failed_plan}

Evaluation Results:
{eval_results}

Last Failed Plan Trajectory:
{trajectory}

Please use the following format for your response (do not output in the markdown style):
Failed Plan Analysis:
Action on Current Insight Set:
[Finished])";
}

std::string describe_trajectory(const bw::Instance& instance, const bw::Plan& plan) {
    if (plan.empty()) return "No actions could be parsed from the plan.";
    std::string out;
    bw::WorldState state = instance.initial;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        out += "Step " + std::to_string(i + 1) + ": " + bw::render_action(plan[i]);
        if (auto v = bw::check_legal(state, plan[i])) {
            out += " -> illegal (" + std::string(bw::to_string(*v)) + ")\n";
            return out + "Execution stopped.";
        }
        state = bw::apply_action(state, plan[i]);
        out += " -> ok\n";
    }
    return out + (bw::satisfies(state, instance.goal) ? "Goal reached." : "Goal not reached.");
}

std::string describe_evaluation(const bw::Instance& instance, const std::optional<bw::Plan>& plan) {
    if (!plan || plan->empty()) return "No valid plan steps were found in the response.";
    const auto report = bw::validate_plan(instance, *plan);
    if (report.failure_index) {
        const auto i = *report.failure_index;
        return "The plan is invalid: step " + std::to_string(i) + " (" + bw::render_action((*plan)[i - 1]) +
               ") violates " + std::string(bw::to_string(*report.violation)) + ".";
    }
    if (!report.goal_satisfied) return "The plan is executable but does not reach the goal.";
    return "The plan is valid and reaches the goal.";
}

namespace {

std::string fill(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values) {
    std::string out(tmpl);
    for (const auto& [name, value] : values) {
        const std::string key = "{" + name + "}";
        for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
            out.replace(pos, key.size(), value);
    }
    return out;
}

std::string task_text(const bw::Instance& instance) {
    const auto in = prompt::blocksworld_inputs(instance, true);
    return in.action_defs + "\n\n" + *in.constraints + "\n\n" + in.question;
}

}  // namespace

LearnResult learn_loop(lm::Gateway& gateway, const std::vector<bw::Instance>& train, const LearnConfig& config,
                       InsightSet set) {
    LearnResult result;
    if (config.mode == LearnMode::Reference) {
        result.set = config.reference_path ? load_insights(*config.reference_path) : reference_set();
        result.transcript.push_back({{"mode", "reference"}, {"insights", result.set.size()}});
        return result;
    }
    if (config.rounds < 1) throw Error(ErrorKind::ConfigError, "learning needs at least one round");

    std::vector<std::string> gold(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto plan = bw::solve_bfs(train[i]);
        if (!plan) throw Error(ErrorKind::SolverFailure, "no ground-truth plan for '" + train[i].id + "'");
        gold[i] = bw::render_plan(*plan);
    }
    std::vector<std::vector<std::string>> failures(train.size());

    for (std::size_t round = 1; round <= config.rounds; ++round) {
        // Agents plan against the insight set as it stood at the start of the round.
        const auto shown = format_for_prompt(visible(set, config.threshold));
        struct Attempt {
            std::string output;
            std::optional<bw::Plan> plan;
            bool ok = false;
            std::optional<std::string> error;
        };
        std::vector<Attempt> attempts(train.size());
        for (std::size_t i = 0; i < train.size(); ++i) {
            auto in = prompt::blocksworld_inputs(train[i], true);
            in.insights = shown;
            try {
                attempts[i].output = gateway.generate(prompt::assemble(in, false).rendered(), config.max_tokens);
                try {
                    attempts[i].plan = parse_inference_response(attempts[i].output).plan.plan;
                    attempts[i].ok = bw::validate_plan(train[i], *attempts[i].plan).ok;
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::EmptyPlan) throw;
                }
            } catch (const Error& e) {
                attempts[i].error = e.what();
            }
        }

        for (std::size_t i = 0; i < train.size(); ++i) {
            nlohmann::json entry = {{"round", round}, {"instance", train[i].id}};
            const Attempt& a = attempts[i];
            if (a.error) {
                entry["error"] = *a.error;
                result.transcript.push_back(entry);
                continue;
            }
            entry["agent_ok"] = a.ok;
            if (a.ok) {
                result.transcript.push_back(entry);
                continue;
            }
            failures[i].push_back(a.plan ? bw::render_plan(*a.plan) : a.output);
            std::string failed;
            for (std::size_t k = 0; k < failures[i].size(); ++k)
                failed += "Attempt " + std::to_string(k + 1) + ":\n" + failures[i][k] + (failures[i][k].ends_with('\n') ? "" : "\n");
            const std::string trajectory = describe_trajectory(train[i], a.plan.value_or(bw::Plan{}));

            std::string learn_prompt;
            if (config.mode == LearnMode::BehavioralCloning) {
                learn_prompt = fill(behavioral_cloning_template(), {{"insight_set", format_for_learning(set)},
                                                                    {"task", task_text(train[i])},
                                                                    {"successful_plan", gold[i]},
                                                                    {"failed_plan", failed},
                                                                    {"trajectory", trajectory}});
            } else {
                learn_prompt = fill(oracle_feedback_template(), {{"insight_set", format_for_learning(set)},
                                                                 {"task", task_text(train[i])},
                                                                 {"failed_plan", failed},
                                                                 {"eval_results", describe_evaluation(train[i], a.plan)},
                                                                 {"trajectory", trajectory}});
            }
            try {
                const std::string response = gateway.generate(learn_prompt, config.max_tokens);
                const auto parsed = parse_insight_actions(response);
                entry["skipped_lines"] = parsed.skipped_lines;
                nlohmann::json applied = nlohmann::json::array();
                nlohmann::json rejected = nlohmann::json::array();
                for (const auto& action : parsed.actions) {
                    const nlohmann::json desc = {{"kind", to_string(action.kind)}, {"id", action.id}, {"content", action.content}};
                    try {
                        set = apply_action(set, action);
                        applied.push_back(desc);
                    } catch (const Error&) {
                        rejected.push_back(desc);
                    }
                }
                entry["applied"] = applied;
                entry["rejected"] = rejected;
            } catch (const Error& e) {
                entry["error"] = e.what();
            }
            result.transcript.push_back(entry);
        }
    }
    result.set = std::move(set);
    return result;
}

}  // namespace planattr::memory
