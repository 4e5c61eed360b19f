#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "planattr/blocksworld.hpp"
#include "planattr/gateway.hpp"

namespace planattr::memory {

struct Insight {
    std::int64_t id = 0;
    std::string content;
    std::int64_t votes = 1;

    bool operator==(const Insight&) const = default;
};

// Insights ordered by id. Ids are assigned from next_id and never reused.
class InsightSet {
public:
    InsightSet() = default;

    const std::vector<Insight>& insights() const { return insights_; }
    std::int64_t next_id() const { return next_id_; }
    const Insight* find(std::int64_t id) const;
    bool empty() const { return insights_.empty(); }
    std::size_t size() const { return insights_.size(); }

    // Appends with votes=1 unless specified; returns the assigned id.
    std::int64_t add(std::string content, std::int64_t votes = 1);
    Insight& at(std::int64_t id);  // throws UnknownInsight

    static InsightSet from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    bool operator==(const InsightSet&) const = default;

private:
    std::vector<Insight> insights_;
    std::int64_t next_id_ = 1;
};

struct InsightAction {
    enum class Kind { Add, Edit, Support, Oppose };
    Kind kind = Kind::Add;
    std::int64_t id = 0;  // ignored for Add
    std::string content;  // Add / Edit only

    static InsightAction add(std::string c) { return {Kind::Add, 0, std::move(c)}; }
    static InsightAction edit(std::int64_t id, std::string c) { return {Kind::Edit, id, std::move(c)}; }
    static InsightAction support(std::int64_t id) { return {Kind::Support, id, {}}; }
    static InsightAction oppose(std::int64_t id) { return {Kind::Oppose, id, {}}; }

    bool operator==(const InsightAction&) const = default;
};

std::string_view to_string(InsightAction::Kind kind);

// Add inserts with one vote, Edit keeps the vote count, Support/Oppose move it
// by one with no floor. Throws UnknownInsight for a missing id.
InsightSet apply_action(const InsightSet& set, const InsightAction& action);

inline constexpr std::int64_t kDefaultVisibilityThreshold = 5;

// Insights whose votes are strictly greater than the threshold, in id order.
std::vector<Insight> visible(const InsightSet& set, std::int64_t threshold = kDefaultVisibilityThreshold);

struct ParsedInsightActions {
    std::vector<InsightAction> actions;
    std::size_t skipped_lines = 0;
};

// Reads "[Verb] [Insight n]: content" lines following the
// "Action on Current Insight Set:" header (or the whole text without one).
ParsedInsightActions parse_insight_actions(std::string_view text);

// Serialized form is stable: save -> load -> save is byte-identical.
std::string dump(const InsightSet& set);
InsightSet load_insights(const std::string& path);
void save_insights(const std::string& path, const InsightSet& set);

// Human-written BlocksWorld insights, in their original order.
const std::vector<std::string>& blocksworld_reference_insights();
const std::vector<std::string>& travelplanner_reference_insights();
inline constexpr std::int64_t kReferenceSeedVotes = 6;
InsightSet reference_set(std::int64_t votes = kReferenceSeedVotes);

// "<id>. <content> [<votes>]" per insight, for the inference prompt.
std::vector<std::string> format_for_prompt(const std::vector<Insight>& insights);
// "[Insight <id>] (votes: <n>): <content>" lines for the learning prompts.
std::string format_for_learning(const InsightSet& set);

struct InferenceResponse {
    std::vector<std::int64_t> chosen_ids;
    std::string chosen_text;
    std::string plan_text;
    std::size_t plan_offset = 0;  // of plan_text within the response
    bw::ParsedPlan plan;          // offsets relative to plan_text
    bool markers_reversed = false;
};

// Splits on [Chosen Insights] and [Plan]; throws EmptyPlan when the plan
// region holds no parsable step.
InferenceResponse parse_inference_response(std::string_view text);

enum class LearnMode { BehavioralCloning, OracleFeedback, Reference };

std::string_view to_string(LearnMode mode);
LearnMode learn_mode_from_string(std::string_view s);

struct LearnConfig {
    LearnMode mode = LearnMode::BehavioralCloning;
    std::size_t rounds = 1;
    std::size_t max_tokens = 512;
    std::int64_t threshold = kDefaultVisibilityThreshold;
    std::optional<std::string> reference_path;  // Reference mode; shipped set when unset
};

struct LearnResult {
    InsightSet set;
    nlohmann::json transcript = nlohmann::json::array();
};

std::string_view behavioral_cloning_template();
std::string_view oracle_feedback_template();

// Step-by-step execution trace and evaluator verdict used in learning prompts.
std::string describe_trajectory(const bw::Instance& instance, const bw::Plan& plan);
std::string describe_evaluation(const bw::Instance& instance, const std::optional<bw::Plan>& plan);

LearnResult learn_loop(lm::Gateway& gateway, const std::vector<bw::Instance>& train, const LearnConfig& config,
                       InsightSet set);

}  // namespace planattr::memory
