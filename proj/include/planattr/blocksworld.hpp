#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "planattr/error.hpp"

namespace planattr::bw {

using Block = std::string;

// Colour palette used for generated instances, in generation order.
const std::vector<std::string>& block_palette();

struct WorldState {
    std::map<Block, Block> on;  // block -> block it sits directly on
    std::set<Block> on_table;
    std::optional<Block> holding;

    bool contains(const Block& b) const;
    bool clear(const Block& b) const;
    bool hand_empty() const { return !holding.has_value(); }
    std::vector<Block> blocks() const;  // sorted

    bool operator==(const WorldState&) const = default;
};

enum class ActionKind { PickUp, PutDown, Stack, Unstack };

std::string_view to_string(ActionKind kind);

struct Action {
    ActionKind kind = ActionKind::PickUp;
    Block block;   // the moved block
    Block target;  // the lower block for Stack / Unstack, empty otherwise

    static Action pick_up(Block b) { return {ActionKind::PickUp, std::move(b), {}}; }
    static Action put_down(Block b) { return {ActionKind::PutDown, std::move(b), {}}; }
    static Action stack(Block a, Block b) { return {ActionKind::Stack, std::move(a), std::move(b)}; }
    static Action unstack(Block a, Block b) { return {ActionKind::Unstack, std::move(a), std::move(b)}; }

    bool operator==(const Action&) const = default;
};

using Plan = std::vector<Action>;

struct GoalAtom {
    enum class Type { On, OnTable };
    Type type = Type::On;
    Block block;
    Block below;  // only for On

    bool operator==(const GoalAtom&) const = default;
};

struct Instance {
    std::string id;
    std::vector<Block> blocks;
    WorldState initial;
    std::vector<GoalAtom> goal;

    bool operator==(const Instance&) const = default;
};

enum class Violation {
    HandNotEmpty,
    NotClear,
    NotOnTable,
    NotOnTop,
    NotHolding,
    TargetNotClear,
    UnknownBlock,
};

std::string_view to_string(Violation v);

class IllegalAction : public Error {
public:
    IllegalAction(Violation v, const std::string& message)
        : Error(ErrorKind::IllegalAction, message), violation_(v) {}
    Violation violation() const noexcept { return violation_; }

private:
    Violation violation_;
};

struct ValidationReport {
    bool ok = false;
    std::optional<std::size_t> failure_index;  // 1-based
    std::optional<Violation> violation;
    bool goal_satisfied = false;
    WorldState final_state;
};

// Returns the first violated precondition, or nullopt when the action is legal.
std::optional<Violation> check_legal(const WorldState& state, const Action& action);
inline bool is_legal(const WorldState& state, const Action& action) {
    return !check_legal(state, action).has_value();
}

// Throws IllegalAction when the action's preconditions do not hold.
WorldState apply_action(const WorldState& state, const Action& action);

bool satisfies(const WorldState& state, const std::vector<GoalAtom>& goal);

ValidationReport validate_plan(const Instance& instance, const Plan& plan);

// Breadth-first search over the full state space. Successors are expanded in
// the order PickUp < PutDown < Stack < Unstack with blocks in lexical order,
// so the returned plan is deterministic.
std::optional<Plan> solve_bfs(const Instance& instance, std::size_t max_depth = 64);

// Throws GenerationExhausted when no instance with the requested optimum is
// found within a bounded number of attempts.
Instance generate_instance(std::size_t n_blocks, std::uint64_t seed, std::size_t min_optimal);

struct DatasetOptions {
    std::size_t count = 10;
    std::size_t min_blocks = 3;
    std::size_t max_blocks = 3;
    std::size_t min_optimal = 1;
    std::uint64_t seed = 1;
};

std::vector<Instance> generate_dataset(const DatasetOptions& options);

// Byte span [begin, end) into some text.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool intersects(const Span& o) const { return begin < o.end && o.begin < end; }
    bool contains(std::size_t pos) const { return begin <= pos && pos < end; }
    bool operator==(const Span&) const = default;
};

struct ParsedStep {
    Action action;
    Span line;                  // the whole line including its newline
    std::vector<Span> keywords; // verb phrase and "<name> block" phrases
};

struct ParsedPlan {
    Plan plan;
    std::vector<ParsedStep> steps;
    std::size_t skipped_lines = 0;
};

// Throws EmptyPlan when no line matches the action grammar.
ParsedPlan parse_plan_text(std::string_view text);

// One action per line, newline-terminated; parse_plan_text inverts it.
std::string render_plan(const Plan& plan);
std::string render_action(const Action& action);

struct RenderedInstance {
    std::string state_description;
    std::string question;
};

RenderedInstance render_instance(const Instance& instance);

// Recovers blocks, initial state, and goal from a rendered question. The id
// is not part of the rendering and is left empty.
Instance parse_question(std::string_view question);

// Throws InvalidInstance when the WorldState or goal invariants are broken.
void check_instance(const Instance& instance);

nlohmann::json to_json(const Instance& instance);
Instance instance_from_json(const nlohmann::json& j);

std::vector<Instance> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<Instance>& instances);

}  // namespace planattr::bw
