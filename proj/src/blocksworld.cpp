#include "planattr/blocksworld.hpp"

#include <algorithm>
#include <deque>
#include <random>
#include <unordered_map>

namespace planattr::bw {

const std::vector<std::string>& block_palette() {
    static const std::vector<std::string> palette = {
        "red", "blue", "orange", "yellow", "white", "magenta", "black", "cyan",
    };
    return palette;
}

std::string_view to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::PickUp: return "PickUp";
        case ActionKind::PutDown: return "PutDown";
        case ActionKind::Stack: return "Stack";
        case ActionKind::Unstack: return "Unstack";
    }
    return "?";
}

std::string_view to_string(Violation v) {
    switch (v) {
        case Violation::HandNotEmpty: return "HandNotEmpty";
        case Violation::NotClear: return "NotClear";
        case Violation::NotOnTable: return "NotOnTable";
        case Violation::NotOnTop: return "NotOnTop";
        case Violation::NotHolding: return "NotHolding";
        case Violation::TargetNotClear: return "TargetNotClear";
        case Violation::UnknownBlock: return "UnknownBlock";
    }
    return "?";
}

bool WorldState::contains(const Block& b) const {
    return on.count(b) > 0 || on_table.count(b) > 0 || holding == b;
}

bool WorldState::clear(const Block& b) const {
    if (holding == b) return false;
    return std::none_of(on.begin(), on.end(), [&](const auto& kv) { return kv.second == b; });
}

std::vector<Block> WorldState::blocks() const {
    std::vector<Block> out;
    for (const auto& [b, _] : on) out.push_back(b);
    out.insert(out.end(), on_table.begin(), on_table.end());
    if (holding) out.push_back(*holding);
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<Violation> check_legal(const WorldState& s, const Action& a) {
    if (!s.contains(a.block)) return Violation::UnknownBlock;
    const bool binary = a.kind == ActionKind::Stack || a.kind == ActionKind::Unstack;
    if (binary && !s.contains(a.target)) return Violation::UnknownBlock;

    switch (a.kind) {
        case ActionKind::PickUp:
            if (!s.hand_empty()) return Violation::HandNotEmpty;
            if (!s.clear(a.block)) return Violation::NotClear;
            if (!s.on_table.count(a.block)) return Violation::NotOnTable;
            return std::nullopt;
        case ActionKind::PutDown:
            if (s.holding != a.block) return Violation::NotHolding;
            return std::nullopt;
        case ActionKind::Stack:
            if (s.holding != a.block) return Violation::NotHolding;
            if (!s.clear(a.target)) return Violation::TargetNotClear;
            return std::nullopt;
        case ActionKind::Unstack: {
            if (!s.hand_empty()) return Violation::HandNotEmpty;
            auto it = s.on.find(a.block);
            if (it == s.on.end() || it->second != a.target) return Violation::NotOnTop;
            if (!s.clear(a.block)) return Violation::NotClear;
            return std::nullopt;
        }
    }
    return std::nullopt;
}

WorldState apply_action(const WorldState& state, const Action& action) {
    if (auto v = check_legal(state, action)) {
        throw IllegalAction(*v, std::string(to_string(*v)) + ": " + render_action(action));
    }
    WorldState next = state;
    switch (action.kind) {
        case ActionKind::PickUp:
            next.on_table.erase(action.block);
            next.holding = action.block;
            break;
        case ActionKind::PutDown:
            next.holding.reset();
            next.on_table.insert(action.block);
            break;
        case ActionKind::Stack:
            next.holding.reset();
            next.on[action.block] = action.target;
            break;
        case ActionKind::Unstack:
            next.on.erase(action.block);
            next.holding = action.block;
            break;
    }
    return next;
}

bool satisfies(const WorldState& state, const std::vector<GoalAtom>& goal) {
    return std::all_of(goal.begin(), goal.end(), [&](const GoalAtom& g) {
        if (g.type == GoalAtom::Type::OnTable) return state.on_table.count(g.block) > 0;
        auto it = state.on.find(g.block);
        return it != state.on.end() && it->second == g.below;
    });
}

ValidationReport validate_plan(const Instance& instance, const Plan& plan) {
    ValidationReport report;
    WorldState state = instance.initial;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (auto v = check_legal(state, plan[i])) {
            report.failure_index = i + 1;
            report.violation = *v;
            break;
        }
        state = apply_action(state, plan[i]);
    }
    report.goal_satisfied = satisfies(state, instance.goal);
    report.ok = !report.failure_index && report.goal_satisfied;
    report.final_state = std::move(state);
    return report;
}

namespace {

// Compact search state: for every block index, the index of the block below
// it, kTable, or kHeld.
constexpr std::uint8_t kTable = 0xFE;
constexpr std::uint8_t kHeld = 0xFF;

struct Encoding {
    std::vector<Block> names;  // sorted
    std::unordered_map<Block, std::uint8_t> index;

    explicit Encoding(std::vector<Block> blocks) : names(std::move(blocks)) {
        std::sort(names.begin(), names.end());
        for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<std::uint8_t>(i);
    }

    std::string encode(const WorldState& s) const {
        std::string key(names.size(), static_cast<char>(kTable));
        for (const auto& [b, below] : s.on) key[index.at(b)] = static_cast<char>(index.at(below));
        if (s.holding) key[index.at(*s.holding)] = static_cast<char>(kHeld);
        return key;
    }
};

std::uint8_t at(const std::string& key, std::size_t i) { return static_cast<std::uint8_t>(key[i]); }

bool key_clear(const std::string& key, std::size_t b) {
    if (at(key, b) == kHeld) return false;
    for (std::size_t i = 0; i < key.size(); ++i)
        if (at(key, i) == b) return false;
    return true;
}

bool key_hand_empty(const std::string& key) {
    return std::none_of(key.begin(), key.end(), [](char c) { return static_cast<std::uint8_t>(c) == kHeld; });
}

struct CompactGoal {
    std::size_t block;
    std::uint8_t below;
};

bool key_satisfies(const std::string& key, const std::vector<CompactGoal>& goal) {
    return std::all_of(goal.begin(), goal.end(), [&](const CompactGoal& g) { return at(key, g.block) == g.below; });
}

struct Move {
    ActionKind kind;
    std::uint8_t a;
    std::uint8_t b;
};

// Successors in the fixed tie-breaking order.
template <typename Visit>
void for_each_successor(const std::string& key, Visit&& visit) {
    const std::size_t n = key.size();
    const bool empty = key_hand_empty(key);
    std::string next;
    if (empty) {
        for (std::size_t b = 0; b < n; ++b) {
            if (at(key, b) == kTable && key_clear(key, b)) {
                next = key;
                next[b] = static_cast<char>(kHeld);
                visit(Move{ActionKind::PickUp, static_cast<std::uint8_t>(b), 0}, next);
            }
        }
    } else {
        std::size_t held = 0;
        while (at(key, held) != kHeld) ++held;
        next = key;
        next[held] = static_cast<char>(kTable);
        visit(Move{ActionKind::PutDown, static_cast<std::uint8_t>(held), 0}, next);
        for (std::size_t b = 0; b < n; ++b) {
            if (b != held && key_clear(key, b)) {
                next = key;
                next[held] = static_cast<char>(b);
                visit(Move{ActionKind::Stack, static_cast<std::uint8_t>(held), static_cast<std::uint8_t>(b)}, next);
            }
        }
    }
    if (empty) {
        for (std::size_t a = 0; a < n; ++a) {
            const std::uint8_t below = at(key, a);
            if (below < kTable && key_clear(key, a)) {
                next = key;
                next[a] = static_cast<char>(kHeld);
                visit(Move{ActionKind::Unstack, static_cast<std::uint8_t>(a), below}, next);
            }
        }
    }
}

Action to_action(const Move& m, const Encoding& enc) {
    switch (m.kind) {
        case ActionKind::PickUp: return Action::pick_up(enc.names[m.a]);
        case ActionKind::PutDown: return Action::put_down(enc.names[m.a]);
        case ActionKind::Stack: return Action::stack(enc.names[m.a], enc.names[m.b]);
        case ActionKind::Unstack: return Action::unstack(enc.names[m.a], enc.names[m.b]);
    }
    return {};
}

}  // namespace

std::optional<Plan> solve_bfs(const Instance& instance, std::size_t max_depth) {
    const Encoding enc(instance.initial.blocks());
    if (enc.names.size() >= kTable) throw Error(ErrorKind::InvalidInstance, "too many blocks for the solver");

    std::vector<CompactGoal> goal;
    for (const auto& g : instance.goal) {
        auto it = enc.index.find(g.block);
        if (it == enc.index.end()) return std::nullopt;
        if (g.type == GoalAtom::Type::OnTable) {
            goal.push_back({it->second, kTable});
        } else {
            auto below = enc.index.find(g.below);
            if (below == enc.index.end()) return std::nullopt;
            goal.push_back({it->second, below->second});
        }
    }

    struct Node {
        std::size_t parent;
        Move move;
        std::size_t depth;
    };
    const std::string start = enc.encode(instance.initial);
    if (key_satisfies(start, goal)) return Plan{};

    std::vector<Node> nodes{{0, {}, 0}};
    std::vector<std::string> keys{start};
    std::unordered_map<std::string, std::size_t> seen{{start, 0}};
    std::deque<std::size_t> frontier{0};

    auto unwind = [&](std::size_t id) {
        Plan plan;
        while (id != 0) {
            plan.push_back(to_action(nodes[id].move, enc));
            id = nodes[id].parent;
        }
        std::reverse(plan.begin(), plan.end());
        return plan;
    };

    while (!frontier.empty()) {
        const std::size_t current = frontier.front();
        frontier.pop_front();
        if (nodes[current].depth >= max_depth) continue;
        std::optional<std::size_t> found;
        const std::string key = keys[current];
        for_each_successor(key, [&](const Move& m, const std::string& next) {
            if (found || seen.count(next)) return;
            const std::size_t id = nodes.size();
            nodes.push_back({current, m, nodes[current].depth + 1});
            keys.push_back(next);
            seen.emplace(next, id);
            if (key_satisfies(next, goal)) {
                found = id;
                return;
            }
            frontier.push_back(id);
        });
        if (found) return unwind(*found);
    }
    return std::nullopt;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::size_t draw(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::vector<Action> legal_actions(const WorldState& s) {
    std::vector<Action> out;
    const auto blocks = s.blocks();
    for (const auto& b : blocks) {
        for (ActionKind k : {ActionKind::PickUp, ActionKind::PutDown}) {
            Action a{k, b, {}};
            if (is_legal(s, a)) out.push_back(a);
        }
        for (const auto& t : blocks) {
            if (t == b) continue;
            for (ActionKind k : {ActionKind::Stack, ActionKind::Unstack}) {
                Action a{k, b, t};
                if (is_legal(s, a)) out.push_back(a);
            }
        }
    }
    return out;
}

}  // namespace

Instance generate_instance(std::size_t n_blocks, std::uint64_t seed, std::size_t min_optimal) {
    const auto& palette = block_palette();
    if (n_blocks < 2 || n_blocks > palette.size())
        throw Error(ErrorKind::ConfigError, "n_blocks must be in [2, 8]");
    if (min_optimal < 1) throw Error(ErrorKind::ConfigError, "min_optimal must be >= 1");

    constexpr int kAttempts = 200;
    std::mt19937_64 rng(splitmix64(seed));
    const std::vector<Block> blocks(palette.begin(), palette.begin() + static_cast<std::ptrdiff_t>(n_blocks));

    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        // Random goal configuration: blocks dropped in random order onto the
        // table or onto a random tower top.
        std::vector<Block> order = blocks;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw(rng, i)]);
        WorldState goal_state;
        std::vector<Block> tops;
        for (const auto& b : order) {
            if (tops.empty() || draw(rng, 2) == 0) {
                goal_state.on_table.insert(b);
                tops.push_back(b);
            } else {
                std::size_t t = draw(rng, tops.size());
                goal_state.on[b] = tops[t];
                tops[t] = b;
            }
        }

        Instance inst;
        inst.blocks = blocks;
        for (const auto& [b, below] : goal_state.on) inst.goal.push_back({GoalAtom::Type::On, b, below});
        if (inst.goal.empty())
            for (const auto& b : goal_state.on_table) inst.goal.push_back({GoalAtom::Type::OnTable, b, {}});

        // Actions are reversible, so a forward random walk from the goal
        // configuration yields a start state from which the goal is reachable.
        const std::size_t walk = 2 * min_optimal + draw(rng, 4 * n_blocks + 1);
        WorldState s = goal_state;
        for (std::size_t i = 0; i < walk; ++i) {
            auto moves = legal_actions(s);
            s = apply_action(s, moves[draw(rng, moves.size())]);
        }
        if (s.holding) s = apply_action(s, Action::put_down(*s.holding));
        inst.initial = s;

        auto plan = solve_bfs(inst, 64);
        if (plan && plan->size() >= min_optimal) {
            inst.id = "bw-" + std::to_string(n_blocks) + "-" + std::to_string(seed);
            return inst;
        }
    }
    throw Error(ErrorKind::GenerationExhausted,
                "no " + std::to_string(n_blocks) + "-block instance with optimal length >= " +
                    std::to_string(min_optimal) + " after " + std::to_string(kAttempts) + " attempts");
}

std::vector<Instance> generate_dataset(const DatasetOptions& opt) {
    if (opt.min_blocks > opt.max_blocks) throw Error(ErrorKind::ConfigError, "min_blocks > max_blocks");
    std::vector<Instance> out;
    out.reserve(opt.count);
    const std::size_t width = opt.max_blocks - opt.min_blocks + 1;
    for (std::size_t k = 0; k < opt.count; ++k) {
        const std::uint64_t s = splitmix64(opt.seed * 0x100000001B3ULL + k);
        Instance inst = generate_instance(opt.min_blocks + s % width, s, opt.min_optimal);
        inst.id = "bw-" + std::to_string(opt.seed) + "-" + std::to_string(k);
        out.push_back(std::move(inst));
    }
    return out;
}

}  // namespace planattr::bw
