#include <doctest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "planattr/blocksworld.hpp"

using namespace planattr;
using namespace planattr::bw;

namespace {

Instance make(std::vector<Block> blocks, WorldState initial, std::vector<GoalAtom> goal) {
    Instance inst{"t", std::move(blocks), std::move(initial), std::move(goal)};
    check_instance(inst);
    return inst;
}

GoalAtom on(Block a, Block b) { return {GoalAtom::Type::On, std::move(a), std::move(b)}; }
GoalAtom on_table(Block a) { return {GoalAtom::Type::OnTable, std::move(a), {}}; }

// C on A; A and B on the table; goal A on B on C.
Instance sussman() {
    WorldState s;
    s.on = {{"C", "A"}};
    s.on_table = {"A", "B"};
    return make({"A", "B", "C"}, s, {on("A", "B"), on("B", "C")});
}

}  // namespace

TEST_SUITE("bw") {

TEST_CASE("legality verdicts") {
    WorldState table;
    table.on_table = {"A"};
    CHECK(is_legal(table, Action::pick_up("A")));

    WorldState stacked;
    stacked.on = {{"A", "B"}};
    stacked.on_table = {"B"};
    CHECK(check_legal(stacked, Action::unstack("B", "A")) == Violation::NotOnTop);

    WorldState holding;
    holding.holding = "A";
    holding.on_table = {"B"};
    CHECK(check_legal(holding, Action::pick_up("B")) == Violation::HandNotEmpty);
    CHECK(check_legal(holding, Action::pick_up("Z")) == Violation::UnknownBlock);
}

TEST_CASE("action effects") {
    WorldState s;
    s.holding = "A";
    s.on_table = {"B"};
    const WorldState after = apply_action(s, Action::stack("A", "B"));
    CHECK(after.hand_empty());
    CHECK(after.on.at("A") == "B");
    CHECK(!after.clear("B"));
    CHECK(s.holding == "A");  // input untouched

    WorldState t;
    t.on_table = {"A"};
    CHECK(apply_action(t, Action::pick_up("A")).holding == "A");

    try {
        apply_action(s, Action::unstack("A", "B"));
        FAIL("expected IllegalAction");
    } catch (const IllegalAction& e) {
        CHECK(e.violation() == Violation::HandNotEmpty);
        CHECK(e.kind() == ErrorKind::IllegalAction);
    }
}

TEST_CASE("sussman instance") {
    const Instance inst = sussman();
    const Plan good = {Action::unstack("C", "A"), Action::put_down("C"), Action::pick_up("B"),
                       Action::stack("B", "C"),   Action::pick_up("A"),  Action::stack("A", "B")};
    const auto report = validate_plan(inst, good);
    CHECK(report.ok);
    CHECK(oracle::plan_reaches_goal(inst, good));

    const auto bad = validate_plan(inst, {Action::pick_up("A")});
    CHECK(!bad.ok);
    CHECK(bad.failure_index == 1u);
    CHECK(bad.violation == Violation::NotClear);

    const auto plan = solve_bfs(inst);
    REQUIRE(plan);
    CHECK(plan->size() == 6);
    CHECK(oracle::optimal_length(inst) == 6u);
}

TEST_CASE("empty plan and trivial goals") {
    WorldState s;
    s.on = {{"A", "B"}};
    s.on_table = {"B"};
    const Instance done = make({"A", "B"}, s, {on("A", "B")});
    CHECK(validate_plan(done, {}).ok);
    CHECK(solve_bfs(done)->empty());

    WorldState flat;
    flat.on_table = {"A", "B"};
    const Instance two = make({"A", "B"}, flat, {on("A", "B")});
    CHECK(!validate_plan(two, {}).ok);
    const auto plan = solve_bfs(two);
    REQUIRE(plan);
    CHECK(*plan == Plan{Action::pick_up("A"), Action::stack("A", "B")});
    CHECK(solve_bfs(two, 1) == std::nullopt);
}

TEST_CASE("generator is deterministic and solvable") {
    CHECK(generate_instance(3, 1, 2) == generate_instance(3, 1, 2));
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto inst = generate_instance(2 + seed % 4, seed, 2);
        const auto plan = solve_bfs(inst);
        REQUIRE(plan);
        CHECK(plan->size() >= 2);
        CHECK(validate_plan(inst, *plan).ok);
        CHECK(oracle::plan_reaches_goal(inst, *plan));
    }
}

TEST_CASE("two blocks never need nine steps") {
    // All five 2-block states against every satisfiable goal set.
    std::vector<WorldState> states(5);
    states[0].on_table = {"blue", "red"};
    states[1].on = {{"red", "blue"}};
    states[1].on_table = {"blue"};
    states[2].on = {{"blue", "red"}};
    states[2].on_table = {"red"};
    states[3].holding = "red";
    states[3].on_table = {"blue"};
    states[4].holding = "blue";
    states[4].on_table = {"red"};
    const std::vector<GoalAtom> atoms = {on("red", "blue"), on("blue", "red"), on_table("red"), on_table("blue")};

    std::size_t worst = 0;
    for (const auto& s : states) {
        for (unsigned mask = 1; mask < 16; ++mask) {
            Instance inst{"two", {"blue", "red"}, s, {}};
            for (unsigned k = 0; k < 4; ++k)
                if (mask & (1u << k)) inst.goal.push_back(atoms[k]);
            if (const auto n = oracle::optimal_length(inst, 12)) worst = std::max(worst, *n);
        }
    }
    CHECK(worst < 9);
    try {
        generate_instance(2, 7, 9);
        FAIL("expected GenerationExhausted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::GenerationExhausted);
    }
}

TEST_CASE("plan text parsing") {
    const auto p = parse_plan_text("[Plan]\n1. pick up the red block\n2. stack the red block on top of the blue block");
    CHECK(p.plan == Plan{Action::pick_up("red"), Action::stack("red", "blue")});
    CHECK(p.steps.size() == 2);

    CHECK(parse_plan_text("unstack the orange block from on top of the yellow block").plan ==
          Plan{Action::unstack("orange", "yellow")});

    CHECK_THROWS_AS(parse_plan_text("I cannot solve this."), Error);
    try {
        parse_plan_text("I cannot solve this.");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmptyPlan);
    }

    const auto loose = parse_plan_text("Step 1: Pick Up the Red block.\nthinking...\n2) unstack the red block from the blue block\n");
    CHECK(loose.plan == Plan{Action::pick_up("Red"), Action::unstack("red", "blue")});
    CHECK(loose.skipped_lines == 1);
}

TEST_CASE("parser inverts the canonical renderer") {
    std::mt19937_64 rng(11);
    const auto& palette = block_palette();
    for (int trial = 0; trial < 200; ++trial) {
        Plan plan;
        const std::size_t len = 1 + rng() % 12;
        for (std::size_t k = 0; k < len; ++k) {
            const auto& a = palette[rng() % palette.size()];
            const auto& b = palette[rng() % palette.size()];
            switch (rng() % 4) {
                case 0: plan.push_back(Action::pick_up(a)); break;
                case 1: plan.push_back(Action::put_down(a)); break;
                case 2: plan.push_back(Action::stack(a, b)); break;
                default: plan.push_back(Action::unstack(a, b)); break;
            }
        }
        const std::string text = render_plan(plan);
        const auto parsed = parse_plan_text(text);
        REQUIRE(parsed.plan == plan);
        for (const auto& step : parsed.steps) CHECK(step.line.end <= text.size());
    }
}

TEST_CASE("instance rendering round trip") {
    const auto inst = sussman();
    const auto r = render_instance(inst);
    CHECK(r.question == render_instance(inst).question);
    CHECK(r.question.find("the B block is clear") != std::string::npos);
    CHECK(r.question.find("the hand is empty") != std::string::npos);

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto g = generate_instance(2 + seed % 5, 1000 + seed, 1);
        const std::string q = render_instance(g).question;
        const Instance back = parse_question(q);
        CHECK(render_instance(back).question == q);
        CHECK(back.initial == g.initial);
        CHECK(back.goal.size() == g.goal.size());
    }
}

TEST_CASE("instance invariants are enforced") {
    Instance inst;
    inst.blocks = {"A", "B"};
    inst.initial.on = {{"A", "B"}, {"B", "A"}};
    CHECK_THROWS_AS(check_instance(inst), Error);

    inst.initial = {};
    inst.initial.on_table = {"A"};  // B is nowhere
    CHECK_THROWS_AS(check_instance(inst), Error);

    inst.initial.on_table = {"A", "B"};
    inst.goal = {on("A", "Z")};
    CHECK_THROWS_AS(check_instance(inst), Error);
}

TEST_CASE("dataset files round trip") {
    DatasetOptions o;
    o.count = 25;
    o.min_blocks = 3;
    o.max_blocks = 5;
    o.seed = 3;
    const auto data = generate_dataset(o);
    CHECK(data.size() == 25);
    const auto path = (std::filesystem::temp_directory_path() / "planattr_bw_dataset.jsonl").string();
    save_dataset(path, data);
    CHECK(load_dataset(path) == data);
    CHECK(instance_from_json(to_json(data[0])) == data[0]);
    std::filesystem::remove(path);
}

TEST_CASE("random walks preserve state invariants") {
    std::mt19937_64 rng(5);
    for (int walk = 0; walk < 30; ++walk) {
        Instance inst = generate_instance(3 + walk % 4, 500 + walk, 1);
        WorldState s = inst.initial;
        const auto names = s.blocks();
        for (int step = 0; step < 60; ++step) {
            std::vector<Action> legal;
            for (const auto& a : names) {
                for (auto act : {Action::pick_up(a), Action::put_down(a)})
                    if (is_legal(s, act)) legal.push_back(act);
                for (const auto& b : names) {
                    if (a == b) continue;
                    for (auto act : {Action::stack(a, b), Action::unstack(a, b)})
                        if (is_legal(s, act)) legal.push_back(act);
                }
            }
            REQUIRE(!legal.empty());
            s = apply_action(s, legal[rng() % legal.size()]);
            Instance probe = inst;
            probe.initial = s;
            CHECK_NOTHROW(check_instance(probe));
        }
    }
}

}  // TEST_SUITE
