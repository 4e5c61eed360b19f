#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "oracles.hpp"
#include "planattr/harness.hpp"

using namespace planattr;
using namespace planattr::harness;

namespace {

// Answers each planning prompt with the gold plan of the instance whose
// question appears in it, or with a fixed text when `reply` is set.
class GoldBackend : public lm::Backend {
public:
    explicit GoldBackend(const std::vector<bw::Instance>& instances) {
        for (const auto& inst : instances) plans[bw::render_instance(inst).question] = bw::render_plan(*bw::solve_bfs(inst));
    }
    std::map<std::string, std::string> plans;
    std::optional<std::string> reply;

    std::string generate(const std::string& prompt, std::size_t) override {
        if (reply) return *reply;
        for (const auto& [q, plan] : plans)
            if (prompt.find(q) != std::string::npos) return "[Plan]\n" + plan;
        throw Error(ErrorKind::BackendRefused, "unknown question");
    }
    lm::TokenScores score(const lm::ScoreRequest& r) override {
        lm::TokenScores s;
        for (const auto& [b, e] : lm::PlannerMock::tokenize(r.target)) s.tokens.push_back({r.target.substr(b, e - b), -0.5, b, e});
        return s;
    }
    std::string describe() const override { return "gold"; }
};

std::vector<bw::Instance> dataset(std::size_t n, std::uint64_t seed = 2) {
    bw::DatasetOptions o;
    o.count = n;
    o.min_blocks = 3;
    o.max_blocks = 5;
    o.min_optimal = 2;
    o.seed = seed;
    return bw::generate_dataset(o);
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("planattr_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = read_file(e.path());
    return files;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("split sizes and determinism") {
    const auto data = dataset(600);
    const auto s = split_dataset(data, 1);
    CHECK(s.train.size() == 100);
    CHECK(s.validation.size() == 500);
    std::set<std::string> ids;
    for (const auto& i : s.train) ids.insert(i.id);
    for (const auto& i : s.validation) ids.insert(i.id);
    CHECK(ids.size() == 600);
    CHECK(split_dataset(data, 1).validation == s.validation);
    CHECK(split_dataset(data, 2).validation != s.validation);
    try {
        split_dataset(dataset(50), 1);
        FAIL("expected InsufficientData");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientData);
    }
}

TEST_CASE("step bins") {
    CHECK(step_bin(1) == 2);
    CHECK(step_bin(2) == 2);
    CHECK(step_bin(3) == 4);
    CHECK(step_bin(12) == 12);
    CHECK(step_bin(15) == 12);
}

TEST_CASE("gold plans score perfectly, empty replies score zero") {
    const auto data = dataset(60);
    auto backend = std::make_shared<GoldBackend>(data);
    lm::Gateway g(backend);
    const auto good = run_planning_eval(g, data, {});
    CHECK(good.overall.total == 60);
    CHECK(good.overall.correct == 60);
    CHECK(good.bins.size() == 6);
    for (const auto& [bin, stats] : good.bins)
        if (stats.total) CHECK(stats.accuracy() == 1.0);
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(good.records[i].optimal_length == *oracle::optimal_length(data[i]));

    backend->reply = "";
    lm::Gateway g2(backend);
    const auto empty = run_planning_eval(g2, data, {});
    CHECK(empty.overall.correct == 0);
    for (const auto& r : empty.records) CHECK(r.reason == "EmptyPlan");
}

TEST_CASE("failed plans carry the first illegal step") {
    const auto data = dataset(5);
    auto backend = std::make_shared<GoldBackend>(data);
    backend->reply = "[Plan]\nput down the red block\n";
    lm::Gateway g(backend);
    const auto r = run_planning_eval(g, data, {});
    for (const auto& rec : r.records) {
        CHECK(!rec.correct);
        CHECK(rec.reason == "IllegalAction");
        CHECK(rec.failure_index == 1u);
    }
}

TEST_CASE("eval records resume") {
    const auto data = dataset(12);
    const auto dir = scratch("resume");
    auto backend = std::make_shared<GoldBackend>(data);
    EvalOptions o;
    o.records_dir = dir.string();
    o.config_hash = "abc";
    lm::Gateway g(backend);
    const auto first = run_planning_eval(g, data, o);

    backend->reply = "";  // would fail everything if re-queried
    lm::Gateway g2(backend);
    const auto second = run_planning_eval(g2, data, o);
    CHECK(second.overall.correct == first.overall.correct);
    CHECK(g2.stats().generate_requests == 0);
    fs::remove_all(dir);
}

TEST_CASE("ablation table") {
    CHECK(ablation_table({{"Qwen2-7B", 2.4, 3.6}}) == "model,w/,w/o\nQwen2-7B,2.4,3.6\n");
    CHECK(ablation_table({{"m", 80.04, 79.96}}) == "model,w/,w/o\nm,80.0,80.0\n");
}

TEST_CASE("attribution study sampling and a flat model") {
    const auto data = dataset(250);
    const auto sample = sample_instances(data, 200, 1);
    CHECK(sample.size() == 200);
    CHECK(sample_instances(data, 200, 1) == sample);
    CHECK(sample_instances(data, 500, 1).size() == 250);

    auto backend = std::make_shared<GoldBackend>(data);
    lm::Gateway g(backend);
    StudyOptions so;
    so.sample_cap = 20;
    const auto study = run_attribution_study(g, data, so);
    CHECK(study.sampled.size() == 20);
    CHECK(study.failures.empty());
    REQUIRE(study.components.size() == 3);
    for (const auto& [id, score] : study.components) CHECK(score == 0.0);
    for (const auto& [step, point] : study.horizon) CHECK(point.mean == 0.0);
}

TEST_CASE("study records failures without aborting") {
    const auto data = dataset(6);
    auto backend = std::make_shared<GoldBackend>(data);
    backend->reply = "no plan here";
    lm::Gateway g(backend);
    const auto study = run_attribution_study(g, data, {});
    CHECK(study.instances.empty());
    CHECK(study.failures.size() == 6);
    for (const auto& f : study.failures) CHECK(f.kind == ErrorKind::EmptyPlan);
}

TEST_CASE("sft export") {
    const auto data = dataset(100);
    const auto pairs = sft_pairs(data);
    REQUIRE(pairs.size() == 100);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const std::string completion = pairs[i]["completion"];
        REQUIRE(completion.rfind("[Plan]\n", 0) == 0);
        CHECK(bw::validate_plan(data[i], bw::parse_plan_text(completion).plan).ok);
        CHECK(pairs[i]["prompt"].get<std::string>().find(bw::render_instance(data[i]).question) != std::string::npos);
    }

    bw::WorldState s;
    s.on_table = {"A", "B"};
    bw::Instance impossible{"bad", {"A", "B"}, s, {{bw::GoalAtom::Type::On, "A", "B"}, {bw::GoalAtom::Type::On, "B", "A"}}};
    try {
        sft_pairs({impossible});
        FAIL("expected SolverFailure");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::SolverFailure);
    }
}

TEST_CASE("config parsing") {
    const auto c = ExperimentConfig::from_json({{"memory", "reference"}, {"fine_grained", true}});
    CHECK(c.memory == "reference");
    CHECK(c.train_size == 100);
    CHECK(ExperimentConfig::from_json(c.to_json()).hash() == c.hash());
    auto moved = c;
    moved.out_dir = "elsewhere";
    moved.parallelism = 9;
    CHECK(moved.hash() == c.hash());
    moved.seed = 5;
    CHECK(moved.hash() != c.hash());
    CHECK_THROWS_AS(ExperimentConfig::from_json({{"memroy", "bc"}}), Error);
}

TEST_CASE("end-to-end report is deterministic") {
    auto run = [](const std::string& name, std::size_t parallelism, bool fine) {
        ExperimentConfig c;
        c.generate.count = 60;
        c.train_size = 10;
        c.validation_size = 50;
        c.sample_cap = 20;
        c.memory = "reference";
        c.fine_grained = fine;
        c.parallelism = parallelism;
        c.out_dir = scratch(name).string();
        return run_experiment(c);
    };
    const auto a = run("e2e_a", 1, false);
    const auto b = run("e2e_b", 6, false);
    CHECK(snapshot(a.bundle.dir) == snapshot(b.bundle.dir));
    CHECK(a.bundle.omitted.size() == 1);
    CHECK(a.bundle.files == b.bundle.files);

    const auto files = snapshot(a.bundle.dir);
    for (const char* name : {"accuracy_by_steps.csv", "accuracy_by_steps.svg", "ablation.csv", "component_scores.csv",
                             "horizon_curve.csv", "horizon_curve.svg", "run.json", "insights.json"})
        CHECK(files.count(name) == 1);
    CHECK(files.count("pairwise.csv") == 0);
    const std::string& components = files.at("component_scores.csv");
    CHECK(std::count(components.begin(), components.end(), '\n') == 1 + 4);  // header + 4 segments

    const auto manifest = nlohmann::json::parse(files.at("run.json"));
    CHECK(manifest["config_hash"].get<std::string>().size() == 16);
    CHECK(manifest["omitted"].size() == 1);

    const auto fine = run("e2e_fine", 3, true);
    const auto fine_files = snapshot(fine.bundle.dir);
    CHECK(fine.bundle.omitted.empty());
    CHECK(fine_files.count("pairwise.csv") == 1);
    CHECK(fine_files.count("pairwise_by_action.svg") == 1);
    for (const auto& n : {"e2e_a", "e2e_b", "e2e_fine"}) fs::remove_all(fs::temp_directory_path() / ("planattr_" + std::string(n)));
}

}  // TEST_SUITE
