#include <doctest.h>

#include <cmath>
#include <random>

#include "table_fixture.hpp"
#include "planattr/attribution.hpp"
#include "planattr/blocksworld.hpp"
#include "planattr/memory.hpp"

using namespace planattr;
using namespace planattr::attr;
using prompt::Component;

namespace {

// Wraps fixed token scores so attribution sees exactly the numbers we choose.
class FixedBackend : public lm::Backend {
public:
    std::map<std::string, lm::TokenScores> by_prompt;
    std::string generate(const std::string&, std::size_t) override { return {}; }
    lm::TokenScores score(const lm::ScoreRequest& r) override { return by_prompt.at(r.prompt); }
    std::string describe() const override { return "fixed"; }
};

AttributionMatrix hand_matrix(std::vector<SegmentId> ids, std::vector<std::size_t> steps,
                              std::vector<std::vector<double>> values, std::vector<std::string> labels = {}) {
    AttributionMatrix m;
    m.segment_ids = std::move(ids);
    for (std::size_t j = 0; j < steps.size(); ++j) m.tokens.push_back({j, "t" + std::to_string(j), {j, j + 1}, steps[j]});
    m.values = std::move(values);
    m.step_labels = std::move(labels);
    return m;
}

SegmentId coarse(Component c) { return SegmentId::coarse(c); }

}  // namespace

TEST_SUITE("attribution") {

TEST_CASE("matrix equals the probability difference") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto f = table::make(seed, seed % 4 == 0);
        lm::Gateway g(f.model);
        const auto m = attribution_matrix(g, f.prompt, f.target, f.mask);
        REQUIRE(m.rows() == 3);
        REQUIRE(m.cols() == 5);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(m.values[i][j] - f.expected(i, j)) <= 1e-9);
        if (seed % 4 == 0)
            for (double v : m.values[1]) CHECK(v == 0.0);
    }
}

TEST_CASE("log space uses log differences") {
    const auto f = table::make(5);
    lm::Gateway g(f.model);
    const auto m = attribution_matrix(g, f.prompt, f.target, f.mask, Space::LogProb);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(std::abs(m.values[i][j] - (std::log(f.conditional[0][j]) - std::log(f.conditional[i + 1][j]))) <=
                  1e-9);
}

TEST_CASE("a worked cell: 0.9 drops to 0.4") {
    auto backend = std::make_shared<FixedBackend>();
    prompt::SegmentedPrompt p({{coarse(Component::Question), "Q", {}}}, {"", ""});
    backend->by_prompt["Q"] = {{{"pick", std::log(0.9), 0, 4}}};
    backend->by_prompt[""] = {{{"pick", std::log(0.4), 0, 4}}};
    lm::Gateway g(backend);
    MeaningfulMask mask{{{0, 4}}, {true}, {1}, {"PickUp"}};
    const auto m = attribution_matrix(g, p, "pick", mask);
    CHECK(std::abs(m.values[0][0] - 0.5) <= 1e-12);
}

TEST_CASE("one scoring request per segment plus the baseline") {
    const auto f = table::make(7);
    lm::Gateway g(f.model, {2, false, {}});
    attribution_matrix(g, f.prompt, f.target, f.mask);
    const auto log = f.model->score_log();
    CHECK(log.size() == f.prompt.segments().size() + 1);
    CHECK(g.stats().score_requests == 4);
}

TEST_CASE("blocksworld mask keeps verbs and names") {
    const std::string text = "1. pick up the red block";
    const auto plan = bw::parse_plan_text(text);
    lm::TokenScores scores;
    for (const auto& [b, e] : lm::PlannerMock::tokenize(text))
        scores.tokens.push_back({text.substr(b, e - b), -0.1, b, e});
    const auto mask = build_mask(scores, plan, text);
    std::vector<std::string> kept, dropped;
    for (std::size_t j = 0; j < mask.tokens.size(); ++j) {
        const std::string piece = text.substr(mask.tokens[j].begin, mask.tokens[j].size());
        (mask.keep[j] ? kept : dropped).push_back(piece);
        if (mask.keep[j]) CHECK(mask.step_of[j] == 1);
        else CHECK(mask.step_of[j] == 0);
    }
    CHECK(kept == std::vector<std::string>{" pick", " up", " red", " block"});
    CHECK(std::find(dropped.begin(), dropped.end(), " the") != dropped.end());
    CHECK(std::find(dropped.begin(), dropped.end(), "1") != dropped.end());
    CHECK(mask.step_labels == std::vector<std::string>{"PickUp"});
}

TEST_CASE("mask steps stay inside the plan") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto inst = bw::generate_instance(3 + seed % 3, seed, 2);
        const std::string text = "[Plan]\n" + bw::render_plan(*bw::solve_bfs(inst));
        const auto plan = bw::parse_plan_text(text);
        lm::TokenScores scores;
        for (const auto& [b, e] : lm::PlannerMock::tokenize(text)) scores.tokens.push_back({text.substr(b, e - b), -1, b, e});
        const auto mask = build_mask(scores, plan, text);
        CHECK(mask.kept() > 0);
        for (std::size_t j = 0; j < mask.tokens.size(); ++j) {
            if (!mask.keep[j]) continue;
            CHECK(mask.step_of[j] >= 1);
            CHECK(mask.step_of[j] <= plan.steps.size());
        }
    }
}

TEST_CASE("mismatched tokenization is rejected") {
    const std::string text = "pick up the red block";
    const auto plan = bw::parse_plan_text(text);
    try {
        build_mask({{{"pick", -1, 0, 4}}}, plan, text);
        FAIL("expected MaskMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MaskMismatch);
    }

    auto f = table::make(3);
    f.mask.tokens[1].end += 1;
    f.mask.tokens[2].begin += 1;
    lm::Gateway g(f.model);
    try {
        attribution_matrix(g, f.prompt, f.target, f.mask);
        FAIL("expected MaskMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MaskMismatch);
    }
}

TEST_CASE("json plan mask") {
    const std::string text = R"([{"day": 1, "city": "Rome", "hotel": "-"}, {"day": 2, "city": "Milan"}])";
    const auto spans = json_value_spans(text);
    std::vector<std::pair<std::string, std::size_t>> got;
    for (const auto& [s, element] : spans) got.emplace_back(text.substr(s.begin, s.size()), element);
    const std::vector<std::pair<std::string, std::size_t>> want = {{"1", 1}, {"Rome", 1}, {"2", 2}, {"Milan", 2}};
    CHECK(got == want);

    lm::TokenScores scores;
    for (const auto& [b, e] : lm::PlannerMock::tokenize(text)) scores.tokens.push_back({text.substr(b, e - b), -1, b, e});
    const auto mask = build_json_mask(scores, text);
    CHECK(mask.kept() == 4);
    CHECK(mask.step_labels == std::vector<std::string>{"Day 1", "Day 2"});
    for (std::size_t j = 0; j < mask.tokens.size(); ++j) {
        const std::string piece = text.substr(mask.tokens[j].begin, mask.tokens[j].size());
        if (piece == "day" || piece == "city" || piece == "hotel" || piece == "-") CHECK(!mask.keep[j]);
    }
}

TEST_CASE("normalization") {
    const auto whole = normalize(std::vector<std::vector<double>>{{0.2, -0.4}}, Dimension::Whole);
    CHECK(whole.values == std::vector<std::vector<double>>{{0.5, -1.0}});

    const std::vector<std::vector<double>> zero = {{0.0, 0.0}, {0.0, 0.0}};
    CHECK(normalize(zero, Dimension::Whole).values == zero);
    CHECK(normalize(zero, Dimension::PerRow).values == zero);

    const auto rows = normalize(std::vector<std::vector<double>>{{0.1, 0.2}, {0.0, 0.0}, {-3.0, 1.5}}, Dimension::PerRow);
    CHECK(rows.values == std::vector<std::vector<double>>{{0.5, 1.0}, {0.0, 0.0}, {-1.0, 0.5}});

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<double>> v(1 + rng() % 5, std::vector<double>(1 + rng() % 7));
        for (auto& row : v)
            for (auto& x : row) x = u(rng);
        for (auto dim : {Dimension::Whole, Dimension::PerRow}) {
            const auto n = normalize(v, dim).values;
            double top = 0;
            for (const auto& row : n)
                for (double x : row) top = std::max(top, std::abs(x));
            CHECK(std::abs(top - 1.0) <= 1e-12);
            for (double a : {0.5, 3.0}) {
                auto scaled = v;
                for (auto& row : scaled)
                    for (auto& x : row) x *= a;
                const auto ns = normalize(scaled, dim).values;
                for (std::size_t i = 0; i < n.size(); ++i)
                    for (std::size_t j = 0; j < n[i].size(); ++j) CHECK(std::abs(ns[i][j] - n[i][j]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("component score") {
    const auto m = hand_matrix({coarse(Component::Constraints), coarse(Component::Question)}, {1, 1},
                               {{0.5, 1.0}, {-0.25, 0.0}});
    const auto scores = component_scores(m);
    REQUIRE(scores.size() == 2);
    CHECK(scores[0].first == coarse(Component::Constraints));
    CHECK(std::abs(scores[0].second - 75.0) <= 1e-12);
    CHECK(std::abs(scores[1].second + 12.5) <= 1e-12);
}

TEST_CASE("horizon curve") {
    const auto q = coarse(Component::Question);
    const auto one = hand_matrix({q}, {1, 1}, {{0.2, 0.4}});
    const auto c1 = horizon_curve(one, q);
    CHECK(c1.mean.size() == 1);
    CHECK(std::abs(c1.mean.at(1) - 0.3) <= 1e-12);

    const auto gap = hand_matrix({q}, {1, 1, 3, 3, 0}, {{0.9, 0.7, 0.2, 0.2, 5.0}});
    const auto c2 = horizon_curve(gap, q);
    CHECK(c2.mean.count(2) == 0);
    CHECK(c2.mean.count(0) == 0);
    CHECK(c2.tokens.at(1) == 2);
    CHECK(c2.mean.at(1) > c2.mean.at(3));
    CHECK_THROWS_AS(horizon_curve(gap, coarse(Component::Constraints)), Error);
}

TEST_CASE("pairwise matrix shape") {
    using prompt::SegmentId;
    std::vector<SegmentId> ids = {coarse(Component::Question)};
    for (std::size_t k = 0; k < 4; ++k) ids.push_back(SegmentId::child(Component::Constraints, k));
    std::vector<std::vector<double>> v(5, std::vector<double>{1, 2, 3, 4, 5});
    const auto m = hand_matrix(ids, {1, 1, 2, 3, 3}, v, {"PickUp", "Stack", "PutDown"});
    const auto pw = pairwise_matrix(m);
    CHECK(pw.rows.size() == 4);
    REQUIRE(pw.cols.size() == 3);
    CHECK(pw.cols[1] == ActionOccurrence{2, "Stack"});
    CHECK(pw.values[0] == std::vector<double>{1.5, 3.0, 4.5});

    const auto flat = hand_matrix({coarse(Component::Question)}, {1}, {{1}});
    try {
        pairwise_matrix(flat);
        FAIL("expected NotFineGrained");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotFineGrained);
    }
}

TEST_CASE("a stack-only constraint touches only stack steps") {
    const std::string sentence = "I can only stack a block on top of another block if I am holding the block being stacked.";
    bw::WorldState s;
    s.on = {{"C", "A"}};
    s.on_table = {"A", "B"};
    bw::Instance inst{"sussman", {"A", "B", "C"}, s, {{bw::GoalAtom::Type::On, "A", "B"}, {bw::GoalAtom::Type::On, "B", "C"}}};
    const auto p = prompt::assemble(prompt::blocksworld_inputs(inst), true);
    const std::string text = "[Plan]\n" + bw::render_plan(*bw::solve_bfs(inst));
    lm::Gateway g(std::make_shared<lm::PlannerMock>());
    const auto pa = attribute_blocksworld_plan(g, p, text);
    const auto pw = pairwise_matrix(pa.matrix);

    std::optional<std::size_t> row;
    for (std::size_t i = 0; i < pw.rows.size(); ++i)
        if (p.find(pw.rows[i])->text == sentence) row = i;
    REQUIRE(row);
    REQUIRE(pw.cols.size() == 6);
    for (std::size_t c = 0; c < pw.cols.size(); ++c) {
        CAPTURE(pw.cols[c].action);
        if (pw.cols[c].action == "Stack") CHECK(pw.values[*row][c] > 0.0);
        else CHECK(std::abs(pw.values[*row][c]) <= 1e-12);
    }
}

TEST_CASE("word rollup averages tokens") {
    const auto f = table::make(11);
    lm::Gateway g(f.model);
    const auto m = attribution_matrix(g, f.prompt, f.target, f.mask);
    const auto w = word_rollup(m, f.target);
    CHECK(w.words == std::vector<std::string>{"pick", "up", "the", "red", "block"});
    CHECK(w.values[0][3] == m.values[0][3]);
}

TEST_CASE("csv output") {
    CHECK(format_number(0.0) == "0");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(0.5) == "0.5");
    CHECK(csv_field("a\"b\nc") == "\"a\"\"b\\nc\"");
    const auto m = hand_matrix({coarse(Component::Question)}, {1, 2}, {{0.2, -0.4}});
    CHECK(matrix_csv(m) == "token,step,Question\n\"t0\",1,0.2\n\"t1\",2,-0.4\n");
    CHECK(normalized_csv(m, Dimension::Whole) == "token,step,Question\n\"t0\",1,0.5\n\"t1\",2,-1\n");
}

}  // TEST_SUITE
