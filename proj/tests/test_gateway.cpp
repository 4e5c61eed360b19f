#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "conformance.hpp"
#include "planattr/gateway.hpp"

using namespace planattr;
using namespace planattr::lm;

namespace {

std::vector<std::string> vocab6() { return {"a", "b", "c", "pick", " up", "\n"}; }

// Returns whatever the test sets, counting calls and concurrency.
class ScriptedBackend : public Backend {
public:
    std::function<TokenScores(const ScoreRequest&)> on_score;
    std::chrono::milliseconds delay{0};
    std::atomic<int> calls{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};

    std::string generate(const std::string&, std::size_t) override { return "text"; }
    TokenScores score(const ScoreRequest& r) override {
        ++calls;
        const int now = ++in_flight;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(delay);
        --in_flight;
        return on_score(r);
    }
    std::string describe() const override { return "scripted"; }
};

TokenScores whole(const ScoreRequest& r) { return {{{r.target, -0.25, 0, r.target.size()}}}; }

}  // namespace

TEST_SUITE("gateway") {

TEST_CASE("mock lookup gives ln 0.5") {
    auto m = std::make_shared<MockModel>(vocab6(), 3);
    m->set_distribution("ab", {{"c", 0.5}, {"a", 0.25}, {"b", 0.25}});
    const auto s = m->score({"ab", "c"});
    REQUIRE(s.tokens.size() == 1);
    CHECK(s.tokens[0].logprob == std::log(0.5));
    CHECK(s.tokens[0].start == 0);
    CHECK(s.tokens[0].end == 1);
}

TEST_CASE("mock distributions are normalized and seeded") {
    MockModel a(vocab6(), 9), b(vocab6(), 9), c(vocab6(), 10);
    for (const char* ctx : {"", "x", "pick up"}) {
        const auto d = a.distribution(ctx);
        double total = 0;
        for (double p : d) total += p;
        CHECK(std::abs(total - 1.0) <= 1e-12);
        CHECK(d == b.distribution(ctx));
        CHECK(d != c.distribution(ctx));
    }
    CHECK_THROWS_AS(a.set_distribution("q", {{"a", 0.5}}), Error);
    CHECK_THROWS_AS(a.set_distribution("q", {{"zz", 1.0}}), Error);
}

TEST_CASE("greedy generation follows the table") {
    auto m = std::make_shared<MockModel>(vocab6(), 1, "\n");
    m->set_distribution("P:", {{"pick", 0.9}, {"a", 0.1}});
    m->set_distribution("P:pick", {{" up", 0.8}, {"b", 0.2}});
    m->set_distribution("P:pick up", {{"\n", 1.0}});
    Gateway g(m);
    const auto text = g.generate("P:", 10);
    CHECK(text.rfind("pick", 0) == 0);
    CHECK(text == "pick up");
    CHECK(g.generate("P:", 10) == text);
    CHECK(m->generate("P:", 1) == "pick");
}

TEST_CASE("cache is transparent") {
    auto m = std::make_shared<MockModel>(vocab6(), 4);
    Gateway cached(m), plain(m, {4, false, {}});
    const ScoreRequest r{"abc", "pick up\n"};
    const auto first = cached.score(r);
    const auto second = cached.score(r);
    CHECK(first == second);
    CHECK(first == plain.score(r));
    const auto st = cached.stats();
    CHECK(st.score_requests == 2);
    CHECK(st.backend_scores == 1);
    CHECK(st.cache_hits == 1);
}

TEST_CASE("boundary validation") {
    const std::string target = "abc";
    CHECK_NOTHROW(validate_token_scores(target, {{{"ab", -1, 0, 2}, {"c", 0, 2, 3}}}));
    auto violates = [&](TokenScores s) {
        try {
            validate_token_scores(target, s);
        } catch (const Error& e) {
            return e.kind() == ErrorKind::ProtocolViolation;
        }
        return false;
    };
    CHECK(violates({}));
    CHECK(violates({{{"abc", -1, 0, 4}}}));               // past the end
    CHECK(violates({{{"ab", -1, 0, 2}}}));                // short
    CHECK(violates({{{"a", -1, 0, 1}, {"c", -1, 2, 3}}}));  // gap
    CHECK(violates({{{"abc", 0.1, 0, 3}}}));              // positive
    CHECK(violates({{{"abc", std::nan(""), 0, 3}}}));
    CHECK(violates({{{"xyz", -1, 0, 3}}}));               // wrong bytes

    auto backend = std::make_shared<ScriptedBackend>();
    backend->on_score = [](const ScoreRequest& r) { return TokenScores{{{r.target, -1, 0, r.target.size() + 1}}}; };
    Gateway g(backend);
    try {
        g.score({"p", "abc"});
        FAIL("expected ProtocolViolation");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ProtocolViolation);
    }
}

TEST_CASE("batch scoring matches sequential scoring") {
    auto m = std::make_shared<MockModel>(vocab6(), 8);
    Gateway g(m, {3, false, {}});
    const ScoreRequest r{"b", "abc"};
    const std::vector<ScoreRequest> twice = {r, r};
    const auto out = g.batch_score(twice);
    REQUIRE(out.size() == 2);
    CHECK(out[0].value() == out[1].value());
    CHECK(g.batch_score({}).empty());

    std::vector<ScoreRequest> ten;
    for (int k = 0; k < 10; ++k) ten.push_back({std::string(static_cast<std::size_t>(k), 'a'), "pick up\nc"});
    const auto batch = g.batch_score(ten);
    REQUIRE(batch.size() == 10);
    for (std::size_t k = 0; k < 10; ++k) CHECK(batch[k].value() == m->score(ten[k]));
}

TEST_CASE("batch errors stay in place") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->on_score = [](const ScoreRequest& r) {
        if (r.prompt == "bad") throw Error(ErrorKind::BackendRefused, "no");
        return whole(r);
    };
    Gateway g(backend);
    const std::vector<ScoreRequest> reqs = {{"ok", "x"}, {"bad", "x"}, {"ok2", "x"}};
    const auto out = g.batch_score(reqs);
    CHECK(out[0].ok());
    CHECK(!out[1].ok());
    CHECK(out[1].error->kind() == ErrorKind::BackendRefused);
    CHECK(out[2].ok());
    CHECK_THROWS_AS(out[1].value(), Error);
}

TEST_CASE("in-flight calls respect the parallelism bound") {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->on_score = whole;
    backend->delay = std::chrono::milliseconds(15);
    Gateway g(backend, {3, false, {}});
    std::vector<ScoreRequest> reqs;
    for (int k = 0; k < 12; ++k) reqs.push_back({"p" + std::to_string(k), "t"});
    // Two concurrent batches share the same gateway bound.
    std::thread other([&] { g.batch_score(reqs); });
    g.batch_score(reqs);
    other.join();
    CHECK(backend->peak.load() <= 3);
    CHECK(backend->peak.load() >= 2);
    CHECK(g.stats().max_in_flight <= 3);
}

TEST_CASE("transport errors are retried") {
    auto backend = std::make_shared<ScriptedBackend>();
    std::atomic<int> failures{2};
    backend->on_score = [&](const ScoreRequest& r) {
        if (failures-- > 0) throw Error(ErrorKind::TransportError, "flaky");
        return whole(r);
    };
    Gateway g(backend, {1, false, {3, std::chrono::milliseconds(1)}});
    CHECK(g.score({"p", "t"}).tokens.size() == 1);
    CHECK(backend->calls == 3);

    failures = 10;
    try {
        g.score({"p", "u"});
        FAIL("expected TransportError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TransportError);
        CHECK(std::string(e.what()).find("after 3 attempts") != std::string::npos);
    }
}

TEST_CASE("unreachable endpoint surfaces TransportError") {
    auto backend = std::make_shared<HttpBackend>("http://127.0.0.1:9", std::chrono::milliseconds(300));
    Gateway g(backend, {1, true, {2, std::chrono::milliseconds(1)}});
    try {
        g.generate("hello", 4);
        FAIL("expected TransportError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TransportError);
    }
}

TEST_CASE("wire server round trip") {
    auto model = std::make_shared<MockModel>(vocab6(), 21, "\n");
    model->set_distribution("q", {{"pick", 1.0}});
    WireServer server(model);
    const int port = server.start();
    const std::string url = "http://127.0.0.1:" + std::to_string(port);

    HttpBackend http(url);
    CHECK(http.generate("q", 1) == "pick");
    CHECK(http.score({"zz", "pick up\nab"}) == model->score({"zz", "pick up\nab"}));

    httplib::Client client(url);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body) == nlohmann::json{{"status", "ok"}});

    auto empty = client.Post("/v1/score", R"({"prompt":"p","target":""})", "application/json");
    REQUIRE(empty);
    CHECK(empty->status == 422);
    CHECK(nlohmann::json::parse(empty->body)["error"] == "empty_target");

    auto bad = client.Post("/v1/generate", R"({"prompt":"p","max_tokens":0})", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(nlohmann::json::parse(bad->body).contains("error"));

    auto junk = client.Post("/v1/score", "not json", "application/json");
    REQUIRE(junk);
    CHECK(junk->status == 400);

    try {
        http.score({"p", "???"});  // not tokenizable by the mock
        FAIL("expected BackendRefused");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::BackendRefused);
    }
    server.stop();
}

TEST_CASE("conformance suite: in-process and over the wire") {
    auto planner = std::make_shared<PlannerMock>();
    conformance::check_backend(*planner);

    WireServer server(planner);
    const int port = server.start();
    HttpBackend http("http://127.0.0.1:" + std::to_string(port));
    conformance::check_backend(http);
    conformance::check_wire_errors("http://127.0.0.1:" + std::to_string(port));
}

}  // TEST_SUITE
