#pragma once

// Protocol conformance checks shared by the in-process mock, the mock wire
// server, and any external scoring server.

#include <doctest.h>

#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "planattr/gateway.hpp"

namespace conformance {

inline const std::vector<planattr::lm::ScoreRequest>& probes() {
    static const std::vector<planattr::lm::ScoreRequest> p = {
        {"Plan:", "[Plan]\npick up the red block\nstack the red block on top of the blue block\n"},
        {"", "x"},
        {"Prompt with unicode: caf\xc3\xa9", "na\xc3\xafve caf\xc3\xa9 \xe2\x86\x92 done."},
        {"p", "  leading spaces and\ttabs\n\n"},
    };
    return p;
}

inline void check_backend(planattr::lm::Backend& backend) {
    for (const auto& r : probes()) {
        CAPTURE(r.target);
        const auto a = backend.score(r);
        CHECK_NOTHROW(planattr::lm::validate_token_scores(r.target, a));
        CHECK(backend.score(r) == a);  // deterministic
        for (const auto& t : a.tokens) CHECK(t.logprob <= 0.0);
    }
    const std::string g = backend.generate("As initial conditions I have that, the red block is clear.", 8);
    CHECK(backend.generate("As initial conditions I have that, the red block is clear.", 8) == g);
}

inline void check_wire_errors(const std::string& url) {
    httplib::Client client(url);
    auto health = client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);

    auto empty = client.Post("/v1/score", R"({"prompt":"p","target":""})", "application/json");
    REQUIRE(empty);
    CHECK(empty->status == 422);
    CHECK(nlohmann::json::parse(empty->body).value("error", "") == "empty_target");

    auto missing = client.Post("/v1/score", R"({"prompt":"p"})", "application/json");
    REQUIRE(missing);
    CHECK(missing->status >= 400);
    CHECK(missing->status < 500);
    CHECK(nlohmann::json::parse(missing->body).contains("error"));
}

}  // namespace conformance
