#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "planattr/blocksworld.hpp"
#include "planattr/error.hpp"

namespace planattr::lm {

struct ScoreRequest {
    std::string prompt;
    std::string target;

    bool operator==(const ScoreRequest&) const = default;
};

struct TokenScore {
    std::string text;
    double logprob = 0.0;
    std::size_t start = 0;  // byte offsets into the UTF-8 target
    std::size_t end = 0;

    bool operator==(const TokenScore&) const = default;
};

struct TokenScores {
    std::vector<TokenScore> tokens;

    bool operator==(const TokenScores&) const = default;
};

// Boundary check applied to everything a backend returns: at least one
// token, spans contiguous and tiling the target, texts matching the target
// bytes, logprobs finite and <= 0. Throws ProtocolViolation.
void validate_token_scores(std::string_view target, const TokenScores& scores);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

class Backend {
public:
    virtual ~Backend() = default;

    virtual std::string generate(const std::string& prompt, std::size_t max_tokens) = 0;
    virtual TokenScores score(const ScoreRequest& request) = 0;
    virtual std::string describe() const = 0;
};

// Table-driven deterministic model over a fixed vocabulary. Conditionals
// come from the override table when the context (prompt + target prefix)
// has an entry, and from a seed-keyed pseudo-random softmax otherwise.
class MockModel : public Backend {
public:
    MockModel(std::vector<std::string> vocabulary, std::uint64_t seed, std::string eos = {});

    // Probabilities must be non-negative, over vocabulary tokens, and sum to
    // 1 within 1e-12. Unlisted tokens get probability 0.
    void set_distribution(std::string_view context, const std::map<std::string, double>& dist);

    std::vector<double> distribution(std::string_view context) const;
    double probability(std::string_view context, std::string_view token) const;

    // Greedy longest-match tokenization; throws BackendRefused if some
    // position matches no vocabulary entry.
    std::vector<std::string> tokenize(std::string_view text) const;

    std::string generate(const std::string& prompt, std::size_t max_tokens) override;
    TokenScores score(const ScoreRequest& request) override;
    std::string describe() const override { return "mock:table"; }

    std::vector<ScoreRequest> score_log() const;
    const std::vector<std::string>& vocabulary() const { return vocab_; }

private:
    std::vector<std::string> vocab_;
    std::uint64_t seed_;
    std::string eos_;
    std::unordered_map<std::uint64_t, std::vector<double>> overrides_;
    mutable std::mutex log_mutex_;
    std::vector<ScoreRequest> log_;
};

// Synthetic planning agent used for end-to-end studies without a real model.
// It plans by solving the question found in the prompt, optionally making
// deterministic mistakes, and scores targets with closed-form conditionals:
// for a token on plan line k,
//   p = base - [question absent] * question_amplitude * question_decay^k
//            - [action definitions absent] * action_defs_effect
//            - sum over absent constraint sentences about the token's action * constraint_effect
//            - sum over absent reference insights about the token's action * memory_effect
// and tokens outside plan lines get filler_prob.
struct PlannerMockConfig {
    std::uint64_t seed = 0;
    double base = 0.9;
    double filler_prob = 0.95;
    double question_amplitude = 0.5;
    double question_decay = 0.7;
    double action_defs_effect = 0.05;
    double constraint_effect = 0.02;
    double memory_effect = 0.01;
    double error_per_step = 0.04;                 // mistake probability per optimal step
    double error_per_step_no_constraints = 0.06;  // same, when constraints are missing
};

class PlannerMock : public Backend {
public:
    explicit PlannerMock(PlannerMockConfig config = {});

    std::string generate(const std::string& prompt, std::size_t max_tokens) override;
    TokenScores score(const ScoreRequest& request) override;
    std::string describe() const override { return "mock:planner"; }

    // Word-level tokenization: leading spaces attach to the following word,
    // newlines and punctuation are single tokens.
    static std::vector<std::pair<std::size_t, std::size_t>> tokenize(std::string_view text);

    // Conditional probability of the target token at [start, end).
    double token_probability(std::string_view prompt, std::string_view target, std::size_t start) const;

    std::size_t score_calls() const { return score_calls_.load(); }
    const PlannerMockConfig& config() const { return cfg_; }

private:
    double probability_at(std::string_view prompt, const std::optional<bw::ParsedPlan>& parsed,
                          std::size_t start) const;

    PlannerMockConfig cfg_;
    std::atomic<std::size_t> score_calls_{0};
};

// Client for the JSON-over-HTTP wire protocol.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(120));

    std::string generate(const std::string& prompt, std::size_t max_tokens) override;
    TokenScores score(const ScoreRequest& request) override;
    std::string describe() const override { return url_; }

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

    std::string url_;
    std::chrono::milliseconds timeout_;
};

// Environment variable consulted when no backend URL flag is given.
inline constexpr const char* kBackendUrlEnv = "PLANATTR_BACKEND_URL";

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
};

struct GatewayOptions {
    std::size_t parallelism = 4;
    bool cache = true;
    RetryPolicy retry;
};

struct GatewayStats {
    std::size_t score_requests = 0;   // requests received by the gateway
    std::size_t backend_scores = 0;   // requests forwarded to the backend
    std::size_t cache_hits = 0;
    std::size_t generate_requests = 0;
    std::size_t max_in_flight = 0;
};

struct ScoreOutcome {
    std::optional<TokenScores> scores;
    std::optional<Error> error;

    bool ok() const { return scores.has_value(); }
    const TokenScores& value() const;  // rethrows the stored error
};

class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

    std::string generate(const std::string& prompt, std::size_t max_tokens);
    TokenScores score(const ScoreRequest& request);

    // Results are positionally aligned with requests; at most `parallelism`
    // backend calls are in flight at any time.
    std::vector<ScoreOutcome> batch_score(std::span<const ScoreRequest> requests);

    GatewayStats stats() const;
    const GatewayOptions& options() const { return options_; }
    Backend& backend() { return *backend_; }

private:
    template <typename F>
    auto with_retries(F&& call);

    class Slot;

    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;

    mutable std::mutex mutex_;
    std::condition_variable slot_cv_;
    std::size_t in_flight_ = 0;
    GatewayStats stats_;
    std::unordered_map<std::uint64_t, std::vector<std::pair<ScoreRequest, TokenScores>>> score_cache_;
    std::map<std::pair<std::string, std::size_t>, std::string> generate_cache_;
};

// Wire protocol encoders shared by the client and the mock server.
nlohmann::json to_json(const TokenScores& scores);
TokenScores token_scores_from_json(const nlohmann::json& j);

// Serves a backend over the wire protocol: POST /v1/generate, POST /v1/score,
// GET /healthz.
class WireServer {
public:
    explicit WireServer(std::shared_ptr<Backend> backend);
    ~WireServer();
    WireServer(const WireServer&) = delete;
    WireServer& operator=(const WireServer&) = delete;

    // Binds and serves on a background thread; port 0 picks a free port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    // Blocks until stop() is called from elsewhere.
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace planattr::lm
