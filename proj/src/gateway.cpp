#include "planattr/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace planattr::lm {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

void validate_token_scores(std::string_view target, const TokenScores& scores) {
    auto fail = [](const std::string& why) { return Error(ErrorKind::ProtocolViolation, why); };
    if (scores.tokens.empty()) throw fail("no tokens returned");
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < scores.tokens.size(); ++i) {
        const auto& t = scores.tokens[i];
        const std::string where = "token " + std::to_string(i);
        if (t.start != cursor) throw fail(where + " does not start where the previous one ended");
        if (t.end <= t.start) throw fail(where + " is empty");
        if (t.end > target.size()) throw fail(where + " ends beyond the target");
        if (target.substr(t.start, t.end - t.start) != t.text) throw fail(where + " text differs from target bytes");
        if (std::isnan(t.logprob) || t.logprob > 0.0) throw fail(where + " has a positive or NaN logprob");
        cursor = t.end;
    }
    if (cursor != target.size()) throw fail("tokens do not cover the whole target");
}

const TokenScores& ScoreOutcome::value() const {
    if (error) throw *error;
    return *scores;
}

class Gateway::Slot {
public:
    explicit Slot(Gateway& g) : g_(g) {
        std::unique_lock lock(g_.mutex_);
        g_.slot_cv_.wait(lock, [&] { return g_.in_flight_ < g_.options_.parallelism; });
        ++g_.in_flight_;
        g_.stats_.max_in_flight = std::max(g_.stats_.max_in_flight, g_.in_flight_);
    }
    ~Slot() {
        {
            std::lock_guard lock(g_.mutex_);
            --g_.in_flight_;
        }
        g_.slot_cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

private:
    Gateway& g_;
};

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(options) {
    if (!backend_) throw Error(ErrorKind::ConfigError, "gateway needs a backend");
    if (options_.parallelism < 1) throw Error(ErrorKind::ConfigError, "parallelism must be >= 1");
    if (options_.retry.attempts < 1) throw Error(ErrorKind::ConfigError, "retry attempts must be >= 1");
}

template <typename F>
auto Gateway::with_retries(F&& call) {
    auto backoff = options_.retry.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            Slot slot(*this);
            return call();
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::TransportError) throw;
            if (attempt >= options_.retry.attempts)
                throw Error(ErrorKind::TransportError,
                            std::string(e.what()) + " (after " + std::to_string(attempt) + " attempts)");
        }
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

std::string Gateway::generate(const std::string& prompt, std::size_t max_tokens) {
    if (max_tokens < 1) throw Error(ErrorKind::ConfigError, "max_tokens must be >= 1");
    const auto key = std::make_pair(prompt, max_tokens);
    {
        std::lock_guard lock(mutex_);
        ++stats_.generate_requests;
        if (options_.cache) {
            auto it = generate_cache_.find(key);
            if (it != generate_cache_.end()) return it->second;
        }
    }
    std::string text = with_retries([&] { return backend_->generate(prompt, max_tokens); });
    if (options_.cache) {
        std::lock_guard lock(mutex_);
        generate_cache_.emplace(key, text);
    }
    return text;
}

TokenScores Gateway::score(const ScoreRequest& request) {
    if (request.target.empty()) throw Error(ErrorKind::ConfigError, "score target must be non-empty");
    const std::uint64_t h = fnv1a64(request.target, fnv1a64(request.prompt) ^ 0x9E3779B97F4A7C15ULL);
    {
        std::lock_guard lock(mutex_);
        ++stats_.score_requests;
        if (options_.cache) {
            auto it = score_cache_.find(h);
            if (it != score_cache_.end()) {
                for (const auto& [req, cached] : it->second) {
                    if (req == request) {
                        ++stats_.cache_hits;
                        return cached;
                    }
                }
            }
        }
        ++stats_.backend_scores;
    }
    TokenScores scores = with_retries([&] { return backend_->score(request); });
    validate_token_scores(request.target, scores);
    if (options_.cache) {
        std::lock_guard lock(mutex_);
        auto& bucket = score_cache_[h];
        const bool present = std::any_of(bucket.begin(), bucket.end(), [&](const auto& e) { return e.first == request; });
        if (!present) bucket.emplace_back(request, scores);
    }
    return scores;
}

std::vector<ScoreOutcome> Gateway::batch_score(std::span<const ScoreRequest> requests) {
    std::vector<ScoreOutcome> out(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
                out[i].scores = score(requests[i]);
            } catch (const Error& e) {
                out[i].error = e;
            } catch (const std::exception& e) {
                out[i].error = Error(ErrorKind::TransportError, e.what());
            }
        }
    };
    const std::size_t workers = std::min(options_.parallelism, requests.size());
    if (workers <= 1) {
        worker();
        return out;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    pool.clear();  // joins
    return out;
}

GatewayStats Gateway::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

nlohmann::json to_json(const TokenScores& scores) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : scores.tokens)
        tokens.push_back({{"text", t.text}, {"logprob", t.logprob}, {"start", t.start}, {"end", t.end}});
    return {{"tokens", tokens}};
}

TokenScores token_scores_from_json(const nlohmann::json& j) {
    TokenScores out;
    try {
        for (const auto& t : j.at("tokens")) {
            TokenScore s;
            s.text = t.at("text").get<std::string>();
            s.logprob = t.at("logprob").get<double>();
            const auto start = t.at("start").get<std::int64_t>();
            const auto end = t.at("end").get<std::int64_t>();
            if (start < 0 || end < 0) throw Error(ErrorKind::ProtocolViolation, "negative token offset");
            s.start = static_cast<std::size_t>(start);
            s.end = static_cast<std::size_t>(end);
            out.tokens.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ProtocolViolation, std::string("malformed score response: ") + e.what());
    }
    return out;
}

}  // namespace planattr::lm
