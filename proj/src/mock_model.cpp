#include <algorithm>
#include <cmath>

#include "planattr/gateway.hpp"

namespace planattr::lm {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

MockModel::MockModel(std::vector<std::string> vocabulary, std::uint64_t seed, std::string eos)
    : vocab_(std::move(vocabulary)), seed_(seed), eos_(std::move(eos)) {
    if (vocab_.empty()) throw Error(ErrorKind::ConfigError, "mock vocabulary is empty");
    for (const auto& t : vocab_)
        if (t.empty()) throw Error(ErrorKind::ConfigError, "mock vocabulary contains an empty token");
    if (!eos_.empty() && std::find(vocab_.begin(), vocab_.end(), eos_) == vocab_.end())
        throw Error(ErrorKind::ConfigError, "end-of-sequence token is not in the vocabulary");
}

void MockModel::set_distribution(std::string_view context, const std::map<std::string, double>& dist) {
    std::vector<double> probs(vocab_.size(), 0.0);
    double total = 0.0;
    for (const auto& [token, p] : dist) {
        auto it = std::find(vocab_.begin(), vocab_.end(), token);
        if (it == vocab_.end()) throw Error(ErrorKind::ConfigError, "token '" + token + "' is not in the vocabulary");
        if (!(p >= 0.0)) throw Error(ErrorKind::ConfigError, "negative probability for '" + token + "'");
        probs[static_cast<std::size_t>(it - vocab_.begin())] = p;
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw Error(ErrorKind::ConfigError, "distribution does not sum to 1");
    overrides_[fnv1a64(context)] = std::move(probs);
}

std::vector<double> MockModel::distribution(std::string_view context) const {
    const std::uint64_t h = fnv1a64(context);
    if (auto it = overrides_.find(h); it != overrides_.end()) return it->second;

    std::vector<double> probs(vocab_.size());
    double total = 0.0;
    for (std::size_t k = 0; k < vocab_.size(); ++k) {
        const std::uint64_t r = mix(seed_ ^ mix(h + k));
        const double logit = 4.0 * static_cast<double>(r >> 11) * 0x1.0p-53;
        probs[k] = std::exp(logit);
        total += probs[k];
    }
    for (auto& p : probs) p /= total;
    return probs;
}

double MockModel::probability(std::string_view context, std::string_view token) const {
    auto it = std::find(vocab_.begin(), vocab_.end(), token);
    if (it == vocab_.end()) return 0.0;
    return distribution(context)[static_cast<std::size_t>(it - vocab_.begin())];
}

std::vector<std::string> MockModel::tokenize(std::string_view text) const {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t best = 0;
        const std::string* match = nullptr;
        for (const auto& t : vocab_) {
            if (t.size() > best && text.substr(pos, t.size()) == t) {
                best = t.size();
                match = &t;
            }
        }
        if (!match) throw Error(ErrorKind::BackendRefused, "target is not tokenizable at byte " + std::to_string(pos));
        out.push_back(*match);
        pos += best;
    }
    return out;
}

std::string MockModel::generate(const std::string& prompt, std::size_t max_tokens) {
    std::string context = prompt;
    std::string out;
    for (std::size_t i = 0; i < max_tokens; ++i) {
        const auto probs = distribution(context);
        const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        if (vocab_[best] == eos_) break;
        out += vocab_[best];
        context += vocab_[best];
    }
    return out;
}

TokenScores MockModel::score(const ScoreRequest& request) {
    {
        std::lock_guard lock(log_mutex_);
        log_.push_back(request);
    }
    TokenScores out;
    std::string context = request.prompt;
    std::size_t pos = 0;
    for (const auto& token : tokenize(request.target)) {
        const double p = probability(context, token);
        if (p <= 0.0) throw Error(ErrorKind::BackendRefused, "token '" + token + "' has zero probability");
        out.tokens.push_back({token, std::min(0.0, std::log(p)), pos, pos + token.size()});
        pos += token.size();
        context += token;
    }
    return out;
}

std::vector<ScoreRequest> MockModel::score_log() const {
    std::lock_guard lock(log_mutex_);
    return log_;
}

}  // namespace planattr::lm
