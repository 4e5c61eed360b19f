#include <thread>

#include <httplib.h>

#include "planattr/gateway.hpp"

namespace planattr::lm {

HttpBackend::HttpBackend(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), timeout_(timeout) {
    while (!url_.empty() && url_.back() == '/') url_.pop_back();
    if (url_.empty()) throw Error(ErrorKind::ConfigError, "empty backend URL");
}

nlohmann::json HttpBackend::post(const std::string& path, const nlohmann::json& body) const {
    httplib::Client client(url_);
    if (!client.is_valid()) throw Error(ErrorKind::ConfigError, "invalid backend URL '" + url_ + "'");
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw Error(ErrorKind::TransportError, url_ + path + ": " + httplib::to_string(res.error()));

    nlohmann::json reply;
    try {
        reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        if (res->status >= 500) throw Error(ErrorKind::TransportError, url_ + path + ": HTTP " + std::to_string(res->status));
        throw Error(ErrorKind::ProtocolViolation, url_ + path + ": response is not JSON");
    }
    if (res->status >= 500)
        throw Error(ErrorKind::TransportError, url_ + path + ": HTTP " + std::to_string(res->status));
    if (res->status >= 400) {
        const std::string why = reply.is_object() && reply.contains("error") ? reply["error"].dump() : res->body;
        throw Error(ErrorKind::BackendRefused, url_ + path + ": HTTP " + std::to_string(res->status) + " " + why);
    }
    return reply;
}

std::string HttpBackend::generate(const std::string& prompt, std::size_t max_tokens) {
    const auto reply = post("/v1/generate", {{"prompt", prompt}, {"max_tokens", max_tokens}});
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
        throw Error(ErrorKind::ProtocolViolation, "generate response lacks a text field");
    return reply["text"].get<std::string>();
}

TokenScores HttpBackend::score(const ScoreRequest& request) {
    return token_scores_from_json(post("/v1/score", {{"prompt", request.prompt}, {"target", request.target}}));
}

struct WireServer::Impl {
    std::shared_ptr<Backend> backend;
    httplib::Server server;
    std::thread thread;
};

namespace {

void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

template <typename Handler>
void guarded(httplib::Response& res, Handler&& handler) {
    try {
        handler();
    } catch (const nlohmann::json::exception& e) {
        reply_json(res, 400, {{"error", std::string("bad_request: ") + e.what()}});
    } catch (const Error& e) {
        const int status = e.kind() == ErrorKind::BackendRefused || e.kind() == ErrorKind::ConfigError ? 400 : 500;
        reply_json(res, status, {{"error", e.what()}});
    } catch (const std::exception& e) {
        reply_json(res, 500, {{"error", e.what()}});
    }
}

}  // namespace

WireServer::WireServer(std::shared_ptr<Backend> backend) : impl_(std::make_unique<Impl>()) {
    impl_->backend = std::move(backend);
    auto& backend_ref = impl_->backend;

    impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        reply_json(res, 200, {{"status", "ok"}});
    });
    impl_->server.Post("/v1/generate", [&backend_ref](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = nlohmann::json::parse(req.body);
            const auto prompt = body.at("prompt").get<std::string>();
            const auto max_tokens = body.at("max_tokens").get<std::int64_t>();
            if (max_tokens < 1) {
                reply_json(res, 400, {{"error", "max_tokens must be >= 1"}});
                return;
            }
            reply_json(res, 200, {{"text", backend_ref->generate(prompt, static_cast<std::size_t>(max_tokens))}});
        });
    });
    impl_->server.Post("/v1/score", [&backend_ref](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = nlohmann::json::parse(req.body);
            ScoreRequest request{body.at("prompt").get<std::string>(), body.at("target").get<std::string>()};
            if (request.target.empty()) {
                reply_json(res, 422, {{"error", "empty_target"}});
                return;
            }
            const auto scores = backend_ref->score(request);
            validate_token_scores(request.target, scores);
            reply_json(res, 200, to_json(scores));
        });
    });
}

WireServer::~WireServer() { stop(); }

int WireServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound <= 0) throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void WireServer::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port))
        throw Error(ErrorKind::IoError, "cannot serve on " + host + ":" + std::to_string(port));
}

void WireServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace planattr::lm
