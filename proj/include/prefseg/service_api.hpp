#pragma once
// HTTP/JSON front end for a live feedback session.
//
//   GET  /api/v1/run/status                   progress and summary metrics
//   GET  /api/v1/session/next?session=<id>    long-polls for the pending comparison
//   POST /api/v1/session/verdict              {"comparison_id", "verdict": "better"|"worse"}
//
// Images and masks travel as base64-encoded binary PGM/PPM. When a token is
// configured every request must carry "Authorization: Bearer <token>".
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "prefseg/feedback_session.hpp"
#include "prefseg/pnm.hpp"

namespace prefseg {

inline constexpr const char* kTokenEnvVar = "PREFSEG_TOKEN";

struct ServiceOptions {
    std::string run_id = "run";
    std::string token;  // empty disables auth
    std::chrono::milliseconds long_poll{30000};

    static ServiceOptions from_env() {
        ServiceOptions o;
        if (const char* t = std::getenv(kTokenEnvVar)) o.token = t;
        return o;
    }
};

inline nlohmann::json comparison_payload(const Comparison& c) {
    return {{"status", "awaiting_verdict"},
            {"comparison_id", c.comparison_id},
            {"image_id", c.image_id},
            {"image_format", c.image && c.image->dim(0) == 3 ? "ppm" : "pgm"},
            {"image", c.image ? httplib::detail::base64_encode(pnm::image_to_bytes(*c.image)) : ""},
            {"mask_before", httplib::detail::base64_encode(pnm::mask_to_bytes(c.before))},
            {"mask_after", httplib::detail::base64_encode(pnm::mask_to_bytes(c.after))},
            {"round", c.round},
            {"step", c.step},
            {"image_index", c.image_index}};
}

class FeedbackService {
public:
    FeedbackService(FeedbackBroker& broker, ServiceOptions options)
        : broker_(broker), options_(std::move(options)) {
        routes();
    }

    FeedbackService(const FeedbackService&) = delete;
    FeedbackService& operator=(const FeedbackService&) = delete;

    ~FeedbackService() { stop(); }

    // Binds and serves on a background thread; port 0 picks a free port.
    int start(const std::string& host, int port) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw IoError("service: cannot bind " + host + ":" + std::to_string(port));
        port_ = bound;
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    int port() const { return port_; }

private:
    static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json; charset=utf-8");
    }

    bool authorized(const httplib::Request& req, httplib::Response& res) const {
        if (options_.token.empty()) return true;
        if (req.get_header_value("Authorization") == "Bearer " + options_.token) return true;
        reply(res, 401, {{"error", "unauthorized"}});
        return false;
    }

    void routes() {
        server_.Get("/api/v1/run/status", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorized(req, res)) return;
            reply(res, 200,
                  {{"run_id", options_.run_id},
                   {"session_id", broker_.session_id()},
                   {"status", to_string(broker_.status())},
                   {"verdicts_recorded", broker_.verdicts_recorded()},
                   {"progress", broker_.progress()}});
        });

        server_.Get("/api/v1/session/next", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorized(req, res)) return;
            if (req.get_param_value("session") != broker_.session_id()) {
                reply(res, 404, {{"error", "unknown session"}});
                return;
            }
            auto wait = options_.long_poll;
            if (req.has_param("wait_ms"))
                wait = std::min(wait, std::chrono::milliseconds(std::atol(req.get_param_value("wait_ms").c_str())));
            const auto c = broker_.next(wait);
            if (c) {
                reply(res, 200, comparison_payload(*c));
            } else {
                reply(res, 200, {{"status", broker_.status() == FeedbackBroker::Status::finished ? "finished" : "idle"}});
            }
        });

        server_.Post("/api/v1/session/verdict", [this](const httplib::Request& req, httplib::Response& res) {
            if (!authorized(req, res)) return;
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception&) {
                reply(res, 400, {{"error", "body is not JSON"}});
                return;
            }
            if (!body.contains("comparison_id") || !body["comparison_id"].is_string() || !body.contains("verdict") ||
                !body["verdict"].is_string()) {
                reply(res, 400, {{"error", "expected {comparison_id, verdict}"}});
                return;
            }
            const auto verdict = parse_verdict(body["verdict"].get<std::string>());
            if (!verdict) {
                reply(res, 400, {{"error", "verdict must be \"better\" or \"worse\""}});
                return;
            }
            const auto id = body["comparison_id"].get<std::string>();
            const auto r = broker_.submit(id, *verdict);
            using Kind = FeedbackBroker::SubmitResult::Kind;
            if (r.kind == Kind::unknown) {
                reply(res, 404, {{"error", "no pending comparison with that id"}, {"comparison_id", id}});
                return;
            }
            reply(res, 200,
                  {{"ack", true},
                   {"comparison_id", id},
                   {"verdict", to_string(r.verdict)},
                   {"duplicate", r.kind == Kind::duplicate}});
        });
    }

    FeedbackBroker& broker_;
    ServiceOptions options_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;
};

}  // namespace prefseg
